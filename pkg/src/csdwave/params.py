"""Model constants (mV / ms / mM / uA/cm^2 unit convention)."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

_POSITIVE = (
    "R", "F", "T", "C_m", "C_m_A", "phi_n", "phi_hp", "g_Na", "g_NaP", "g_K", "g_L",
    "S_N", "S_A", "Omega_n", "Omega_a", "alpha0", "D_K", "D_Na", "dx", "P_K", "P_Na",
    "K_K", "K_Na", "K_KA", "K_NaA", "Na_i", "Na_iA", "Na_e", "K_iA", "K_e0", "K_i0",
)


@dataclass(frozen=True)
class ParameterSet:
    """Physical constants of the neuron-astrocyte model.

    Defaults reproduce the published parameter table.  ``h_p`` is the frozen
    inactivation of the persistent Na+ current used by the reduced model and
    ``nap_gate_power`` the exponent of its activation gate.
    """

    R: float = 8.31            # J/(mol K)
    F: float = 96485.0         # C/mol
    T: float = 310.0           # K
    C_m: float = 1.0           # uF/cm^2
    C_m_A: float = 1.0
    phi_n: float = 0.8         # 1/ms
    phi_hp: float = 0.05
    g_Na: float = 50.0         # mS/cm^2
    g_NaP: float = 0.8
    g_K: float = 15.0
    g_L: float = 0.5
    E_L: float = -70.0         # mV
    S_N: float = 922.0         # um^2
    S_A: float = 1600.0
    Omega_n: float = 2160.0    # um^3
    Omega_a: float = 2000.0
    alpha0: float = 0.2
    D_K: float = 1.96e-5       # cm^2/s
    D_Na: float = 1.33e-5
    dx: float = 0.044          # mm
    P_K: float = 1e-6          # cm/s
    P_Na: float = 1.5e-8
    rho_N: float = 5.0         # uA/cm^2
    rho_A: float = 5.0
    V_m: float = -34.0
    theta_m: float = 5.0
    V_n: float = -55.0
    theta_n: float = 14.0
    V_mp: float = -40.0
    theta_mp: float = 6.0
    V_hp: float = -48.0
    theta_hp: float = -6.0
    K_K: float = 2.0           # mM, pump half-saturations
    K_Na: float = 7.7
    K_KA: float = 2.0
    K_NaA: float = 7.7
    Na_i: float = 3.5          # mM, frozen concentrations
    Na_iA: float = 3.5
    Na_e: float = 135.0
    K_iA: float = 135.0
    K_e0: float = 3.5          # initial [K+]_e fixing the total K+ content
    K_i0: float = 135.0
    h_p: float = 0.9751
    nap_gate_power: float = 1.0

    def __post_init__(self):
        for name in _POSITIVE:
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"parameter {name} must be positive, got {v}")

    @property
    def Omega_e(self) -> float:
        return self.alpha0 * (self.Omega_n + self.Omega_a)

    @property
    def K_tot(self) -> float:
        """Total K+ content (mM um^3) at the reference rest state."""
        return self.Omega_e * self.K_e0 + self.Omega_n * self.K_i0 + self.Omega_a * self.K_iA

    @property
    def RTF(self) -> float:
        """Thermal voltage RT/F in mV."""
        return 1000.0 * self.R * self.T / self.F

    @property
    def D_K_mm2_ms(self) -> float:
        # cm^2/s -> mm^2/ms
        return self.D_K * 100.0 / 1000.0

    @property
    def D_Na_mm2_ms(self) -> float:
        return self.D_Na * 100.0 / 1000.0

    def replace(self, **changes) -> "ParameterSet":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def dumps(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.to_dict().items())

    def digest(self) -> str:
        """SHA-256 of the serialized values, for provenance of outputs."""
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ParameterSet":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'name = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"line {lineno}: unknown parameter {key!r}")
            values[key] = float(val)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ParameterSet":
        return cls.loads(Path(path).read_text())


DEFAULT = ParameterSet()
