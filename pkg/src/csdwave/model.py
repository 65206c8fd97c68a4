"""Biophysics of the neuron-astrocyte model and the traveling-wave vector field.

Every function accepts floats, numpy arrays or :class:`~csdwave.taylor.Jet`
objects, so the same code yields scalar values, vectorized network
right-hand sides and exact Taylor coefficients.

Conventions: voltages in mV, time in ms, concentrations in mM, currents in
uA/cm^2.  Wave-ODE variables are ``x`` (neuron voltage), ``y`` (astrocyte
voltage), ``z`` (extracellular K+) and ``w = dz/dxi``.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .params import DEFAULT, ParameterSet
from .taylor import Jet, exp, ghk_kernel, ghk_kernel_derivative, log, sigmoid, value_of

GATES = ("m", "n", "mp", "hp")


def _gate_constants(kind: str, p: ParameterSet) -> tuple[float, float]:
    try:
        return {
            "m": (p.V_m, p.theta_m),
            "n": (p.V_n, p.theta_n),
            "mp": (p.V_mp, p.theta_mp),
            "hp": (p.V_hp, p.theta_hp),
        }[kind]
    except KeyError:
        raise ValueError(f"unknown gate {kind!r}; expected one of {GATES}") from None


def gating_inf(V, kind: str, p: ParameterSet = DEFAULT):
    """Steady-state gate opening ``1 / (1 + exp(-(V - V_X)/theta_X))``."""
    Vx, th = _gate_constants(kind, p)
    return sigmoid((V - Vx) / th)


def gating_inf_prime(V, kind: str, p: ParameterSet = DEFAULT):
    Vx, th = _gate_constants(kind, p)
    s = gating_inf(V, kind, p)
    return s * (1.0 - s) / th


def tau_n(V):
    return 0.05 + 0.27 / (1.0 + np.exp(-(V + 40.0) / (-12.0)))


def tau_hp(V):
    return 10000.0 / np.cosh((V + 48.0) / 12.0)


def _nonpositive(v) -> bool:
    v = value_of(v)
    if isinstance(v, float):
        return not v > 0
    return bool(np.any(np.asarray(v) <= 0))


def _check_positive(name, v):
    if _nonpositive(v):
        raise DomainError(f"{name} must be positive, got {value_of(v)}")


def nernst(Xe, Xi, p: ParameterSet = DEFAULT):
    """Reversal potential (mV) for outside/inside concentrations ``Xe``, ``Xi``."""
    _check_positive("outside concentration", Xe)
    _check_positive("inside concentration", Xi)
    return p.RTF * log(Xe / Xi)


def ghk_current(V, Xe, Xi, P, p: ParameterSet = DEFAULT):
    """Goldman-Hodgkin-Katz current (uA/cm^2); continuous through ``V = 0``."""
    _check_positive("outside concentration", Xe)
    _check_positive("inside concentration", Xi)
    phi = V / p.RTF
    return P * p.F * ghk_kernel(phi) * (Xe * exp(-phi) - Xi)


def pump_current(z, Nai, rho, p: ParameterSet = DEFAULT, astro: bool = False):
    """Na+/K+ ATPase current ``rho (z/(K_K+z))^2 (Nai/(K_Na+Nai))^3``."""
    KK, KNa = (p.K_KA, p.K_NaA) if astro else (p.K_K, p.K_Na)
    a = z / (KK + z)
    b = Nai / (KNa + Nai)
    return rho * (a * a) * (b * b * b)


def pump_current_dz(z, Nai, rho, p: ParameterSet = DEFAULT, astro: bool = False):
    KK, KNa = (p.K_KA, p.K_NaA) if astro else (p.K_K, p.K_Na)
    b = Nai / (KNa + Nai)
    return rho * 2.0 * z * KK / (z + KK) ** 3 * b**3


def potassium_inside(z, p: ParameterSet = DEFAULT):
    """Neuronal [K+]_i implied by K+ conservation in the reduced model."""
    Ki = (p.K_tot - p.Omega_e * z - p.Omega_a * p.K_iA) / p.Omega_n
    if _nonpositive(Ki):
        raise DomainError(f"[K+]_i(z) nonpositive at z = {value_of(z)}")
    return Ki


def neuron_currents(V, n, hp, Na_i, Na_e, K_i, K_e, p: ParameterSet = DEFAULT):
    """(I_Na, I_NaP, I_K, I_L, I_Pm) of the neuron."""
    ENa = nernst(Na_e, Na_i, p)
    EK = nernst(K_e, K_i, p)
    m = gating_inf(V, "m", p)
    mp = gating_inf(V, "mp", p)
    I_Na = p.g_Na * m**3 * (1.0 - n) * (V - ENa)
    I_NaP = p.g_NaP * mp**p.nap_gate_power * hp * (V - ENa)
    I_K = p.g_K * n**4 * (V - EK)
    I_L = p.g_L * (V - p.E_L)
    I_Pm = pump_current(K_e, Na_i, p.rho_N, p)
    return I_Na, I_NaP, I_K, I_L, I_Pm


def astrocyte_currents(V, Na_iA, Na_e, K_iA, K_e, p: ParameterSet = DEFAULT):
    """(I_Na^A, I_K^A, I_Pm^A) of the astrocyte."""
    I_NaA = ghk_current(V, Na_e, Na_iA, p.P_Na, p)
    I_KA = ghk_current(V, K_e, K_iA, p.P_K, p)
    I_PmA = pump_current(K_e, Na_iA, p.rho_A, p, astro=True)
    return I_NaA, I_KA, I_PmA


def _flux_factors(p: ParameterSet) -> tuple[float, float]:
    return 10.0 * p.S_N / (p.F * p.Omega_e), 10.0 * p.S_A / (p.F * p.Omega_e)


# -- reduced (x, y, z) functions ------------------------------------------

def f_tilde(x, z, p: ParameterSet = DEFAULT):
    """Neuron voltage rate (mV/ms) with n = n_inf(x) and frozen h_p."""
    Ki = potassium_inside(z, p)
    n = gating_inf(x, "n", p)
    I_Na, I_NaP, I_K, I_L, I_Pm = neuron_currents(x, n, p.h_p, p.Na_i, p.Na_e, Ki, z, p)
    return -(I_Na + I_NaP + I_K + I_L + I_Pm) / p.C_m


def g_tilde(y, z, p: ParameterSet = DEFAULT):
    """Astrocyte voltage rate (mV/ms)."""
    I_NaA, I_KA, I_PmA = astrocyte_currents(y, p.Na_iA, p.Na_e, p.K_iA, z, p)
    return -(I_NaA + I_KA + I_PmA) / p.C_m_A


def h(x, y, z, p: ParameterSet = DEFAULT):
    """Net K+ release into the extracellular space (mM/ms)."""
    Ki = potassium_inside(z, p)
    n = gating_inf(x, "n", p)
    EK = nernst(z, Ki, p)
    I_K = p.g_K * n**4 * (x - EK)
    I_Pm = pump_current(z, p.Na_i, p.rho_N, p)
    I_KA = ghk_current(y, z, p.K_iA, p.P_K, p)
    I_PmA = pump_current(z, p.Na_iA, p.rho_A, p, astro=True)
    aN, aA = _flux_factors(p)
    return aN * (I_K - 2.0 * I_Pm) + aA * (I_KA - 2.0 * I_PmA)


def fgh(v, p: ParameterSet = DEFAULT) -> np.ndarray:
    x, y, z = v
    return np.array([f_tilde(x, z, p), g_tilde(y, z, p), h(x, y, z, p)])


# -- analytic first partials ------------------------------------------------

def _dEK_dz(z, Ki, p):
    return p.RTF * (1.0 / z + (p.Omega_e / p.Omega_n) / Ki)


def f_x(x, z, p: ParameterSet = DEFAULT):
    Ki = potassium_inside(z, p)
    ENa = nernst(p.Na_e, p.Na_i, p)
    EK = nernst(z, Ki, p)
    m, dm = gating_inf(x, "m", p), gating_inf_prime(x, "m", p)
    n, dn = gating_inf(x, "n", p), gating_inf_prime(x, "n", p)
    mp, dmp = gating_inf(x, "mp", p), gating_inf_prime(x, "mp", p)
    q = p.nap_gate_power
    d = (
        p.g_Na * (3 * m**2 * dm * (1 - n) * (x - ENa) + m**3 * ((1 - n) - dn * (x - ENa)))
        + p.g_NaP * p.h_p * (q * mp ** (q - 1) * dmp * (x - ENa) + mp**q)
        + p.g_K * (4 * n**3 * dn * (x - EK) + n**4)
        + p.g_L
    )
    return -d / p.C_m


def f_z(x, z, p: ParameterSet = DEFAULT):
    Ki = potassium_inside(z, p)
    n = gating_inf(x, "n", p)
    d = -p.g_K * n**4 * _dEK_dz(z, Ki, p) + pump_current_dz(z, p.Na_i, p.rho_N, p)
    return -d / p.C_m


def _ghk_dV(V, Xe, Xi, P, p):
    phi = V / p.RTF
    k, dk = ghk_kernel(phi), ghk_kernel_derivative(phi)
    e = np.exp(-phi)
    return P * p.F / p.RTF * (dk * (Xe * e - Xi) - k * Xe * e)


def _ghk_dXe(V, P, p):
    phi = V / p.RTF
    return P * p.F * ghk_kernel(phi) * np.exp(-phi)


def g_y(y, z, p: ParameterSet = DEFAULT):
    d = _ghk_dV(y, p.Na_e, p.Na_iA, p.P_Na, p) + _ghk_dV(y, z, p.K_iA, p.P_K, p)
    return -d / p.C_m_A


def g_z(y, z, p: ParameterSet = DEFAULT):
    d = _ghk_dXe(y, p.P_K, p) + pump_current_dz(z, p.Na_iA, p.rho_A, p, astro=True)
    return -d / p.C_m_A


def h_x(x, y, z, p: ParameterSet = DEFAULT):
    Ki = potassium_inside(z, p)
    EK = nernst(z, Ki, p)
    n, dn = gating_inf(x, "n", p), gating_inf_prime(x, "n", p)
    aN, _ = _flux_factors(p)
    return aN * p.g_K * (4 * n**3 * dn * (x - EK) + n**4)


def h_y(x, y, z, p: ParameterSet = DEFAULT):
    _, aA = _flux_factors(p)
    return aA * _ghk_dV(y, z, p.K_iA, p.P_K, p)


def h_z(x, y, z, p: ParameterSet = DEFAULT):
    Ki = potassium_inside(z, p)
    n = gating_inf(x, "n", p)
    aN, aA = _flux_factors(p)
    neuron = -p.g_K * n**4 * _dEK_dz(z, Ki, p) - 2.0 * pump_current_dz(z, p.Na_i, p.rho_N, p)
    astro = _ghk_dXe(y, p.P_K, p) - 2.0 * pump_current_dz(z, p.Na_iA, p.rho_A, p, astro=True)
    return aN * neuron + aA * astro


def fgh_jacobian(v, p: ParameterSet = DEFAULT) -> np.ndarray:
    x, y, z = v
    return np.array([
        [f_x(x, z, p), 0.0, f_z(x, z, p)],
        [0.0, g_y(y, z, p), g_z(y, z, p)],
        [h_x(x, y, z, p), h_y(x, y, z, p), h_z(x, y, z, p)],
    ])


_FIRST = {
    "f_x": (f_x, "xz"), "f_z": (f_z, "xz"),
    "g_y": (g_y, "yz"), "g_z": (g_z, "yz"),
    "h_x": (h_x, "xyz"), "h_y": (h_y, "xyz"), "h_z": (h_z, "xyz"),
}
_BASE = {"f": (f_tilde, "xz"), "g": (g_tilde, "yz"), "h": (h, "xyz")}


# -- higher partials by directional jets ------------------------------------

@lru_cache(maxsize=None)
def _directions(nvars: int, order: int):
    """Directions whose k-th directional derivatives determine all order-k partials."""
    multis = [m for m in itertools.product(range(order + 1), repeat=nvars) if sum(m) == order]
    cand = [d for d in itertools.product((-1, 0, 1, 2), repeat=nvars) if any(d)]
    rows, dirs = [], []
    for d in cand:
        row = [math.factorial(order) / np.prod([math.factorial(a) for a in m])
               * np.prod([float(di) ** a for di, a in zip(d, m)]) for m in multis]
        trial = np.array(rows + [row])
        if np.linalg.matrix_rank(trial) > len(rows):
            rows.append(row)
            dirs.append(d)
        if len(rows) == len(multis):
            break
    return multis, np.array(dirs, float), np.linalg.inv(np.array(rows))


def directional_derivatives(fun, point, direction, order: int) -> np.ndarray:
    """``d^k/ds^k fun(point + s*direction)`` at ``s = 0`` for ``k = 0..order``."""
    args = [Jet.variable(float(a), order, float(d)) for a, d in zip(point, direction)]
    out = fun(*args)
    if not isinstance(out, Jet):
        out = Jet.constant(out, order)
    return np.array([out.derivative(k) for k in range(order + 1)])


@lru_cache(maxsize=None)
def _lower_order_maps(nvars: int, order: int):
    """Least-squares maps from the top-order direction set to order-k partials."""
    _, dirs, _ = _directions(nvars, order)
    maps = []
    for k in range(1, order + 1):
        multis = [m for m in itertools.product(range(k + 1), repeat=nvars) if sum(m) == k]
        rows = np.array([[math.factorial(k) / np.prod([math.factorial(a) for a in m])
                          * np.prod([di ** a for di, a in zip(d, m)]) for m in multis] for d in dirs])
        if np.linalg.matrix_rank(rows) < len(multis):
            raise ValueError(f"direction set cannot resolve order {k}")
        maps.append((multis, np.linalg.pinv(rows)))
    return maps


def partial_derivatives(fun, point, order: int) -> dict[tuple, float]:
    """All partial derivatives of ``fun`` up to ``order`` keyed by multi-index.

    One set of top-order directional jets serves every order.
    """
    nvars = len(point)
    if order == 0:
        return {(0,) * nvars: float(fun(*[float(a) for a in point]))}
    _, dirs, _ = _directions(nvars, order)
    dd = np.array([directional_derivatives(fun, point, d, order) for d in dirs])
    result = {(0,) * nvars: float(dd[0, 0])}
    for k, (multis, pinv) in enumerate(_lower_order_maps(nvars, order), start=1):
        for m, val in zip(multis, pinv @ dd[:, k]):
            result[m] = float(val)
    return result


def partials(which: str, at, p: ParameterSet = DEFAULT) -> float:
    """Partial derivative by name, e.g. ``"f_x"``, ``"g_yy"``, ``"f_xxz"``.

    ``at`` holds the function's own arguments: ``(x, z)`` for f, ``(y, z)`` for
    g, ``(x, y, z)`` for h.  First partials are closed-form; higher ones come
    from directional Taylor jets through the same current formulas.
    """
    if which in _FIRST:
        fn, _ = _FIRST[which]
        return fn(*at, p)
    name, _, wrt = which.partition("_")
    if name not in _BASE or not wrt:
        raise ValueError(f"unknown partial {which!r}")
    fn, vars_ = _BASE[name]
    if any(v not in vars_ for v in wrt):
        raise ValueError(f"{name} does not depend on all of {wrt!r}")
    multi = tuple(wrt.count(v) for v in vars_)
    table = partial_derivatives(lambda *a: fn(*a, p), at, len(wrt))
    return table[multi]


# -- traveling-wave vector field ----------------------------------------------

def wave_rhs(s, c: float, p: ParameterSet = DEFAULT):
    """Right-hand side of the 4D wave ODE ``(f/c, g/c, w, c w - h)``.

    With jet entries the result is a list of jets (used by the
    parameterization method); otherwise a float array.
    """
    x, y, z, w = s
    out = [f_tilde(x, z, p) / c, g_tilde(y, z, p) / c, w, c * w - h(x, y, z, p)]
    if any(isinstance(o, Jet) for o in out):
        order = next(o.order for o in out if isinstance(o, Jet))
        return [o if isinstance(o, Jet) else Jet.constant(o, order) for o in out]
    return np.array(out, dtype=float)


def wave_jacobian(s, c: float, p: ParameterSet = DEFAULT) -> np.ndarray:
    x, y, z, w = s
    return np.array([
        [f_x(x, z, p) / c, 0.0, f_z(x, z, p) / c, 0.0],
        [0.0, g_y(y, z, p) / c, g_z(y, z, p) / c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-h_x(x, y, z, p), -h_y(x, y, z, p), -h_z(x, y, z, p), c],
    ])


# -- full ten-variable cell ------------------------------------------------------

FULL_VARS = ("V_N", "V_A", "n", "h_p", "Na_i", "Na_iA", "K_i", "K_iA", "Na_e", "K_e")


def full_model_rhs(cell, p: ParameterSet = DEFAULT) -> np.ndarray:
    """Reaction terms of the ten-variable cell (gap-junction currents omitted).

    ``cell`` is ordered as :data:`FULL_VARS`; trailing axes (e.g. a cell index)
    are carried through.
    """
    V_N, V_A, n, hp, Na_i, Na_iA, K_i, K_iA, Na_e, K_e = cell
    I_Na, I_NaP, I_K, I_L, I_Pm = neuron_currents(V_N, n, hp, Na_i, Na_e, K_i, K_e, p)
    I_NaA, I_KA, I_PmA = astrocyte_currents(V_A, Na_iA, Na_e, K_iA, K_e, p)
    sN_n = 10.0 * p.S_N / (p.F * p.Omega_n)
    sA_a = 10.0 * p.S_A / (p.F * p.Omega_a)
    aN, aA = _flux_factors(p)
    na_n = I_Na + I_NaP + 3.0 * I_Pm
    k_n = I_K - 2.0 * I_Pm
    na_a = I_NaA + 3.0 * I_PmA
    k_a = I_KA - 2.0 * I_PmA
    return np.array([
        -(I_Na + I_NaP + I_K + I_L + I_Pm) / p.C_m,
        -(I_NaA + I_KA + I_PmA) / p.C_m_A,
        p.phi_n * (gating_inf(V_N, "n", p) - n) / tau_n(V_N),
        p.phi_hp * (gating_inf(V_N, "hp", p) - hp) / tau_hp(V_N),
        -sN_n * na_n,
        -sA_a * na_a,
        -sN_n * k_n,
        -sA_a * k_a,
        aN * na_n + aA * na_a,
        aN * k_n + aA * k_a,
    ])


def wave_velocity(c: float, p: ParameterSet = DEFAULT) -> float:
    """Physical front speed (mm/min) for the scaled wave speed ``c`` (ms^-1/2)."""
    return c * math.sqrt(p.D_K_mm2_ms) * 60_000.0
