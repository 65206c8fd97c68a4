"""Singular heteroclinic orbit of the piecewise slow system and its speed c0.

On a branch of the critical manifold the wave ODE reduces to
``z' = w, w' = c w - H*(z)``.  The unstable manifold of ``p_l1`` (lower
branch) and the stable manifold of ``p_r`` (upper branch) are followed to the
fold section ``z = z^R``; the speed ``c0`` makes their ``w`` values agree.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketError, ManifoldEscapeError, NoHitError, SpectrumError
from .integrators import IntegratorConfig, SectionEvent, Trajectory, integrate, secant_root
from .manifold import critical_manifold, find_equilibria
from .params import DEFAULT, ParameterSet

SEED_OFFSET = 1e-6
# The lower leg is short and non-stiff; the upper leg lingers near p_r where
# the slow eigenvalue is ~1e-3 against ~c for the other, so LSODA wins there.
SHOOT_CONFIG = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13, method="dop853")
STABLE_CONFIG = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13, method="lsoda")
SPAN = 1e5


def slow_rhs(z, w, c: float, branch: str, p: ParameterSet = DEFAULT) -> np.ndarray:
    """``(dz, dw)/dxi`` on ``branch``."""
    return np.array([w, c * w - critical_manifold(p).H(z, branch)])


@dataclass(frozen=True)
class PiecewiseSlowSystem:
    """Lower branch below the fold ``z^R``, upper branch above it."""

    p: ParameterSet = DEFAULT

    @property
    def z_switch(self) -> float:
        return critical_manifold(self.p).fold_R.z

    def branch_at(self, z: float) -> str:
        return "l" if z < self.z_switch else "r"

    def H(self, z: float) -> float:
        return critical_manifold(self.p).H(z, self.branch_at(z))

    def rhs(self, c: float, branch: str):
        """Right-hand side on one branch, held constant past its fold edge.

        Runge-Kutta stages may probe slightly beyond the section; clamping keeps
        the field defined there without affecting the located crossing.
        """
        cm = critical_manifold(self.p)
        lo, hi = cm.domain(branch)

        def f(_, u):
            z = min(max(u[0], lo), hi)
            return np.array([u[1], c * u[1] - cm.H(z, branch)])

        return f

    def jacobian(self, c: float, branch: str):
        cm = critical_manifold(self.p)
        lo, hi = cm.domain(branch)
        eps = 1e-6 * (hi - lo)

        def J(_, u):
            z = min(max(u[0], lo + eps), hi - eps)
            return np.array([[0.0, 1.0], [-cm.dH(z, branch), c]])

        return J


def _saddle(label: str, p: ParameterSet):
    for e in find_equilibria(p):
        if e.label == label:
            return e
    raise KeyError(label)


def manifold_seed(point: str, c: float, s: float = SEED_OFFSET,
                  p: ParameterSet = DEFAULT) -> tuple[np.ndarray, float, np.ndarray]:
    """Initial condition ``p + s v`` on the unstable (``p_l1``) or stable (``p_r``) manifold.

    Returns ``(seed, eigenvalue, unit eigenvector)``; the eigenvector points
    toward the fold section for ``s > 0``.
    """
    if point not in ("p_l1", "p_r"):
        raise ValueError("point must be 'p_l1' or 'p_r'")
    if not c > 0:
        raise ValueError("c must be positive")
    e = _saddle(point, p)
    A = e.slow_jacobian(c)
    lam = np.linalg.eigvals(A)
    if np.iscomplexobj(lam) and np.any(np.abs(lam.imag) > 0) or not (lam.real.min() < 0 < lam.real.max()):
        raise SpectrumError(f"{point} is not a saddle of the slow system at c = {c}: {lam}")
    lam = np.sort(lam.real)
    mu = lam[1] if point == "p_l1" else lam[0]
    v = np.array([1.0, mu])
    v /= np.linalg.norm(v)
    if point == "p_r":
        v = -v
    return np.array([e.z, 0.0]) + s * v, float(mu), v


@dataclass
class ShootingResult:
    c: float
    w_u: float
    w_s: float
    unstable: Trajectory = field(repr=False)
    stable: Trajectory = field(repr=False)

    @property
    def d(self) -> float:
        return self.w_u - self.w_s

    def orbit(self) -> np.ndarray:
        """Piecewise singular orbit as a ``(2, n)`` array ordered by increasing z."""
        return np.hstack([self.unstable.y, self.stable.y[:, ::-1]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["piece", "xi", "z", "w"])
            for name, tr in (("unstable", self.unstable), ("stable", self.stable)):
                for k in range(tr.t.size):
                    w.writerow([name, f"{tr.t[k]:.17g}", f"{tr.y[0, k]:.17g}", f"{tr.y[1, k]:.17g}"])


def _to_section(c, branch, seed, direction, p, cfg):
    system = PiecewiseSlowSystem(p)
    if cfg.solver_name in ("lsoda", "radau", "bdf") and cfg.jacobian is None:
        cfg = dataclasses.replace(cfg, jacobian=system.jacobian(c, branch))
    zR = system.z_switch
    span = (0.0, SPAN) if direction > 0 else (0.0, -SPAN)
    hit_z = SectionEvent(0, zR, +1 if direction > 0 else -1)
    turn = SectionEvent(1, 0.0, -1 if direction > 0 else +1)
    return integrate(system.rhs(c, branch), seed, span, cfg, event=[hit_z, turn])


def shoot(c: float, p: ParameterSet = DEFAULT, s: float = SEED_OFFSET,
          cfg: IntegratorConfig = SHOOT_CONFIG,
          cfg_stable: IntegratorConfig = STABLE_CONFIG) -> ShootingResult:
    """Distance ``d(c) = w_u - w_s`` of the two saddle manifolds on ``z = z^R``.

    Raises :class:`NoHitError` (sign -1) when the unstable manifold turns back
    before the section and :class:`ManifoldEscapeError` (sign +1) when the
    stable manifold does.
    """
    seed_u, _, _ = manifold_seed("p_l1", c, s, p)
    tu = _to_section(c, "l", seed_u, +1, p, cfg)
    if tu.hit is None or tu.hit.which != 0:
        raise NoHitError(f"unstable manifold misses the fold section at c = {c}",
                         c=c, sign=-1, state=tu.final)
    seed_s, _, _ = manifold_seed("p_r", c, s, p)
    ts = _to_section(c, "r", seed_s, -1, p, cfg_stable)
    if ts.hit is None or ts.hit.which != 0:
        raise ManifoldEscapeError(f"stable manifold misses the fold section at c = {c}",
                                  c=c, sign=+1, state=ts.final)
    return ShootingResult(c, float(tu.hit.y[1]), float(ts.hit.y[1]), tu, ts)


def find_c0(bracket: tuple[float, float] = (0.04, 0.09), p: ParameterSet = DEFAULT,
            s: float = SEED_OFFSET, tol: float = 1e-9) -> ShootingResult:
    """Speed of the singular heteroclinic connection.

    Failed shots count as ``d = -inf`` / ``+inf`` and are bisected away before
    the secant iteration takes over.
    """
    shots: dict[float, ShootingResult] = {}

    def signed_d(c: float) -> float:
        try:
            shots[c] = shoot(c, p, s)
        except NoHitError as err:
            return float(err.sign) * np.inf
        return shots[c].d

    def d(c: float) -> float:
        return shots[c].d if c in shots else signed_d(c)

    a, b = map(float, bracket)
    da, db = signed_d(a), signed_d(b)
    if not da * db < 0:
        raise BracketError(f"d(c) has no sign change on {bracket}: d = {da}, {db}")
    for _ in range(60):
        if np.isfinite(da) and np.isfinite(db):
            break
        m = 0.5 * (a + b)
        dm = signed_d(m)
        if np.sign(dm) == np.sign(da):
            a, da = m, dm
        else:
            b, db = m, dm
    res = secant_root(d, (a, b), tol=tol)
    return shots[res.root]


def d_curve(cs, p: ParameterSet = DEFAULT, s: float = SEED_OFFSET) -> np.ndarray:
    """``d(c)`` for each speed; NaN where a manifold misses the section."""
    out = []
    for c in cs:
        try:
            out.append(shoot(c, p, s).d)
        except NoHitError:
            out.append(np.nan)
    return np.array(out)


def write_d_curve(path, cs, p: ParameterSet = DEFAULT) -> None:
    ds = d_curve(cs, p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "d"])
        for c, d in zip(cs, ds):
            w.writerow([f"{c:.12g}", f"{d:.17g}"])
