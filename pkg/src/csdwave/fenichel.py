"""Second-order expansion of the perturbed upper slow manifold.

Near the upper branch the fast variables are slaved to ``(z, w)``:

    x = m0(z) + m1(z, w) + m2(z, w),   y = n0(z) + n1(z, w) + n2(z, w),

with ``m0 = X^r``, ``n0 = Y`` and the corrections obtained by matching powers
of the (formal) small parameter in the invariance equation.  The bookkeeping
parameter is fixed at 1 and everything is written in ``f~`` and ``g~``.
Restricting the wave ODE to this surface gives a planar system that can be
integrated backward without the fast blow-up of the 4D field.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import BracketError, IntegrationError, ManifoldEscapeError, NearSingularError, SpectrumError
from .integrators import IntegratorConfig, SectionEvent, Trajectory, integrate, secant_root
from .manifold import FOLD_GUARD, critical_manifold
from .parameterization import DELTA_U, SECTION_Z, unstable_branch
from .params import DEFAULT, ParameterSet

SEED_OFFSET = 1e-6
SPAN = 1e6
RESTRICTED_CONFIG = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13, method="lsoda")


@dataclass(frozen=True)
class FastTerms:
    """Expansion of one fast variable and the derivatives the Jacobian needs."""

    order0: float
    order1: float
    order2: float
    d0_z: float       # d(order0)/dz
    d1_z: float
    d1_w: float
    d2_z: float
    d2_w: float

    def value(self, order: int = 2) -> float:
        return self.order0 + (order >= 1) * self.order1 + (order >= 2) * self.order2

    def dz(self, order: int = 2) -> float:
        return self.d0_z + (order >= 1) * self.d1_z + (order >= 2) * self.d2_z

    def dw(self, order: int = 2) -> float:
        return (order >= 1) * self.d1_w + (order >= 2) * self.d2_w


def _fast_terms(P: dict, root: float, c: float, w: float, H0: float, dH0: float) -> FastTerms:
    """Expansion for a fast variable whose field has partials ``P[(i, j)]``
    (i-th derivative in the fast variable, j-th in z) at ``(root, z)``.

    Without third partials in ``P`` the z-derivative of the second-order term
    is left as NaN.
    """
    A, B, C = P[(1, 0)], P[(0, 1)], P[(2, 0)]
    if abs(A) < FOLD_GUARD:
        raise NearSingularError("fast derivative vanishes: too close to a fold")
    d0 = -B / A
    Ap = P[(2, 0)] * d0 + P[(1, 1)]
    Bp = P[(1, 1)] * d0 + P[(0, 2)]
    cw = c * w
    m1 = -cw * B / A**2
    m1w = -c * B / A**2
    m1z = -cw * (Bp * A - 2 * B * Ap) / A**3
    m2 = -0.5 * C / A * m1**2 + cw / A * m1z - c * c * (cw - H0) * B / A**3
    m2w = -C / A * m1 * m1w + 2 * c / A * m1z - c**3 * B / A**3
    if (3, 0) not in P:
        return FastTerms(root, m1, m2, d0, m1z, m1w, np.nan, m2w)

    d00 = -(Bp * A - B * Ap) / A**2
    Cp = P[(3, 0)] * d0 + P[(2, 1)]
    App = (P[(3, 0)] * d0 + P[(2, 1)]) * d0 + P[(2, 0)] * d00 + (P[(2, 1)] * d0 + P[(1, 2)])
    Bpp = (P[(2, 1)] * d0 + P[(1, 2)]) * d0 + P[(1, 1)] * d00 + (P[(1, 2)] * d0 + P[(0, 3)])
    m1zz = -cw * ((Bpp * A - Bp * Ap - 2 * B * App) * A - 3 * Ap * (Bp * A - 2 * B * Ap)) / A**4
    m2z = (-0.5 * ((Cp * A - C * Ap) / A**2 * m1**2 + C / A * 2 * m1 * m1z)
           + (-cw * Ap / A**2 * m1z + cw / A * m1zz)
           - c * c * (-dH0 * B / A**3 + (cw - H0) * (Bp * A - 3 * B * Ap) / A**4))
    return FastTerms(root, m1, m2, d0, m1z, m1w, m2z, m2w)


@dataclass(frozen=True)
class SlowManifoldExpansion:
    z: float
    w: float
    c: float
    x: FastTerms
    y: FastTerms

    def embed(self, order: int = 2) -> np.ndarray:
        return np.array([self.x.value(order), self.y.value(order), self.z, self.w])


def expansion(z: float, w: float, c: float, p: ParameterSet = DEFAULT,
              derivatives: bool = True) -> SlowManifoldExpansion:
    """Expansion at ``(z, w)``; ``derivatives=False`` skips the third partials."""
    cm = critical_manifold(p)
    x0, y0 = cm.X(z, "r"), cm.Y(z)
    k = 3 if derivatives else 2
    Pf = model.partial_derivatives(lambda a, b: model.f_tilde(a, b, p), (x0, z), k)
    Pg = model.partial_derivatives(lambda a, b: model.g_tilde(a, b, p), (y0, z), k)
    if abs(Pg[(1, 0)]) < FOLD_GUARD:
        raise NearSingularError("g_y vanishes")
    H0 = float(model.h(x0, y0, z, p))
    dH0 = float(cm.dH(z, "r"))
    return SlowManifoldExpansion(z, w, c, _fast_terms(Pf, x0, c, w, H0, dH0),
                                 _fast_terms(Pg, y0, c, w, H0, dH0))


def expansion_terms(z: float, w: float, c: float, p: ParameterSet = DEFAULT):
    """``(m0, m1, m2, n0, n1, n2)`` at ``(z, w)``."""
    e = expansion(z, w, c, p)
    return (e.x.order0, e.x.order1, e.x.order2, e.y.order0, e.y.order1, e.y.order2)


def embed(z: float, w: float, c: float, p: ParameterSet = DEFAULT, order: int = 2) -> np.ndarray:
    """Point ``(x, y, z, w)`` of the expanded manifold."""
    return expansion(z, w, c, p, derivatives=False).embed(order)


def restricted_rhs(z: float, w: float, c: float, p: ParameterSet = DEFAULT,
                   order: int = 2) -> np.ndarray:
    x, y, _, _ = embed(z, w, c, p, order)
    return np.array([w, c * w - model.h(x, y, z, p)])


def restricted_jacobian(z: float, w: float, c: float, p: ParameterSet = DEFAULT,
                        order: int = 2) -> np.ndarray:
    e = expansion(z, w, c, p)
    x, y = e.x.value(order), e.y.value(order)
    hx, hy, hz = model.h_x(x, y, z, p), model.h_y(x, y, z, p), model.h_z(x, y, z, p)
    return np.array([
        [0.0, 1.0],
        [-(hx * e.x.dz(order) + hy * e.y.dz(order) + hz), c - (hx * e.x.dw(order) + hy * e.y.dw(order))],
    ])


def invariance_residual(z: float, w: float, c: float, p: ParameterSet = DEFAULT,
                        order: int = 2) -> np.ndarray:
    """Residual of the exact invariance equations for the truncated expansion.

    ``f(m, z) - c w m_z - c (c w - h(m, n, z)) m_w`` and its ``g`` analogue.
    """
    e = expansion(z, w, c, p)
    x, y = e.x.value(order), e.y.value(order)
    wdot = c * w - model.h(x, y, z, p)
    rx = model.f_tilde(x, z, p) - c * w * e.x.dz(order) - c * wdot * e.x.dw(order)
    ry = model.g_tilde(y, z, p) - c * w * e.y.dz(order) - c * wdot * e.y.dw(order)
    return np.array([rx, ry])


def stable_direction(c: float, p: ParameterSet = DEFAULT) -> tuple[float, np.ndarray]:
    """Stable eigenpair of the restricted system at ``(z^r, 0)``; z-component negative."""
    zr = next(e for e in critical_manifold(p).equilibria() if e.label == "p_r").z
    lam, V = np.linalg.eig(restricted_jacobian(zr, 0.0, c, p))
    if np.iscomplexobj(lam) and np.any(np.abs(lam.imag) > 0) or not lam.real.min() < 0 < lam.real.max():
        raise SpectrumError(f"(z^r, 0) is not a saddle of the restricted system: {lam}")
    i = int(np.argmin(lam.real))
    v = V[:, i].real
    v /= np.linalg.norm(v)
    if v[0] > 0:
        v = -v
    return float(lam[i].real), v


def restricted_stable_branch(c: float, p: ParameterSet = DEFAULT, s: float = SEED_OFFSET,
                             cfg: IntegratorConfig = RESTRICTED_CONFIG,
                             z_section: float = SECTION_Z) -> Trajectory:
    """Stable manifold of ``(z^r, 0)`` continued backward to ``z = z_section``."""
    zr = next(e for e in critical_manifold(p).equilibria() if e.label == "p_r").z
    _, v = stable_direction(c, p)
    y0 = np.array([zr, 0.0]) + s * v
    cfg = dataclasses.replace(cfg, jacobian=lambda _, u: restricted_jacobian(u[0], u[1], c, p))
    try:
        tr = integrate(lambda _, u: restricted_rhs(u[0], u[1], c, p), y0, (0.0, -SPAN), cfg,
                       event=[SectionEvent(0, z_section, -1), SectionEvent(1, 0.0, +1)])
    except IntegrationError as err:
        raise ManifoldEscapeError(f"restricted stable manifold failed at c = {c}: {err}",
                                  c=c, sign=+1, state=err.y) from err
    if tr.hit is None or tr.hit.which != 0:
        raise ManifoldEscapeError(f"restricted stable manifold missed z = {z_section} at c = {c}",
                                  c=c, sign=+1, state=tr.final)
    return tr


@dataclass
class FenichelMatch:
    c: float
    hit_u: np.ndarray
    hit_s: np.ndarray
    unstable: Trajectory = field(repr=False)
    stable: Trajectory = field(repr=False)     # planar (z, w)
    p: ParameterSet = field(default=DEFAULT, repr=False)

    @property
    def mismatch(self) -> np.ndarray:
        return (self.hit_u - self.hit_s)[[0, 1, 3]]

    @property
    def velocity(self) -> float:
        return model.wave_velocity(self.c, self.p)

    def embedded_stable(self) -> np.ndarray:
        """``Gamma^s`` lifted to 4D, shape ``(4, n)``."""
        return np.array([embed(z, w, self.c, self.p) for z, w in self.stable.y.T]).T

    def to_csv(self, path) -> None:
        tu, ts = self.unstable, self.stable
        lifted = self.embedded_stable()
        shift = tu.t[-1] - ts.t[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi", "x", "y", "z", "w"])
            for k in range(tu.t.size):
                w.writerow([f"{tu.t[k]:.17g}"] + [f"{v:.17g}" for v in tu.y[:, k]])
            for k in range(ts.t.size - 2, -1, -1):
                w.writerow([f"{ts.t[k] + shift:.17g}"] + [f"{v:.17g}" for v in lifted[:, k]])


def match(c: float, p: ParameterSet = DEFAULT, s: float = SEED_OFFSET,
          delta: float = DELTA_U) -> FenichelMatch:
    ts = restricted_stable_branch(c, p, s)
    zh, wh = ts.hit.y
    hit_s = embed(zh, wh, c, p)
    tu = unstable_branch(c, p, delta)
    return FenichelMatch(c, tu.hit.y.copy(), hit_s, tu, ts, p)


def find_c_tilde(bracket: tuple[float, float] = (0.072, 0.075), p: ParameterSet = DEFAULT,
                 s: float = SEED_OFFSET, delta: float = DELTA_U, tol: float = 1e-9) -> FenichelMatch:
    cache: dict[float, FenichelMatch] = {}

    def dw(c):
        cache[c] = match(c, p, s, delta)
        return cache[c].mismatch[2]

    res = secant_root(dw, bracket, tol=tol)
    return cache[res.root]


@dataclass
class FenichelFit:
    c: np.ndarray
    hits_u: np.ndarray
    hits_s: np.ndarray
    c_tilde: float | None = None
    best: FenichelMatch | None = field(default=None, repr=False)

    @property
    def mismatch(self) -> np.ndarray:
        return (self.hits_u - self.hits_s)[:, [0, 1, 3]]

    @property
    def distance(self) -> np.ndarray:
        return np.linalg.norm(self.mismatch, axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "dx", "dy", "dw", "dist"])
            for c, m, d in zip(self.c, self.mismatch, self.distance):
                w.writerow([f"{c:.12g}"] + [f"{v:.15g}" for v in (*m, d)])


def fenichel_match(c_grid, p: ParameterSet = DEFAULT, s: float = SEED_OFFSET,
                   delta: float = DELTA_U) -> FenichelFit:
    c_grid = np.asarray(c_grid, float)
    ms = [match(c, p, s, delta) for c in c_grid]
    fit = FenichelFit(c_grid, np.array([m.hit_u for m in ms]), np.array([m.hit_s for m in ms]))
    dw = fit.mismatch[:, 2]
    cuts = np.nonzero(np.sign(dw[:-1]) * np.sign(dw[1:]) < 0)[0]
    if cuts.size == 0:
        raise BracketError("w-mismatch has no sign change over the c grid")
    i = cuts[0]
    best = find_c_tilde((c_grid[i], c_grid[i + 1]), p, s, delta)
    fit.c_tilde, fit.best = best.c, best
    return fit
