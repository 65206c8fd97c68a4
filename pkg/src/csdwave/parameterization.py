"""Slow stable submanifold of ``p_r`` by the parameterization method.

``W(s) = sum_k W_k s^k`` with internal dynamics ``s' = lambda_slow s`` solves
``F(W(s)) = W'(s) lambda_slow s`` order by order:

    (DF(p_r) - k lambda_slow I) W_k = -[F(W_{<k})]_k ,

where the bracket is the k-th Taylor coefficient of the field composed with
the truncated series, obtained exactly with jets.  The high-order seed
``W(s*)`` is then continued backward with an implicit stepper, whose damping
keeps the orbit on the attracting slow manifold.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import model
from .errors import (BracketError, DomainError, IntegrationError, ManifoldEscapeError,
                     OrderTooLowError, ResonanceError, SpectrumError)
from .integrators import IntegratorConfig, SectionEvent, Trajectory, integrate, secant_root
from .manifold import find_equilibria
from .params import DEFAULT, ParameterSet
from .taylor import Jet, field_jet

SECTION_Z = 22.0
ORDER = 55
INVARIANCE_TOL = 1e-10
S_GRID = (1e-6, 1e2, 200)
DELTA_U = 1e-6
COND_LIMIT = 1e12
SPAN = 1e6
STIFF_CONFIG = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, stiff=True, max_steps=500_000)
# Backward in xi the fast directions expand at rates ~ |f_x|/c.  Error control
# on (z, w) only, with a large first step, keeps the implicit stepper in the
# regime where it damps them; x and y stay slaved to the slow manifold.
BACKWARD_CONFIG = IntegratorConfig(rel_tol=1e-7, abs_tol=(1e3, 1e3, 1e-9, 1e-9), stiff=True,
                                   initial_step=1.0, max_steps=100_000)


def _equilibrium(label: str, p: ParameterSet) -> np.ndarray:
    return next(e for e in find_equilibria(p) if e.label == label).point


def slow_eigenpair(c: float, p: ParameterSet = DEFAULT) -> tuple[float, np.ndarray]:
    """Slowest contracting eigenpair of the 4D field at ``p_r``.

    The eigenvector has unit 2-norm and a negative z-component.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    A = model.wave_jacobian(_equilibrium("p_r", p), c, p)
    lam, V = np.linalg.eig(A)
    if np.count_nonzero(lam.real > 0) != 1:
        raise SpectrumError(f"p_r should have exactly one expanding direction, spectrum {lam}")
    neg = np.nonzero(lam.real < 0)[0]
    order = neg[np.argsort(np.abs(lam[neg].real))]
    i, j = order[0], order[1]
    if abs(lam[i].imag) > 0:
        raise SpectrumError(f"slow eigenvalue {lam[i]} is complex")
    if abs(lam[i]) / abs(lam[j]) > 0.9:
        raise SpectrumError(f"slow eigenvalue {lam[i]} not separated from {lam[j]}")
    v = V[:, i].real
    v /= np.linalg.norm(v)
    if v[2] > 0:
        v = -v
    return float(lam[i].real), v


def unstable_eigenpair(c: float, p: ParameterSet = DEFAULT) -> tuple[float, np.ndarray]:
    """Expanding eigenpair at ``p_l1`` with the z-component made positive."""
    A = model.wave_jacobian(_equilibrium("p_l1", p), c, p)
    lam, V = np.linalg.eig(A)
    pos = np.nonzero(lam.real > 0)[0]
    if pos.size != 1 or abs(lam[pos[0]].imag) > 0:
        raise SpectrumError(f"p_l1 should have one real expanding direction, spectrum {lam}")
    v = V[:, pos[0]].real
    v /= np.linalg.norm(v)
    if v[2] < 0:
        v = -v
    return float(lam[pos[0]].real), v


@dataclass(frozen=True)
class ManifoldParameterization:
    c: float
    lam: float               # internal dynamics s' = lam * s
    coeffs: np.ndarray       # (K + 1, 4)
    p: ParameterSet = field(default=DEFAULT, repr=False)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def base(self) -> np.ndarray:
        return self.coeffs[0]

    def __call__(self, s: float) -> np.ndarray:
        out = np.zeros(4)
        for ck in self.coeffs[::-1]:
            out = out * s + ck
        return out

    def derivative(self, s: float) -> np.ndarray:
        k = np.arange(1, self.order + 1)[:, None]
        d = self.coeffs[1:] * k
        out = np.zeros(4)
        for ck in d[::-1]:
            out = out * s + ck
        return out

    def invariance_error(self, s: float) -> float:
        """``||F(W(s)) - W'(s) lam s||_inf``; infinite outside the model domain."""
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                F = model.wave_rhs(self(s), self.c, self.p)
        except (DomainError, ArithmeticError):
            return np.inf
        r = F - self.derivative(s) * self.lam * s
        val = float(np.max(np.abs(r)))
        return val if np.isfinite(val) else np.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "x", "y", "z", "w"])
            for k, row in enumerate(self.coeffs):
                w.writerow([k] + [f"{v:.17g}" for v in row])


def compute_coefficients(c: float, K: int = ORDER, p: ParameterSet = DEFAULT,
                         base: np.ndarray | None = None,
                         eigenpair: tuple[float, np.ndarray] | None = None,
                         field_fn=None) -> ManifoldParameterization:
    """Coefficients ``W_0..W_K`` of the slow stable submanifold of ``p_r``.

    ``base``, ``eigenpair`` and ``field_fn`` (a map from four jets to four
    jets) allow the same solver to run on other vector fields.
    """
    if K < 1:
        raise ValueError("order must be at least 1")
    if field_fn is None:
        field_fn = lambda W: model.wave_rhs(W, c, p)  # noqa: E731
        base = _equilibrium("p_r", p) if base is None else base
        lam, v = slow_eigenpair(c, p) if eigenpair is None else eigenpair
    else:
        if base is None or eigenpair is None:
            raise ValueError("a custom field needs its base point and eigenpair")
        lam, v = eigenpair
    n = len(base)
    coeffs = np.zeros((K + 1, n))
    coeffs[0] = base
    coeffs[1] = v
    A = _jacobian_of(field_fn, base)
    eye = np.eye(n)
    for k in range(2, K + 1):
        M = A - k * lam * eye
        if np.linalg.cond(M) > COND_LIMIT:
            raise ResonanceError(f"near resonance at order {k}", order=k)
        W = [Jet(coeffs[: k + 1, i]) for i in range(n)]
        Fk = np.array([fj.c[k] for fj in field_jet(field_fn, W)])
        coeffs[k] = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M), -Fk)
    return ManifoldParameterization(c, lam, coeffs, p)


def _jacobian_of(field_fn, base) -> np.ndarray:
    """Jacobian at ``base`` from first-order directional jets."""
    n = len(base)
    cols = []
    for i in range(n):
        W = [Jet.variable(base[j], 1, 1.0 if j == i else 0.0) for j in range(n)]
        cols.append([fj.c[1] for fj in field_jet(field_fn, W)])
    return np.array(cols).T


def invariance_error(P: ManifoldParameterization, s: float) -> float:
    return P.invariance_error(s)


def s_grid(sign: float = 1.0) -> np.ndarray:
    return sign * np.geomspace(*S_GRID)


def select_s(P: ManifoldParameterization, threshold: float = INVARIANCE_TOL,
             sign: float = 1.0) -> float:
    """Largest grid value ``s`` such that the error stays below ``threshold`` up to it."""
    best = None
    for s in s_grid(sign):
        if P.invariance_error(s) < threshold:
            best = float(s)
        else:
            break
    if best is None:
        raise OrderTooLowError(f"invariance error exceeds {threshold} for every s "
                               f"at order {P.order}")
    return best


# -- globalization ------------------------------------------------------------

def _field(c, p):
    return lambda _, u: model.wave_rhs(u, c, p)


def _jac(c, p):
    return lambda _, u: model.wave_jacobian(u, c, p)


def _safe(fun):
    # convert domain violations into integration failures
    def wrapped(t, u):
        try:
            return fun(t, u)
        except (DomainError, ArithmeticError):
            return np.full(4, np.nan)
    return wrapped


def unstable_branch(c: float, p: ParameterSet = DEFAULT, delta: float = DELTA_U,
                    cfg: IntegratorConfig = STIFF_CONFIG, z_section: float = SECTION_Z) -> Trajectory:
    """``Gamma^u`` of ``p_l1`` integrated forward to ``z = z_section``."""
    _, v = unstable_eigenpair(c, p)
    y0 = _equilibrium("p_l1", p) + delta * v
    cfg = dataclasses.replace(cfg, jacobian=_jac(c, p))
    events = [SectionEvent(2, z_section, +1), SectionEvent(3, 0.0, -1)]
    try:
        tr = integrate(_safe(_field(c, p)), y0, (0.0, SPAN), cfg, event=events)
    except IntegrationError as err:
        raise ManifoldEscapeError(f"Gamma^u failed at c = {c}: {err}", c=c, sign=-1,
                                  state=err.y) from err
    if tr.hit is None or tr.hit.which != 0:
        raise ManifoldEscapeError(f"Gamma^u turned back before z = {z_section} at c = {c}",
                                  c=c, sign=-1, state=tr.final)
    return tr


def stable_branch(P: ManifoldParameterization, s: float, cfg: IntegratorConfig = BACKWARD_CONFIG,
                  z_section: float = SECTION_Z) -> Trajectory:
    """``Gamma^s`` continued backward in xi from ``W(s)`` to ``z = z_section``."""
    c, p = P.c, P.p
    cfg = dataclasses.replace(cfg, jacobian=_jac(c, p))
    try:
        tr = integrate(_safe(_field(c, p)), P(s), (0.0, -SPAN), cfg,
                       event=SectionEvent(2, z_section, -1))
    except IntegrationError as err:
        raise ManifoldEscapeError(f"Gamma^s escaped at c = {c}: {err}", c=c, sign=+1,
                                  state=err.y) from err
    if tr.hit is None:
        raise ManifoldEscapeError(f"Gamma^s never reached z = {z_section} at c = {c}",
                                  c=c, sign=+1, state=tr.final)
    return tr


@dataclass
class SectionMatch:
    c: float
    hit_u: np.ndarray        # (x, y, z, w) on the section
    hit_s: np.ndarray
    s_star: float
    unstable: Trajectory = field(repr=False)
    stable: Trajectory = field(repr=False)
    parameterization: ManifoldParameterization = field(repr=False)

    @property
    def mismatch(self) -> np.ndarray:
        """``(dx, dy, dw)`` of ``Gamma^u`` minus ``Gamma^s`` on the section."""
        d = self.hit_u - self.hit_s
        return d[[0, 1, 3]]

    @property
    def velocity(self) -> float:
        return model.wave_velocity(self.c, self.parameterization.p)

    def orbit(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated ``(xi, state)`` with ``Gamma^s`` shifted to follow ``Gamma^u``."""
        tu, ts = self.unstable, self.stable
        shift = tu.t[-1] - ts.t[-1]
        xi = np.concatenate([tu.t, (ts.t + shift)[::-1][1:]])
        y = np.hstack([tu.y, ts.y[:, ::-1][:, 1:]])
        return xi, y

    def to_csv(self, path) -> None:
        xi, y = self.orbit()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi", "x", "y", "z", "w"])
            for k in range(xi.size):
                w.writerow([f"{xi[k]:.17g}"] + [f"{v:.17g}" for v in y[:, k]])


def match(c: float, K: int = ORDER, p: ParameterSet = DEFAULT, delta: float = DELTA_U,
          threshold: float = INVARIANCE_TOL, sign: float = 1.0) -> SectionMatch:
    P = compute_coefficients(c, K, p)
    s = select_s(P, threshold, sign)
    ts = stable_branch(P, s)
    tu = unstable_branch(c, p, delta)
    return SectionMatch(c, tu.hit.y.copy(), ts.hit.y.copy(), s, tu, ts, P)


@dataclass
class HeteroclinicFit:
    c: np.ndarray
    hits_u: np.ndarray       # (n, 4)
    hits_s: np.ndarray
    c_hat: float | None = None
    best: SectionMatch | None = field(default=None, repr=False)

    @property
    def mismatch(self) -> np.ndarray:
        return (self.hits_u - self.hits_s)[:, [0, 1, 3]]

    @property
    def distance(self) -> np.ndarray:
        return np.linalg.norm(self.mismatch, axis=1)

    @property
    def velocity(self) -> float | None:
        return None if self.c_hat is None else model.wave_velocity(self.c_hat)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "xu", "yu", "wu", "xs", "ys", "ws", "dx", "dy", "dw", "dist"])
            for c, hu, hs, m, d in zip(self.c, self.hits_u, self.hits_s, self.mismatch, self.distance):
                w.writerow([f"{c:.12g}"] + [f"{v:.15g}" for v in (*hu[[0, 1, 3]], *hs[[0, 1, 3]], *m, d)])


def find_c_hat(bracket: tuple[float, float] = (0.072, 0.075), K: int = ORDER,
               p: ParameterSet = DEFAULT, delta: float = DELTA_U,
               threshold: float = INVARIANCE_TOL, tol: float = 1e-9,
               matcher=match) -> SectionMatch:
    """Secant iteration on the w-mismatch."""
    cache: dict[float, SectionMatch] = {}

    def dw(c):
        cache[c] = matcher(c, K, p, delta, threshold)
        return cache[c].mismatch[2]

    res = secant_root(dw, bracket, tol=tol)
    return cache[res.root]


def globalize_and_match(c_grid, K: int = ORDER, p: ParameterSet = DEFAULT,
                        delta: float = DELTA_U, threshold: float = INVARIANCE_TOL,
                        matcher=match) -> HeteroclinicFit:
    """Section hits over ``c_grid``, then ``c_hat`` from the first w sign change."""
    c_grid = np.asarray(c_grid, float)
    ms = [matcher(c, K, p, delta, threshold) for c in c_grid]
    hu = np.array([m.hit_u for m in ms])
    hs = np.array([m.hit_s for m in ms])
    fit = HeteroclinicFit(c_grid, hu, hs)
    dw = fit.mismatch[:, 2]
    cuts = np.nonzero(np.sign(dw[:-1]) * np.sign(dw[1:]) < 0)[0]
    if cuts.size == 0:
        raise BracketError("w-mismatch has no sign change over the c grid")
    i = cuts[0]
    best = find_c_hat((c_grid[i], c_grid[i + 1]), K, p, delta, threshold, matcher=matcher)
    fit.c_hat, fit.best = best.c, best
    return fit


def write_invariance_curve(path, P: ManifoldParameterization, sign: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "error"])
        for s in s_grid(sign):
            w.writerow([f"{s:.12g}", f"{P.invariance_error(s):.6e}"])
