"""Critical manifold of the wave ODE: branches, folds, H* and equilibria.

The solution set of ``f(x, z) = 0`` is an S-shaped curve.  Because
``f_z > 0`` along it, the curve is the graph ``z = Z(x)``, so it is computed
once on an x-grid and each branch is a monotone piece between the folds.
Roots for a given ``z`` are then bracketed inside the correct piece, which
rules out jumps between branches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import model
from .errors import DomainError, NearSingularError, NoConvergenceError, SpectrumError
from .integrators import newton_solve
from .params import DEFAULT, ParameterSet

BRANCHES = ("l", "m", "r")
X_GRID = (-100.0, 80.0, 3601)
Y_BRACKET = (-200.0, 200.0)
Z_GRID = (1.0, 250.0, 2000)
FOLD_GUARD = 1e-8

EQUILIBRIUM_LABELS = {"l": ("p_l1", "p_l2"), "r": ("p_r",)}


def _rtsafe(F, dF, lo, hi, x0=None, tol=1e-13, max_iter=100):
    """Vectorized safeguarded Newton: bisection whenever a step leaves the bracket."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    lo, hi = lo.copy(), hi.copy()
    flo, fhi = F(lo), F(hi)
    if np.any(np.sign(flo) * np.sign(fhi) > 0):
        raise DomainError("root is not bracketed")
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.asarray(x0, float), np.minimum(lo, hi),
                                                   np.maximum(lo, hi))
    done = np.zeros(x.shape, bool)
    for _ in range(max_iter):
        fx = F(x)
        same = np.sign(fx) == np.sign(flo)
        lo, flo = np.where(same, x, lo), np.where(same, fx, flo)
        hi = np.where(same, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / dF(x)
        a, b = np.minimum(lo, hi), np.maximum(lo, hi)
        close = np.abs(xn - x) <= tol * (1.0 + np.abs(x))
        bad = ~close & (~np.isfinite(xn) | (xn <= a) | (xn >= b))
        xn = np.where(bad, 0.5 * (a + b), xn)
        close |= np.abs(xn - x) <= tol * (1.0 + np.abs(x))
        x = np.where(done | (fx == 0), x, xn)
        done |= close | (fx == 0)
        if np.all(done):
            return x
    raise NoConvergenceError("safeguarded Newton did not converge", best=x)


def _newton_scalar(F, dF, lo, hi, x0, tol=1e-13, max_iter=100):
    """Scalar version of :func:`_rtsafe` seeded inside a known bracket."""
    a, b = (lo, hi) if lo < hi else (hi, lo)
    fa = F(a)
    x = min(max(x0, a), b)
    for _ in range(max_iter):
        fx = F(x)
        if fx == 0:
            return x
        if (fx > 0) == (fa > 0):
            a, fa = x, fx
        else:
            b = x
        d = dF(x)
        xn = x - fx / d if d != 0 else np.nan
        if abs(xn - x) <= tol * (1.0 + abs(x)):
            return xn
        if not a < xn < b:
            xn = 0.5 * (a + b)
            if abs(xn - x) <= tol * (1.0 + abs(x)):
                return xn
        x = xn
    raise NoConvergenceError("safeguarded Newton did not converge", best=x)


@dataclass(frozen=True)
class Fold:
    z: float
    x: float


@dataclass(frozen=True)
class BranchTable:
    branch: str
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z_L: float
    z_R: float

    def residuals(self, p: ParameterSet = DEFAULT) -> tuple[float, float]:
        return (float(np.max(np.abs(model.f_tilde(self.x, self.z, p)))),
                float(np.max(np.abs(model.g_tilde(self.y, self.z, p)))))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["branch", "z", "x", "y"])
            for z, x, y in zip(self.z, self.x, self.y):
                w.writerow([self.branch, f"{z:.17g}", f"{x:.17g}", f"{y:.17g}"])


@dataclass(frozen=True)
class Equilibrium:
    """Rest point ``(x, y, z, 0)`` of the wave ODE on one branch."""

    label: str
    x: float
    y: float
    z: float
    branch: str
    dH: float          # slope of H* at z
    f_x: float
    g_y: float

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, 0.0])

    def slow_jacobian(self, c: float) -> np.ndarray:
        return np.array([[0.0, 1.0], [-self.dH, c]])

    def slow_eigenvalues(self, c: float) -> np.ndarray:
        """``(lambda_-, lambda_+)``; complex when the discriminant is negative."""
        disc = complex(c * c - 4.0 * self.dH)
        r = np.sqrt(disc)
        lam = np.array([(c - r) / 2, (c + r) / 2])
        return lam.real if disc.real >= 0 else lam

    def fast_eigenvalues(self, c: float) -> tuple[float, float]:
        return self.f_x / c, self.g_y / c

    def stability(self, c: float) -> str:
        det, tr = self.dH, c
        if det < 0:
            return "saddle"
        if tr > 0:
            return "unstable"
        if tr < 0:
            return "stable"
        return "center"


class CriticalManifold:
    """Branch functions ``X^l, X^m, X^r``, ``Y`` and ``H*`` for one parameter set."""

    def __init__(self, p: ParameterSet = DEFAULT):
        self.p = p
        self._equilibria = None
        self._build_curve()
        self._locate_folds()
        self._build_pieces()

    # -- construction -------------------------------------------------------------

    def _Z(self, x):
        """``z`` with ``f(x, z) = 0`` (vectorized); NaN where none exists."""
        p = self.p
        x = np.asarray(x, float)
        zmax = (p.K_tot - p.Omega_a * p.K_iA) / p.Omega_e
        lo = np.full_like(x, 1e-6)
        hi = np.full_like(x, zmax * (1 - 1e-9))
        ok = (model.f_tilde(x, lo, p) < 0) & (model.f_tilde(x, hi, p) > 0)
        z = np.full_like(x, np.nan)
        if np.any(ok):
            xo = x[ok]
            z[ok] = _rtsafe(lambda z: model.f_tilde(xo, z, self.p),
                            lambda z: model.f_z(xo, z, self.p), lo[ok], hi[ok])
        return z

    def _build_curve(self):
        x = np.linspace(*X_GRID)
        z = self._Z(x)
        ok = np.isfinite(z)
        idx = np.nonzero(ok)[0]
        if idx.size == 0 or np.any(np.diff(idx) != 1):
            raise DomainError("solution curve of f = 0 is not a single graph over x")
        self.curve_x, self.curve_z = x[ok], z[ok]
        if np.any(model.f_z(self.curve_x, self.curve_z, self.p) <= 0):
            raise DomainError("f_z changes sign along the critical curve")

    def _fold_newton(self, x0: float) -> Fold:
        p = self.p

        def res(v):
            return [model.f_tilde(v[0], v[1], p), model.f_x(v[0], v[1], p)]

        def jac(v):
            d = model.partial_derivatives(lambda a, b: model.f_tilde(a, b, p), v, 2)
            return [[d[(1, 0)], d[(0, 1)]], [d[(2, 0)], d[(1, 1)]]]

        z0 = float(self._Z(np.array([x0]))[0])
        xs, zs = newton_solve(res, jac, [x0, z0], tol=1e-12)
        return Fold(z=float(zs), x=float(xs))

    def _locate_folds(self):
        fx = model.f_x(self.curve_x, self.curve_z, self.p)
        cuts = np.nonzero(np.diff(np.sign(fx)) != 0)[0]
        if cuts.size != 2:
            raise SpectrumError(f"expected two folds on the critical curve, found {cuts.size}")
        folds = []
        for i in cuts:
            a, b = self.curve_x[i], self.curve_x[i + 1]
            sa = np.sign(fx[i])
            for _ in range(40):
                mid = 0.5 * (a + b)
                zm = self._Z(np.array([mid]))[0]
                if np.sign(model.f_x(mid, zm, self.p)) == sa:
                    a = mid
                else:
                    b = mid
            folds.append(self._fold_newton(0.5 * (a + b)))
        # first fold in x is the upper turning point of the lower branch
        self.fold_R, self.fold_L = folds
        if not self.fold_L.z < self.fold_R.z:
            raise SpectrumError("fold ordering z^L < z^R violated")

    def _build_pieces(self):
        x, z = self.curve_x, self.curve_z
        xR, xL = self.fold_R.x, self.fold_L.x
        l = x < xR
        m = (x > xR) & (x < xL)
        r = x > xL
        self._pieces = {
            "l": (np.append(x[l], xR), np.append(z[l], self.fold_R.z)),
            "m": (np.concatenate([[xR], x[m], [xL]]),
                  np.concatenate([[self.fold_R.z], z[m], [self.fold_L.z]])),
            "r": (np.insert(x[r], 0, xL), np.insert(z[r], 0, self.fold_L.z)),
        }
        zy = np.linspace(max(z.min(), 1e-3), z.max(), 400)
        self._ytab = (zy, self.y_solve_exact(zy))

    # -- branch functions -----------------------------------------------------------

    def domain(self, branch: str) -> tuple[float, float]:
        _check_branch(branch)
        zs = self._pieces[branch][1]
        return float(zs.min()), float(zs.max())

    def X(self, z, branch: str):
        """Root of ``f(., z)`` on ``branch``."""
        _check_branch(branch)
        xs, zs = self._pieces[branch]
        if zs[0] > zs[-1]:
            xs, zs = xs[::-1], zs[::-1]
        zq = np.asarray(z, float)
        if np.any(zq < zs[0]) or np.any(zq > zs[-1]):
            raise DomainError(f"z = {z} outside the domain [{zs[0]}, {zs[-1]}] of branch {branch}")
        i = np.clip(np.searchsorted(zs, zq), 1, zs.size - 1)
        lo, hi = xs[i - 1], xs[i]
        t = (zq - zs[i - 1]) / (zs[i] - zs[i - 1])
        seed = lo + t * (hi - lo)
        on_fold = (zq == zs[0]) | (zq == zs[-1])
        p = self.p
        if np.ndim(z) == 0 and not on_fold:
            zf = float(z)
            return float(_newton_scalar(lambda v: model.f_tilde(v, zf, p),
                                        lambda v: model.f_x(v, zf, p), lo, hi, seed))
        if np.all(on_fold):
            out = np.where(zq == zs[0], xs[0], xs[-1])
        else:
            out = _rtsafe(lambda v: model.f_tilde(v, zq, p), lambda v: model.f_x(v, zq, p),
                          lo, hi, seed)
            out = np.where(zq == zs[0], xs[0], np.where(zq == zs[-1], xs[-1], out))
        return float(out) if np.ndim(z) == 0 else out

    def y_solve_exact(self, z):
        p = self.p
        zq = np.asarray(z, float)
        lo = np.full_like(zq, Y_BRACKET[0])
        hi = np.full_like(zq, Y_BRACKET[1])
        return _rtsafe(lambda v: model.g_tilde(v, zq, p), lambda v: model.g_y(v, zq, p), lo, hi)

    def Y(self, z):
        """Unique root of ``g(., z)``."""
        p = self.p
        zq = np.asarray(z, float)
        if np.any(zq <= 0):
            raise DomainError(f"z must be positive, got {z}")
        seed = np.interp(zq, *self._ytab)
        if np.ndim(z) == 0:
            zf = float(z)
            return float(_newton_scalar(lambda v: model.g_tilde(v, zf, p),
                                        lambda v: model.g_y(v, zf, p), *Y_BRACKET, float(seed)))
        lo = np.full_like(zq, Y_BRACKET[0])
        hi = np.full_like(zq, Y_BRACKET[1])
        out = _rtsafe(lambda v: model.g_tilde(v, zq, p), lambda v: model.g_y(v, zq, p),
                      lo, hi, seed)
        return float(out) if np.ndim(z) == 0 else out

    def H(self, z, branch: str):
        x = self.X(z, branch)
        return model.h(x, self.Y(z), z, self.p)

    def dH(self, z, branch: str):
        """``dH*/dz`` by the chain rule through the implicit branch functions."""
        p = self.p
        x, y = self.X(z, branch), self.Y(z)
        fx = model.f_x(x, z, p)
        if np.any(np.abs(fx) < FOLD_GUARD):
            raise NearSingularError(f"|f_x| < {FOLD_GUARD} at z = {z}: too close to a fold")
        dX = -model.f_z(x, z, p) / fx
        dY = -model.g_z(y, z, p) / model.g_y(y, z, p)
        return model.h_x(x, y, z, p) * dX + model.h_y(x, y, z, p) * dY + model.h_z(x, y, z, p)

    def table(self, branch: str, z=None) -> BranchTable:
        if z is None:
            z = np.linspace(*Z_GRID)
        z = np.asarray(z, float)
        lo, hi = self.domain(branch)
        z = z[(z >= lo) & (z <= hi)]
        return BranchTable(branch, z, self.X(z, branch), self.Y(z),
                           self.fold_L.z, self.fold_R.z)

    # -- equilibria -------------------------------------------------------------

    def _branch_of(self, x: float) -> str:
        if x < self.fold_R.x:
            return "l"
        return "m" if x < self.fold_L.x else "r"

    def equilibrium(self, label: str, seed) -> Equilibrium:
        p = self.p
        v = newton_solve(lambda v: model.fgh(v, p), lambda v: model.fgh_jacobian(v, p),
                         seed, tol=1e-12)
        x, y, z = map(float, v)
        br = self._branch_of(x)
        return Equilibrium(label, x, y, z, br, float(self.dH(z, br)),
                           float(model.f_x(x, z, p)), float(model.g_y(y, z, p)))

    def equilibria(self) -> list[Equilibrium]:
        if self._equilibria is None:
            self._equilibria = self._find_equilibria()
        return list(self._equilibria)

    def _find_equilibria(self) -> tuple[Equilibrium, ...]:
        """Zeros of ``H*`` on each branch, polished by Newton on ``(f, g, h)``."""
        out = []
        for br, labels in EQUILIBRIUM_LABELS.items():
            lo, hi = self.domain(br)
            zs = np.linspace(max(lo, Z_GRID[0]), min(hi, Z_GRID[1]), 500)
            Hs = self.H(zs, br)
            cuts = np.nonzero(np.sign(Hs[:-1]) * np.sign(Hs[1:]) < 0)[0]
            if cuts.size != len(labels):
                raise NoConvergenceError(
                    f"expected {len(labels)} zeros of H on branch {br}, found {cuts.size}")
            for label, i in zip(labels, cuts):
                z0 = zs[i] - Hs[i] * (zs[i + 1] - zs[i]) / (Hs[i + 1] - Hs[i])
                out.append(self.equilibrium(label, (self.X(z0, br), self.Y(z0), z0)))
        return tuple(out)


def _check_branch(branch: str) -> None:
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")


@lru_cache(maxsize=8)
def critical_manifold(p: ParameterSet = DEFAULT) -> CriticalManifold:
    return CriticalManifold(p)


# -- functional interface ---------------------------------------------------------

def branch_solve(z, branch: str, p: ParameterSet = DEFAULT):
    return critical_manifold(p).X(z, branch)


def y_solve(z, p: ParameterSet = DEFAULT):
    return critical_manifold(p).Y(z)


def find_folds(p: ParameterSet = DEFAULT) -> tuple[Fold, Fold]:
    """``(fold_L, fold_R)`` with ``fold_L.z < fold_R.z``."""
    cm = critical_manifold(p)
    return cm.fold_L, cm.fold_R


def H_star(z, branch: str, p: ParameterSet = DEFAULT):
    return critical_manifold(p).H(z, branch)


def dH_star(z, branch: str, p: ParameterSet = DEFAULT):
    return critical_manifold(p).dH(z, branch)


def find_equilibria(p: ParameterSet = DEFAULT) -> list[Equilibrium]:
    return critical_manifold(p).equilibria()


# -- CSV exports ----------------------------------------------------------------------

def write_H_curves(path, p: ParameterSet = DEFAULT, n: int = 1000) -> None:
    cm = critical_manifold(p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch", "z", "H"])
        for br in BRANCHES:
            lo, hi = cm.domain(br)
            lo, hi = max(lo, Z_GRID[0]), min(hi, Z_GRID[1])
            zs = np.linspace(lo, hi, n)
            for z, H in zip(zs, cm.H(zs, br)):
                w.writerow([br, f"{z:.17g}", f"{H:.17g}"])


def write_slow_eigenvalues(path, p: ParameterSet = DEFAULT, c_max: float = 0.1, n: int = 101) -> None:
    eqs = find_equilibria(p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "label", "re_minus", "im_minus", "re_plus", "im_plus"])
        for c in np.linspace(0.0, c_max, n):
            for e in eqs:
                lm, lp = np.asarray(e.slow_eigenvalues(c), complex)
                w.writerow([f"{c:.6g}", e.label, f"{lm.real:.12g}", f"{lm.imag:.12g}",
                            f"{lp.real:.12g}", f"{lp.imag:.12g}"])


def write_fast_eigenvalues(path, c: float, p: ParameterSet = DEFAULT, n: int = 500) -> None:
    """``lambda_1* = f_x/c`` per branch and ``lambda_2 = g_y/c`` along z."""
    cm = critical_manifold(p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch", "z", "lambda1", "lambda2"])
        for br in BRANCHES:
            lo, hi = cm.domain(br)
            lo, hi = max(lo, Z_GRID[0]), min(hi, Z_GRID[1])
            zs = np.linspace(lo, hi, n)
            xs, ys = cm.X(zs, br), cm.Y(zs)
            l1 = model.f_x(xs, zs, p) / c
            l2 = model.g_y(ys, zs, p) / c
            for row in zip(zs, l1, l2):
                w.writerow([br] + [f"{v:.12g}" for v in row])
