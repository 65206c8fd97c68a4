"""Time stepping, section events and small nonlinear solvers.

Steppers are scipy's adaptive ``OdeSolver`` classes driven by our own loop,
which adds a step budget, section-crossing events refined on the dense
interpolant, and errors that carry the last valid state.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import BDF, DOP853, RK45, LSODA, Radau
from scipy.optimize import brentq

from .errors import BracketError, BudgetError, NoConvergenceError, StepSizeError

log = logging.getLogger(__name__)

_METHODS = {"rk45": RK45, "dop853": DOP853, "radau": Radau, "bdf": BDF, "lsoda": LSODA}
EVENT_TOL = 1e-10


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float | tuple[float, ...] = 1e-11   # scalar or per component
    max_step: float = np.inf
    initial_step: float | None = None
    max_steps: int = 200_000
    stiff: bool = False
    jacobian: Callable | None = None
    jac_sparsity: object = None
    method: str | None = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and np.all(np.asarray(self.abs_tol) > 0)):
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    @property
    def solver_name(self) -> str:
        if self.method is not None:
            return self.method.lower()
        return "bdf" if self.stiff else "rk45"


PDE_CONFIG = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-8, stiff=True)


@dataclass(frozen=True)
class SectionEvent:
    """Crossing of ``state[index] == target``; direction +1, -1 or 0 (any)."""

    index: int
    target: float
    direction: int = 0

    def __post_init__(self):
        if not np.isfinite(self.target):
            raise ValueError("event target must be finite")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")

    def value(self, y) -> float:
        return y[self.index] - self.target

    def crossed(self, g0: float, g1: float) -> bool:
        if g0 == 0.0:
            return False
        if self.direction >= 0 and g0 < 0 <= g1:
            return True
        if self.direction <= 0 and g0 > 0 >= g1:
            return True
        return False


@dataclass
class EventHit:
    t: float
    y: np.ndarray
    which: int
    event: SectionEvent


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray          # shape (n_state, n_samples)
    hit: EventHit | None = None
    nsteps: int = 0
    nfev: int = 0
    interpolants: list = field(default_factory=list, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.y[:, -1]

    def __call__(self, t):
        """Dense output (requires ``dense=True`` at integration time)."""
        if not self.interpolants:
            raise ValueError("trajectory was integrated without dense output")
        from scipy.integrate import OdeSolution

        ts = self.t
        sol = OdeSolution(ts, self.interpolants)
        return sol(t)

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        names = list(names) if names else [f"y{i}" for i in range(self.y.shape[0])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for k in range(self.t.size):
                w.writerow([f"{self.t[k]:.17g}"] + [f"{v:.17g}" for v in self.y[:, k]])


def _locate(interp, ev: SectionEvent, t0: float, t1: float) -> tuple[float, np.ndarray]:
    g = lambda t: ev.value(interp(t))
    ts = brentq(g, t0, t1, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    y = interp(ts)
    # polish with secant steps on the interpolant if the coordinate is still off
    for _ in range(5):
        r = ev.value(y)
        if abs(r) < EVENT_TOL:
            break
        dt = 1e-8 * max(abs(t1 - t0), 1e-300)
        slope = (ev.value(interp(ts + dt)) - r) / dt
        if slope == 0:
            break
        ts = ts - r / slope
        y = interp(ts)
    return ts, y


def integrate(
    rhs: Callable,
    y0,
    span: tuple[float, float],
    cfg: IntegratorConfig = IntegratorConfig(),
    event: SectionEvent | Sequence[SectionEvent] | None = None,
    dense: bool = False,
    record: bool = True,
    sample_times=None,
    callback: Callable | None = None,
) -> Trajectory:
    """Integrate ``dy/dt = rhs(t, y)`` over ``span`` (which may run backward).

    Stops at the first crossing of any ``event``.  With ``sample_times`` the
    trajectory holds the interpolated state at those times (plus the end
    point) instead of every step.  ``callback(t_old, y_old, t, y)`` runs after
    each accepted step; returning True ends the integration there.  Raises
    :class:`~csdwave.errors.StepSizeError` on step underflow or non-finite
    state and :class:`~csdwave.errors.BudgetError` once ``cfg.max_steps`` is
    exhausted; both carry the last valid state.
    """
    t0, t1 = map(float, span)
    if t0 == t1:
        raise ValueError("integration span must have nonzero length")
    record = record or dense
    events = [] if event is None else ([event] if isinstance(event, SectionEvent) else list(event))
    y0 = np.array(y0, dtype=float)
    cls = _METHODS[cfg.solver_name]
    atol = cfg.abs_tol if np.ndim(cfg.abs_tol) == 0 else np.asarray(cfg.abs_tol, float)
    kw = dict(rtol=cfg.rel_tol, atol=atol, max_step=cfg.max_step)
    if cfg.initial_step is not None:
        kw["first_step"] = cfg.initial_step
    if cls in (Radau, BDF, LSODA):
        if cfg.jacobian is not None:
            kw["jac"] = cfg.jacobian
        if cfg.jac_sparsity is not None and cls is not LSODA:
            kw["jac_sparsity"] = cfg.jac_sparsity
    solver = cls(rhs, t0, y0, t1, **kw)

    ts, ys, interps = [t0], [y0.copy()], []
    g_prev = [ev.value(y0) for ev in events]
    hit = None
    nsteps = 0
    direction = np.sign(t1 - t0)
    if sample_times is not None:
        samples = np.asarray(sample_times, float)
        samples = samples[(samples - t0) * direction > 0]
        samples = samples[np.argsort(samples * direction)]
        record = False
    else:
        samples = np.empty(0)
    k_sample = 0

    def take_samples(interp, t_hi):
        nonlocal k_sample
        j = k_sample
        while j < samples.size and (samples[j] - t_hi) * direction <= 0:
            j += 1
        if j > k_sample:
            vals = interp(samples[k_sample:j])
            for k in range(k_sample, j):
                ts.append(samples[k])
                ys.append(vals[:, k - k_sample].copy())
            k_sample = j

    while solver.status == "running":
        if nsteps >= cfg.max_steps:
            raise BudgetError(f"step budget of {cfg.max_steps} exhausted at t = {solver.t}",
                              t=solver.t, y=solver.y.copy())
        t_old, y_old = solver.t, solver.y.copy()
        msg = solver.step()
        nsteps += 1
        if solver.status == "failed":
            raise StepSizeError(f"integrator failed at t = {solver.t}: {msg}",
                                t=ts[-1], y=ys[-1])
        if not np.all(np.isfinite(solver.y)):
            raise StepSizeError(f"non-finite state at t = {solver.t}", t=ts[-1], y=ys[-1])
        interp = solver.dense_output() if dense else None
        if k_sample < samples.size and (samples[k_sample] - solver.t) * direction <= 0:
            interp = interp or solver.dense_output()
        first = None
        for i, ev in enumerate(events):
            g = ev.value(solver.y)
            if ev.crossed(g_prev[i], g):
                if interp is None:
                    interp = solver.dense_output()
                th, yh = _locate(interp, ev, t_old, solver.t)
                if first is None or abs(th - t0) < abs(first.t - t0):
                    first = EventHit(th, yh, i, ev)
            g_prev[i] = g
        if first is not None:
            hit = first
            if samples.size:
                take_samples(interp, hit.t)
            if callback is not None:
                callback(t_old, y_old, hit.t, hit.y)
            ts.append(hit.t)
            ys.append(hit.y.copy())
            if dense:
                interps.append(interp)
            break
        if interp is not None and samples.size:
            take_samples(interp, solver.t)
        stop = callback is not None and bool(callback(t_old, y_old, solver.t, solver.y))
        if record or solver.status != "running" or stop:
            ts.append(solver.t)
            ys.append(solver.y.copy())
        if dense:
            interps.append(interp)
        if stop:
            break
    if not record and sample_times is None:
        ts, ys = [ts[0], ts[-1]], [ys[0], ys[-1]]
    return Trajectory(
        t=np.array(ts), y=np.array(ys).T, hit=hit, nsteps=nsteps,
        nfev=getattr(solver, "nfev", 0), interpolants=interps if dense else [],
    )


def newton_solve(residual, jacobian, x0, tol: float = 1e-12, max_iter: int = 50,
                 fd_step: float = 1e-7):
    """Damped Newton iteration until ``||residual||_inf < tol``.

    ``jacobian`` may be ``None`` (forward differences).  The step is halved
    while the residual norm grows.  Scalars in, scalars out.
    """
    scalar = np.ndim(x0) == 0
    x = np.atleast_1d(np.array(x0, dtype=float))

    def R(v):
        return np.atleast_1d(np.asarray(residual(v[0] if scalar else v), dtype=float))

    def J(v):
        if jacobian is not None:
            return np.atleast_2d(np.asarray(jacobian(v[0] if scalar else v), dtype=float))
        r0 = R(v)
        cols = []
        for i in range(v.size):
            e = np.zeros_like(v)
            e[i] = fd_step * max(1.0, abs(v[i]))
            cols.append((R(v + e) - r0) / e[i])
        return np.array(cols).T

    r = R(x)
    nr = np.max(np.abs(r))
    for _ in range(max_iter):
        if nr < tol:
            return x[0] if scalar else x
        dx = np.linalg.solve(J(x), -r)
        lam = 1.0
        while True:
            xn = x + lam * dx
            try:
                rn = R(xn)
                nrn = np.max(np.abs(rn))
            except (ValueError, ArithmeticError):
                nrn = np.inf
            if nrn < nr or lam < 1e-6:
                break
            lam *= 0.5
        if not np.isfinite(nrn):
            raise NoConvergenceError("Newton step left the residual domain", best=x)
        x, r, nr = xn, rn, nrn
    if nr < tol:
        return x[0] if scalar else x
    raise NoConvergenceError(f"Newton did not converge: residual {nr:.3e}",
                             best=x[0] if scalar else x)


@dataclass
class SecantResult:
    root: float
    value: float
    history: list[tuple[float, float]]


def secant_root(fun: Callable[[float], float], bracket: tuple[float, float],
                tol: float = 1e-10, max_iter: int = 60) -> SecantResult:
    """Root of a scalar function of ``c`` by secant iteration.

    With a sign change on ``bracket`` the iterate is kept bracketed (Illinois
    variant of the secant/false-position method); otherwise plain secant
    extrapolation is attempted.
    """
    a, b = map(float, bracket)
    fa, fb = float(fun(a)), float(fun(b))
    history = [(a, fa), (b, fb)]
    if fa == 0.0:
        return SecantResult(a, fa, history)
    if fb == 0.0:
        return SecantResult(b, fb, history)
    bracketed = fa * fb < 0
    for _ in range(max_iter):
        if fb == fa:
            break
        c = b - fb * (b - a) / (fb - fa)
        fc = float(fun(c))
        history.append((c, fc))
        if abs(fc) < tol or abs(c - b) < tol:
            return SecantResult(c, fc, history)
        if bracketed:
            if fc * fb < 0:
                a, fa = b, fb
            else:
                # Illinois: halve the retained end's weight
                fa = fa / 2
            b, fb = c, fc
        else:
            a, fa, b, fb = b, fb, c, fc
            if fa * fb < 0:
                bracketed = True
    raise BracketError(f"secant iteration on {bracket} did not converge; history {history[-3:]}")
