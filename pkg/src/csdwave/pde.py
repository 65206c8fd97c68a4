"""Method-of-lines simulation of a 1D array of neuron-astrocyte pairs.

Cells share the extracellular space; K+ (and Na+ in the full model) diffuse
between neighbours with Dirichlet values at both ends.  Three cell models are
available:

* ``full10``: the ten-variable cell of :func:`csdwave.model.full_model_rhs`;
* ``reduced3``: ``(V_N, V_A, K_e)`` with the reduced reaction terms;
* ``instantaneous1``: only ``K_e`` evolves, the voltages sit on the attracting
  branches of the critical manifold.

A K+ insult is added to the extracellular equation of the injected cells and
latched off per cell once its neuron reaches the stop voltage.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import model
from .errors import DomainError, NoWaveError
from .integrators import PDE_CONFIG, IntegratorConfig, SectionEvent, integrate
from .manifold import critical_manifold
from .params import DEFAULT, ParameterSet

MODELS = ("full10", "reduced3", "instantaneous1")
OUTPUT_VARS = {
    "full10": model.FULL_VARS,
    "reduced3": ("V_N", "V_A", "K_e"),
    "instantaneous1": ("V_N", "V_A", "K_e"),
}
STATE_VARS = {"full10": model.FULL_VARS, "reduced3": ("V_N", "V_A", "K_e"), "instantaneous1": ("K_e",)}
INITIAL_STATES = ("healthy", "rest")
THRESHOLD = -30.0
NEWTON_ITERS = 4
NEWTON_TOL = 1e-9      # mV/ms
SWITCH_TOL = 1e-8     # located events sit on the section to ~1e-10


@dataclass(frozen=True)
class Injection:
    """K+ insult: 1-based ``cells`` (None means the middle four), rate in mM/ms."""

    cells: tuple[int, ...] | None = None
    rate: float = 0.005
    stop_voltage: float = THRESHOLD

    def indices(self, N: int) -> np.ndarray:
        cells = self.cells if self.cells is not None else tuple(range(N // 2 - 1, N // 2 + 3))
        idx = np.asarray(cells, int) - 1
        if np.any(idx < 0) or np.any(idx >= N):
            raise ValueError(f"injection cells {cells} outside 1..{N}")
        return np.unique(idx)


@dataclass(frozen=True)
class NetworkConfig:
    """Array geometry, cell model, boundary values, protocol and output sampling.

    ``K_e_boundary=None`` (``Na_e_boundary=None``) pins the ends to the initial
    value.  ``initial`` is
    ``"healthy"`` (concentrations at their reference values, voltages at
    their quasi-steady values) or ``"rest"`` (an equilibrium of the cell).
    ``t_end=None`` allows ``20 s + 1 s`` per cell.
    """

    N: int = 50
    dx: float | None = None            # mm; None takes the parameter set's
    model: str = "reduced3"
    K_e_boundary: float | None = 3.5
    Na_e_boundary: float | None = 135.0
    initial: str = "healthy"
    injection: Injection = field(default_factory=Injection)
    t_end: float | None = None         # ms
    threshold: float = THRESHOLD
    sample_dt: float = 20.0            # ms
    stop_when_depolarized: bool = True

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if self.dx is not None and not self.dx > 0:
            raise ValueError("dx must be positive")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.initial not in INITIAL_STATES:
            raise ValueError(f"initial must be one of {INITIAL_STATES}")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")
        self.injection.indices(self.N)

    def spacing(self, p: ParameterSet) -> float:
        return p.dx if self.dx is None else self.dx

    def duration(self) -> float:
        return self.t_end if self.t_end is not None else 20_000.0 + 1_000.0 * self.N

    def to_dict(self) -> dict:
        return asdict(self)


def laplacian_term(u, boundary: float, dx: float) -> np.ndarray:
    """Second difference with the Dirichlet value standing in for missing neighbours."""
    u = np.asarray(u, float)
    if u.size < 3:
        raise ValueError("need at least 3 cells")
    out = np.empty_like(u)
    out[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
    out[0] = u[1] - 2.0 * u[0] + boundary
    out[-1] = boundary - 2.0 * u[-1] + u[-2]
    return out / dx**2


def _laplacian_matrix(N: int, dx: float) -> sparse.csr_matrix:
    e = np.ones(N)
    return sparse.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="csr") / dx**2


# -- single-cell states ---------------------------------------------------------

def _neuron_balance(V, p: ParameterSet, K_i: float, K_e: float, Na_i: float, Na_e: float):
    n = model.gating_inf(V, "n", p)
    hp = model.gating_inf(V, "hp", p)
    return sum(model.neuron_currents(V, n, hp, Na_i, Na_e, K_i, K_e, p))


def _lowest_root(fun, lo=-100.0, hi=20.0, n=1201) -> float:
    v = np.linspace(lo, hi, n)
    f = np.array([fun(a) for a in v])
    k = np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) <= 0)[0]
    if k.size == 0:
        raise DomainError("no voltage balances the currents")
    return brentq(fun, v[k[0]], v[k[0] + 1], xtol=1e-13)


def healthy_state(kind: str, p: ParameterSet = DEFAULT) -> np.ndarray:
    """Cell state with reference concentrations and quasi-steady voltages."""
    z = p.K_e0
    cm = critical_manifold(p)
    if kind == "instantaneous1":
        return np.array([z])
    if kind == "reduced3":
        return np.array([cm.X(z, "l"), cm.Y(z), z])
    V_A = _lowest_root(lambda v: float(model.g_tilde(v, z, p)))
    V_N = _lowest_root(lambda v: _neuron_balance(v, p, p.K_i0, z, p.Na_i, p.Na_e))
    return np.array([V_N, V_A, model.gating_inf(V_N, "n", p), model.gating_inf(V_N, "hp", p),
                     p.Na_i, p.Na_iA, p.K_i0, p.K_iA, p.Na_e, z])


def rest_state(kind: str, p: ParameterSet = DEFAULT) -> np.ndarray:
    """Equilibrium of the cell's reaction terms.

    The reduced models rest at the lower equilibrium of the critical manifold.
    The full cell conserves Na+ and K+, so it is relaxed from the healthy state
    and polished by least-squares Newton within that conservation class.
    """
    if kind not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    if kind != "full10":
        e = next(q for q in critical_manifold(p).equilibria() if q.label == "p_l1")
        return np.array([e.z]) if kind == "instantaneous1" else np.array([e.x, e.y, e.z])
    s0 = healthy_state(kind, p)
    sol = solve_ivp(lambda _, s: model.full_model_rhs(s, p), (0.0, 5e6), s0, method="BDF",
                    rtol=1e-10, atol=1e-12)
    s = sol.y[:, -1]
    for _ in range(20):
        r = model.full_model_rhs(s, p)
        if np.max(np.abs(r)) < 1e-12:
            break
        J = np.empty((10, 10))
        for j in range(10):
            d = np.zeros(10)
            d[j] = 1e-7 * max(1.0, abs(s[j]))
            J[:, j] = (model.full_model_rhs(s + d, p) - model.full_model_rhs(s - d, p)) / (2 * d[j])
        s = s - np.linalg.lstsq(J, r, rcond=1e-12)[0]
    return s


def initial_cell(cfg: NetworkConfig, p: ParameterSet = DEFAULT) -> np.ndarray:
    return healthy_state(cfg.model, p) if cfg.initial == "healthy" else rest_state(cfg.model, p)


# -- trajectories -----------------------------------------------------------------

@dataclass
class NetworkTrajectory:
    t: np.ndarray                              # ms, sampled
    data: dict[str, np.ndarray]                # name -> (n_samples, N)
    crossings: np.ndarray                      # first upward threshold crossing per cell, NaN if none
    injection_off: dict[int, float]            # 1-based cell -> time its injection stopped
    config: NetworkConfig
    p: ParameterSet = field(default=DEFAULT, repr=False)
    nsteps: int = 0
    wall_time: float = 0.0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    @property
    def N(self) -> int:
        return self.config.N

    def depolarized(self) -> np.ndarray:
        return np.isfinite(self.crossings)

    def crossing_times(self, threshold: float | None = None) -> np.ndarray:
        """First upward crossing of ``V_N`` per cell (linear interpolation)."""
        if threshold is None or threshold == self.config.threshold:
            return self.crossings
        return _first_crossings(self.t, self.data["V_N"], threshold)

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "parameter_hash": self.p.digest(),
            "samples": int(self.t.size),
            "steps": self.nsteps,
            "wall_time_s": self.wall_time,
            "injection_off_ms": {str(k): v for k, v in self.injection_off.items()},
            "crossing_times_ms": [None if not np.isfinite(c) else float(c) for c in self.crossings],
        }

    def to_csv(self, directory) -> list[Path]:
        """One ``<variable>.csv`` per variable (rows time, columns cells) plus ``metadata.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        header = "t_ms," + ",".join(f"cell{i + 1}" for i in range(self.N))
        for name, arr in self.data.items():
            path = out / f"{name}.csv"
            np.savetxt(path, np.column_stack([self.t, arr]), delimiter=",", header=header,
                       comments="", fmt="%.10g")
            written.append(path)
        path = out / "metadata.json"
        path.write_text(json.dumps(self.metadata(), indent=2))
        written.append(path)
        return written


def _first_crossings(t, V, threshold) -> np.ndarray:
    out = np.full(V.shape[1], np.nan)
    below = V[:-1] < threshold
    above = V[1:] >= threshold
    for i in range(V.shape[1]):
        k = np.nonzero(below[:, i] & above[:, i])[0]
        if k.size:
            k = k[0]
            v0, v1 = V[k, i], V[k + 1, i]
            out[i] = t[k] + (threshold - v0) / (v1 - v0) * (t[k + 1] - t[k])
    return out


# -- right-hand sides -----------------------------------------------------------------

class _Network:
    """Vector field of one model, with the latched switches as mutable state."""

    def __init__(self, cfg: NetworkConfig, p: ParameterSet, s0: np.ndarray):
        self.cfg, self.p, self.N = cfg, p, cfg.N
        self.dx = cfg.spacing(p)
        self.D_K = p.D_K_mm2_ms
        self.D_Na = p.D_Na_mm2_ms
        self.K_b = s0[-1] if cfg.K_e_boundary is None else cfg.K_e_boundary
        self.Na_b = (s0[8] if cfg.model == "full10" else np.nan) if cfg.Na_e_boundary is None else cfg.Na_e_boundary
        self.inject = np.zeros(self.N, bool)
        if cfg.injection.rate != 0:
            self.inject[cfg.injection.indices(self.N)] = True
        self.upper = np.zeros(self.N, bool)   # instantaneous model: branch of each cell
        self.L = _laplacian_matrix(self.N, self.dx)
        self.nvar = len(STATE_VARS[cfg.model])
        if cfg.model == "instantaneous1":
            cm = critical_manifold(p)
            self.cm = cm
            self.z_R, self.z_L = cm.fold_R.z, cm.fold_L.z
            self.x_R, self.x_L = cm.fold_R.x, cm.fold_L.x
            z0 = s0[-1] * np.ones(self.N)
            self._seed_x = cm.X(z0, "l")
            self._seed_y = cm.Y(z0)
            self._seed_upper = np.zeros(self.N, bool)

    def slot(self, name: str) -> slice:
        k = STATE_VARS[self.cfg.model].index(name)
        return slice(k * self.N, (k + 1) * self.N)

    def injection(self) -> np.ndarray:
        return np.where(self.inject, self.cfg.injection.rate, 0.0)

    # instantaneous model: voltages on the latched branches
    def voltages(self, z, upper=None):
        """Voltages solving the algebraic constraints on each cell's branch.

        Newton starts from the previous solution; cells that do not converge
        or land off their branch are re-solved with the bracketed solver.
        """
        upper = self.upper if upper is None else upper
        lo_l, hi_l = self.cm.domain("l")
        lo_r, hi_r = self.cm.domain("r")
        z = np.where(upper, np.clip(z, lo_r, hi_r), np.clip(z, lo_l, hi_l))
        p = self.p
        x, y = self._seed_x.copy(), self._seed_y.copy()
        jumped = upper != self._seed_upper
        if np.any(jumped):
            x[jumped] = np.where(upper[jumped], self.x_L + 10.0, self.x_R - 10.0)
        with np.errstate(all="ignore"):
            for _ in range(NEWTON_ITERS):
                x = x - model.f_tilde(x, z, p) / model.f_x(x, z, p)
                y = y - model.g_tilde(y, z, p) / model.g_y(y, z, p)
            ok_x = (np.abs(model.f_tilde(x, z, p)) < NEWTON_TOL) & np.where(upper, x >= self.x_L, x <= self.x_R)
            ok_y = np.abs(model.g_tilde(y, z, p)) < NEWTON_TOL
        for br, sel in (("l", ~upper & ~ok_x), ("r", upper & ~ok_x)):
            if np.any(sel):
                x[sel] = self.cm.X(z[sel], br)
        if not np.all(ok_y):
            y[~ok_y] = self.cm.Y(z[~ok_y])
        self._seed_x, self._seed_y, self._seed_upper = x, y, upper.copy()
        return x, y

    def rhs(self, _, s):
        p, m = self.p, self.cfg.model
        if m == "reduced3":
            x, y, z = s[:self.N], s[self.N:2 * self.N], s[2 * self.N:]
            return np.concatenate([
                model.f_tilde(x, z, p), model.g_tilde(y, z, p),
                model.h(x, y, z, p) + self.D_K * laplacian_term(z, self.K_b, self.dx) + self.injection(),
            ])
        if m == "instantaneous1":
            x, y = self.voltages(s)
            return model.h(x, y, s, p) + self.D_K * laplacian_term(s, self.K_b, self.dx) + self.injection()
        cells = s.reshape(10, self.N)
        d = model.full_model_rhs(cells, p)
        d[8] += self.D_Na * laplacian_term(cells[8], self.Na_b, self.dx)
        d[9] += self.D_K * laplacian_term(cells[9], self.K_b, self.dx) + self.injection()
        return d.ravel()

    def jacobian(self, _, s):
        x, y, z = s[:self.N], s[self.N:2 * self.N], s[2 * self.N:]
        p, D = self.p, sparse.diags
        return sparse.bmat([
            [D(model.f_x(x, z, p)), None, D(model.f_z(x, z, p))],
            [None, D(model.g_y(y, z, p)), D(model.g_z(y, z, p))],
            [D(model.h_x(x, y, z, p)), D(model.h_y(x, y, z, p)), D(model.h_z(x, y, z, p)) + self.D_K * self.L],
        ], format="csc")

    def sparsity(self):
        eye = sparse.identity(self.N, format="csr")
        band = (abs(self.L) > 0).astype(float)
        if self.cfg.model == "instantaneous1":
            return band
        blocks = sparse.kron(np.ones((10, 10)), eye, format="lil")
        blocks[8 * self.N:9 * self.N, 8 * self.N:9 * self.N] = band
        blocks[9 * self.N:, 9 * self.N:] = band
        return blocks.tocsr()

    def integrator_config(self, icfg: IntegratorConfig) -> IntegratorConfig:
        from dataclasses import replace

        if self.cfg.model == "reduced3":
            return replace(icfg, jacobian=self.jacobian)
        return replace(icfg, jac_sparsity=self.sparsity())

    def events(self) -> list[tuple[str, int, SectionEvent]]:
        """Pending switches: injection stops and (instantaneous model) branch changes."""
        out = []
        stop = self.cfg.injection.stop_voltage
        if self.cfg.model == "instantaneous1":
            # V_N reaches the stop voltage only by jumping to the upper branch
            for i in range(self.N):
                if self.upper[i]:
                    out.append(("drop", i, SectionEvent(i, self.z_L, -1)))
                else:
                    out.append(("jump", i, SectionEvent(i, self.z_R, +1)))
            return out
        k = self.slot("V_N").start
        for i in np.nonzero(self.inject)[0]:
            out.append(("inject", i, SectionEvent(k + i, stop, +1)))
        return out

    def neuron_voltage(self, s) -> np.ndarray:
        if self.cfg.model == "instantaneous1":
            return self.voltages(s)[0]
        return s[self.slot("V_N")]

    def outputs(self, t: np.ndarray, S: np.ndarray, latch: np.ndarray) -> dict[str, np.ndarray]:
        """Per-variable ``(n_samples, N)`` arrays; ``latch`` holds branch-jump times."""
        m = self.cfg.model
        if m != "instantaneous1":
            return {name: S[:, k * self.N:(k + 1) * self.N].copy()
                    for k, name in enumerate(STATE_VARS[m])}
        V_N, V_A = np.empty_like(S), np.empty_like(S)
        for j, tj in enumerate(t):
            V_N[j], V_A[j] = self.voltages(S[j], upper=latch <= tj)
        return {"V_N": V_N, "V_A": V_A, "K_e": S.copy()}


def simulate(cfg: NetworkConfig, p: ParameterSet = DEFAULT,
             icfg: IntegratorConfig = PDE_CONFIG) -> NetworkTrajectory:
    """Integrate the network from identical cells until every cell depolarizes or ``t_end``."""
    start = time.perf_counter()
    cell0 = initial_cell(cfg, p)
    net = _Network(cfg, p, cell0)
    N, thr = cfg.N, cfg.threshold
    s = np.repeat(cell0, N).astype(float)
    t, t_end = 0.0, cfg.duration()
    grid = np.arange(0.0, t_end + 0.5 * cfg.sample_dt, cfg.sample_dt)
    crossings = np.full(N, np.nan)
    latch = np.full(N, np.inf)
    injection_off: dict[int, float] = {}
    V0 = net.neuron_voltage(s)
    crossings[V0 >= thr] = 0.0
    times, states = [0.0], [s.copy()]
    run_cfg = net.integrator_config(icfg)
    nsteps = 0

    def track(t0, y0, t1, y1):
        if cfg.model == "instantaneous1":
            # branch voltages stay on one side of the threshold; jumps are handled by switch()
            return cfg.stop_when_depolarized and not np.any(np.isnan(crossings))
        v0, v1 = net.neuron_voltage(y0), net.neuron_voltage(y1)
        new = np.isnan(crossings) & (v0 < thr) & (v1 >= thr)
        if np.any(new):
            crossings[new] = t0 + (thr - v0[new]) / (v1[new] - v0[new]) * (t1 - t0)
        return cfg.stop_when_depolarized and not np.any(np.isnan(crossings))

    def switch(t, s):
        """Apply every pending switch whose condition holds at ``(t, s)``."""
        for kind, i, ev in net.events():
            g = ev.value(s)
            if not (g >= -SWITCH_TOL if ev.direction > 0 else g <= SWITCH_TOL):
                continue
            if kind == "inject":
                net.inject[i] = False
                injection_off[int(i) + 1] = t
            elif kind == "jump":
                v_before = net.neuron_voltage(s)[i]
                net.upper[i] = True
                latch[i] = t
                if net.inject[i]:
                    net.inject[i] = False
                    injection_off[int(i) + 1] = t
                if np.isnan(crossings[i]) and v_before < thr <= net.neuron_voltage(s)[i]:
                    crossings[i] = t
            else:
                net.upper[i] = False
                latch[i] = np.inf

    switch(t, s)
    while t < t_end:
        pending = net.events()
        tr = integrate(net.rhs, s, (t, t_end), run_cfg, event=[e for *_, e in pending] or None,
                       sample_times=grid, callback=track)
        nsteps += tr.nsteps
        keep = np.isin(tr.t, grid) & (tr.t > times[-1])
        times.extend(tr.t[keep])
        states.extend(tr.y[:, keep].T)
        t, s = float(tr.t[-1]), tr.final.copy()
        if tr.hit is None:
            break
        switch(t, s)
        if cfg.stop_when_depolarized and not np.any(np.isnan(crossings)):
            break
    if times[-1] < t:
        times.append(t)
        states.append(s.copy())
    T = np.asarray(times)
    S = np.asarray(states)
    return NetworkTrajectory(T, net.outputs(T, S, latch), crossings, injection_off, cfg, p,
                             nsteps, time.perf_counter() - start)


def estimate_speed(traj: NetworkTrajectory, cell_a: int = 10, cell_b: int = 20,
                   threshold: float | None = None) -> float:
    """Front speed (mm/min) from the threshold crossings of two 1-based cells."""
    for c in (cell_a, cell_b):
        if not 1 <= c <= traj.N:
            raise ValueError(f"cell {c} outside 1..{traj.N}")
    if cell_a == cell_b:
        raise ValueError("cells must differ")
    tc = traj.crossing_times(threshold)
    ta, tb = tc[cell_a - 1], tc[cell_b - 1]
    if not (np.isfinite(ta) and np.isfinite(tb)):
        raise NoWaveError(f"cell {cell_a if not np.isfinite(ta) else cell_b} never depolarizes")
    if ta == tb:
        raise NoWaveError("both cells cross at the same time")
    dx = traj.config.spacing(traj.p)
    return abs(cell_b - cell_a) * dx / abs(tb - ta) * 60_000.0
