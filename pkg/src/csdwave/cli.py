"""Command-line front end: one subcommand per pipeline, one output directory per run.

Every run writes ``manifest.json`` (arguments, parameter hash, outputs, wall
time, key results) next to its CSV files.  The output root defaults to
``$CSDWAVE_OUTPUT_ROOT`` (or ``./csdwave-runs``) and each subcommand writes to
``<root>/<subcommand>`` unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import CSDError
from .params import DEFAULT, ParameterSet

OUTPUT_ROOT_ENV = "CSDWAVE_OUTPUT_ROOT"
DEFAULT_ROOT = "csdwave-runs"


class StageError(Exception):
    def __init__(self, stage: str, err: BaseException):
        super().__init__(f"{stage} failed: {type(err).__name__}: {err}")
        self.stage = stage


@contextmanager
def stage(name: str):
    """Tag errors raised inside with the module operation that failed."""
    try:
        yield
    except (CSDError, ValueError, ArithmeticError) as err:
        raise StageError(name, err) from err


# -- argument helpers --------------------------------------------------------------

def _pair(kind):
    def parse(text: str):
        parts = [s for s in str(text).replace(" ", "").split(",") if s]
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
        return tuple(kind(s) for s in parts)
    return parse


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _boundary(text: str):
    return None if str(text).lower() in ("rest", "initial", "none") else float(text)


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def read_config(path) -> dict[str, str]:
    """``name = value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'name = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _apply_config(sub: argparse.ArgumentParser, path) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, val in read_config(path).items():
        if key not in actions:
            raise ValueError(f"{path}: unknown key {key!r}")
        a = actions[key]
        if a.type is not None:
            defaults[key] = a.type(val)
        elif isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _flag(val)
        else:
            defaults[key] = val
    sub.set_defaults(**defaults)


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value file; flags override its entries")
    sub.add_argument("--params", help="parameter file (name = value per line)")
    sub.add_argument("--out", help="output directory (default <root>/<subcommand>)")


# -- run bookkeeping ------------------------------------------------------------------

class Run:
    def __init__(self, name: str, args: argparse.Namespace):
        self.name = name
        self.args = args
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_ROOT))
        self.dir = Path(args.out) if args.out else root / name
        self.dir.mkdir(parents=True, exist_ok=True)
        with stage("params.load"):
            self.p = ParameterSet.load(args.params) if args.params else DEFAULT
        self.outputs: list[Path] = []
        self.results: dict = {}
        self.start = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.outputs.append(p)
        return p

    def write_manifest(self) -> Path:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "subcommand": self.name,
            "config": config,
            "parameter_file": self.args.params,
            "parameter_hash": self.p.digest(),
            "outputs": [str(p) for p in self.outputs],
            "wall_clock_s": time.perf_counter() - self.start,
            "results": self.results,
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, default=_jsonable))
        return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return str(v)


# -- subcommands ----------------------------------------------------------------------

def cmd_simulate(run: Run, model_name: str) -> None:
    from . import pde

    a = run.args
    injection = pde.Injection(cells=a.inject_cells or None, rate=a.rate, stop_voltage=a.threshold)
    cfg = pde.NetworkConfig(N=a.cells, dx=a.dx, model=model_name, K_e_boundary=a.k_boundary,
                            initial=a.initial, injection=injection, t_end=a.t_end,
                            threshold=a.threshold, sample_dt=a.sample_dt,
                            stop_when_depolarized=not a.no_stop)
    with stage("pde.simulate"):
        traj = pde.simulate(cfg, run.p)
    run.outputs.extend(traj.to_csv(run.dir))
    run.results["depolarized_fraction"] = float(traj.depolarized().mean())
    run.results["end_time_ms"] = float(traj.t[-1])
    ca, cb = a.speed_cells
    try:
        run.results["speed_mm_min"] = pde.estimate_speed(traj, ca, cb)
    except CSDError as err:
        run.results["speed_mm_min"] = None
        run.results["speed_error"] = str(err)
    print(f"{model_name}: N = {a.cells}, depolarized {run.results['depolarized_fraction']:.0%}, "
          f"speed(cells {ca},{cb}) = {run.results['speed_mm_min']}")


def cmd_manifold(run: Run) -> None:
    from . import manifold

    with stage("manifold.critical_manifold"):
        cm = manifold.critical_manifold(run.p)
    with stage("manifold.find_equilibria"):
        eqs = cm.equilibria()
    fold_L, fold_R = cm.fold_L, cm.fold_R
    with open(run.path("equilibria.csv"), "w") as fh:
        fh.write("label,branch,x,y,z,dH,f_x,g_y\n")
        for e in eqs:
            fh.write(f"{e.label},{e.branch},{e.x:.17g},{e.y:.17g},{e.z:.17g},"
                     f"{e.dH:.17g},{e.f_x:.17g},{e.g_y:.17g}\n")
    with open(run.path("folds.csv"), "w") as fh:
        fh.write("fold,z,x\n")
        fh.write(f"L,{fold_L.z:.17g},{fold_L.x:.17g}\nR,{fold_R.z:.17g},{fold_R.x:.17g}\n")
    with stage("manifold.branch_solve"):
        for br in manifold.BRANCHES:
            cm.table(br).to_csv(run.path(f"branch_{br}.csv"))
    if not run.args.quick:
        with stage("manifold.H_star"):
            manifold.write_H_curves(run.path("H_curves.csv"), run.p)
        manifold.write_slow_eigenvalues(run.path("slow_eigenvalues.csv"), run.p)
        with stage("manifold.fast_eigenvalues"):
            manifold.write_fast_eigenvalues(run.path("fast_eigenvalues.csv"), run.args.c, run.p)
    run.results["equilibria"] = {e.label: [e.x, e.y, e.z] for e in eqs}
    run.results["fold_L"] = [fold_L.z, fold_L.x]
    run.results["fold_R"] = [fold_R.z, fold_R.x]
    print(f"{'point':6s} {'x':>16s} {'y':>16s} {'z':>16s}")
    for e in eqs:
        print(f"{e.label:6s} {e.x:#16.9g} {e.y:#16.9g} {e.z:#16.9g}")
    print(f"fold z^R = {fold_R.z:.9g} (x = {fold_R.x:.9g}); fold z^L = {fold_L.z:.9g} (x = {fold_L.x:.9g})")


def cmd_singular(run: Run) -> None:
    from . import model, singular

    a = run.args
    with stage("singular.find_c0"):
        res = singular.find_c0(a.c_bracket, run.p, a.seed_offset, a.tol)
    res.to_csv(run.path("singular_orbit.csv"))
    if a.d_grid:
        with stage("singular.shoot"):
            singular.write_d_curve(run.path("d_curve.csv"), np.linspace(*a.c_bracket, a.d_grid), run.p)
    run.results.update(c0=res.c, d=res.d, w_u=res.w_u, w_s=res.w_s,
                       velocity_mm_min=model.wave_velocity(res.c, run.p))
    print(f"c0 = {res.c:.10g}  (d = {res.d:.2e}, velocity {run.results['velocity_mm_min']:.6g} mm/min)")


def cmd_param(run: Run) -> None:
    from . import parameterization as pm

    a = run.args
    with stage("parameterization.find_c_hat"):
        best = pm.find_c_hat(a.c_bracket, a.order, run.p, a.delta, a.threshold, a.tol)
    best.to_csv(run.path("heteroclinic.csv"))
    best.parameterization.to_csv(run.path("coefficients.csv"))
    pm.write_invariance_curve(run.path("invariance_error.csv"), best.parameterization)
    if a.c_grid:
        with stage("parameterization.match"):
            ms = [pm.match(c, a.order, run.p, a.delta, a.threshold)
                  for c in np.linspace(*a.c_bracket, a.c_grid)]
        pm.HeteroclinicFit(np.array([m.c for m in ms]), np.array([m.hit_u for m in ms]),
                           np.array([m.hit_s for m in ms])).to_csv(run.path("section_hits.csv"))
    run.results.update(c_hat=best.c, velocity_mm_min=best.velocity, s_star=best.s_star,
                       order=a.order, mismatch=best.mismatch)
    print(f"c_hat = {best.c:.10g}  velocity {best.velocity:.6g} mm/min  (K = {a.order}, s* = {best.s_star:.4g})")


def cmd_fenichel(run: Run) -> None:
    from . import fenichel as fn

    a = run.args
    with stage("fenichel.find_c_tilde"):
        best = fn.find_c_tilde(a.c_bracket, run.p, a.seed_offset, a.delta, a.tol)
    best.to_csv(run.path("heteroclinic.csv"))
    if a.c_grid:
        grid = np.linspace(*a.c_bracket, a.c_grid)
        with stage("fenichel.match"):
            ms = [fn.match(c, run.p, a.seed_offset, a.delta) for c in grid]
        fit = fn.FenichelFit(grid, np.array([m.hit_u for m in ms]), np.array([m.hit_s for m in ms]))
        fit.to_csv(run.path("section_hits.csv"))
    run.results.update(c_tilde=best.c, velocity_mm_min=best.velocity, mismatch=best.mismatch)
    print(f"c_tilde = {best.c:.10g}  velocity {best.velocity:.6g} mm/min")


def _table_row(job):
    from . import pde

    N, model_name, cells, p = job
    cfg = pde.NetworkConfig(N=N, model=model_name)
    traj = pde.simulate(cfg, p)
    return N, pde.estimate_speed(traj, *cells), traj.wall_time


def cmd_speed_table(run: Run) -> None:
    a = run.args
    jobs = [(N, a.model, a.speed_cells, run.p) for N in a.sizes]
    with stage("pde.simulate"):
        if a.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=a.jobs) as pool:
                rows = list(pool.map(_table_row, jobs))
        else:
            rows = [_table_row(j) for j in jobs]
    with open(run.path("speed_table.csv"), "w") as fh:
        fh.write("N,speed_mm_min,wall_s\n")
        for N, v, w in rows:
            fh.write(f"{N},{v:.10g},{w:.3f}\n")
    run.results["speeds_mm_min"] = {str(N): v for N, v, _ in rows}
    for N, v, _ in rows:
        print(f"N = {N:4d}: {v:.4f} mm/min")


# -- parser -----------------------------------------------------------------------------

def _simulate_parser(sub):
    sub.add_argument("--cells", type=int, default=50)
    sub.add_argument("--dx", type=float, default=None, help="cell spacing in mm")
    sub.add_argument("--t-end", type=float, default=None, help="ms")
    sub.add_argument("--initial", choices=("healthy", "rest"), default="healthy")
    sub.add_argument("--k-boundary", type=_boundary, default=3.5,
                     help="Dirichlet [K+]_e in mM, or 'rest' for the initial value")
    sub.add_argument("--rate", type=float, default=0.005, help="K+ injection, mM/ms")
    sub.add_argument("--inject-cells", type=_int_list, default=None, help="1-based, default middle four")
    sub.add_argument("--threshold", type=float, default=-30.0, help="mV")
    sub.add_argument("--sample-dt", type=float, default=20.0, help="ms")
    sub.add_argument("--speed-cells", type=_pair(int), default=(10, 20))
    sub.add_argument("--no-stop", action="store_true", help="run to t-end even after all cells fire")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csdwave", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    for name, model_name in (("simulate-full", "full10"), ("simulate-reduced", "reduced3"),
                             ("simulate-instant", "instantaneous1")):
        s = subs.add_parser(name, help=f"{model_name} network simulation")
        _common(s)
        _simulate_parser(s)
        s.set_defaults(func=lambda run, m=model_name: cmd_simulate(run, m))

    s = subs.add_parser("manifold-dissect", help="branches, folds, equilibria and eigenvalues")
    _common(s)
    s.add_argument("--c", type=float, default=0.0731, help="speed for the fast-eigenvalue curves")
    s.add_argument("--quick", action="store_true", help="skip the H and eigenvalue curves")
    s.set_defaults(func=cmd_manifold)

    s = subs.add_parser("singular-speed", help="singular heteroclinic speed c0")
    _common(s)
    s.add_argument("--c-bracket", type=_pair(float), default=(0.04, 0.09))
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--seed-offset", type=float, default=1e-6)
    s.add_argument("--d-grid", type=int, default=0, help="number of c samples for d(c)")
    s.set_defaults(func=cmd_singular)

    s = subs.add_parser("param-speed", help="speed via the parameterization method")
    _common(s)
    s.add_argument("--order", type=int, default=55)
    s.add_argument("--c-bracket", type=_pair(float), default=(0.072, 0.075))
    s.add_argument("--threshold", type=float, default=1e-10)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--delta", type=float, default=1e-6)
    s.add_argument("--c-grid", type=int, default=0, help="number of c samples for the section hits")
    s.set_defaults(func=cmd_param)

    s = subs.add_parser("fenichel-speed", help="speed via the second-order slow manifold")
    _common(s)
    s.add_argument("--c-bracket", type=_pair(float), default=(0.072, 0.075))
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--seed-offset", type=float, default=1e-6)
    s.add_argument("--delta", type=float, default=1e-6)
    s.add_argument("--c-grid", type=int, default=0, help="number of c samples for the section hits")
    s.set_defaults(func=cmd_fenichel)

    s = subs.add_parser("speed-table", help="PDE front speed against array size")
    _common(s)
    s.add_argument("--sizes", type=_int_list, default=(50, 100))
    s.add_argument("--model", choices=("reduced3", "instantaneous1", "full10"), default="reduced3")
    s.add_argument("--speed-cells", type=_pair(int), default=(10, 20))
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_speed_table)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            _apply_config(sub, args.config)
        except (OSError, ValueError, argparse.ArgumentTypeError) as err:
            print(f"csdwave {args.command}: config: {err}", file=sys.stderr)
            return 2
        args = parser.parse_args(argv)
    try:
        run = Run(args.command, args)
        args.func(run)
    except StageError as err:
        print(f"csdwave {args.command}: {err}", file=sys.stderr)
        return 1
    run.write_manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
