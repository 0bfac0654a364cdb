"""Command-line front end: ``windnav {solve,global,verify,bounds,study} --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path as FsPath
from typing import Any, Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .bounds import for_optimum, violation_search
from .errors import ConfigError, WindExceedsAirspeedError, WindNavError
from .functional import KKTIterate, Multiplier
from .global_search import CANDIDATE_HEADER, global_optimize
from .kkt_solver import CSV_HEADER, SolveReport, contraction_diagnostics, solve
from .scenario import Scenario, load_scenario, with_seed
from .trajectory import Direction, norm, straight_line
from .verification import derivative_check
from .windfield import verify_field

log = logging.getLogger("windnav")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


def fmt(x: Any) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _json_default(o: Any):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _round17(o: Any) -> Any:
    if isinstance(o, float):
        return float(format(o, ".17g")) if math.isfinite(o) else None
    if isinstance(o, dict):
        return {k: _round17(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_round17(v) for v in o]
    return o


class Writer:
    """Collects output files and writes them all at the end of a run."""

    def __init__(self, out: FsPath) -> None:
        self.out = out
        self.files: dict[str, str] = {}

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        lines = [",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]
        self.files[name] = "\n".join(lines) + "\n"

    def json(self, name: str, data: Any) -> None:
        self.files[name] = json.dumps(_round17(data), indent=2, sort_keys=True, default=_json_default) + "\n"

    def flush(self) -> list[str]:
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text, encoding="utf-8")
        return sorted(self.files)


def _straight_run(sc: Scenario) -> SolveReport:
    start = KKTIterate.from_state(straight_line(sc.x_o, sc.x_d, sc.N))
    return solve(start, sc.wind, sc.vbar, sc.solver, sc.L_tilde)


def _trajectory_json(rep: SolveReport) -> dict:
    out = rep.final.z.to_json()
    out.update({"T": rep.T, "status": rep.status, "iterations": rep.iterations,
                "lambda": rep.final.lam.values.tolist()})
    return out


def cmd_solve(sc: Scenario, w: Writer, args) -> int:
    rep = _straight_run(sc)
    w.csv("solve_report.csv", CSV_HEADER, rep.csv_rows())
    w.json("trajectory.json", _trajectory_json(rep))
    w.csv("trajectory.csv", ("tau", "x", "y"), rep.final.z.csv_rows())
    log.info("status %s after %d iterations, T = %.12g", rep.status, rep.iterations, rep.T)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_global(sc: Scenario, w: Writer, args) -> int:
    res = global_optimize(sc)
    w.csv("candidates.csv", CANDIDATE_HEADER, res.csv_rows())
    w.json("graph.json", res.graph.stats())
    best = res.best
    summary = {"straight_T": res.straight_T, "best_T": best.refined_T,
               "distinct_optima": res.distinct_optima(1e-4 * sc.L_tilde / sc.vbar)}
    w.json("global.json", summary)
    if best.report is not None:
        w.json("trajectory.json", _trajectory_json(best.report))
    log.info("best refined T %s, straight %s", best.refined_T, res.straight_T)
    return EXIT_OK if best.is_optimum else EXIT_SOLVER


def cmd_verify(sc: Scenario, w: Writer, args) -> int:
    fc = verify_field(sc.wind, seed=sc.seed)
    dc = derivative_check(sc.wind, sc.vbar, args.samples, sc.seed, sc.x_o, sc.x_d)
    w.json("fd_report.json", {"field": {"max_rel_error": {str(k): v for k, v in fc.max_rel_error.items()},
                                        "passed": fc.passed},
                              "derivatives": dc.to_json()})
    rep = _straight_run(sc)
    if not rep.converged:
        w.json("violations.json", {"error": f"solver status {rep.status}"})
        return EXIT_SOLVER
    _, wb = sc.domain_and_bounds()
    bs = for_optimum(rep.final, wb, sc.vbar, sc.wind)
    vr = violation_search(bs, sc.wind, sc.vbar, args.samples * 50, sc.seed, rep.final,
                          control_scale=1e-3)
    w.json("violations.json", {"bounds_R": bs.R, **vr.to_json()})
    ok = fc.passed and dc.all_passed and vr.total_violations == 0
    log.info("field FD %s, derivatives %s, violations %d", fc.passed, dc.all_passed, vr.total_violations)
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_bounds(sc: Scenario, w: Writer, args) -> int:
    rep = _straight_run(sc)
    if not rep.converged:
        w.json("bounds.json", {"error": f"solver status {rep.status}"})
        return EXIT_SOLVER
    _, wb = sc.domain_and_bounds()
    bs = for_optimum(rep.final, wb, sc.vbar, sc.wind)
    w.json("bounds.json", bs.to_json())
    log.info("R = %.3g, R_C = %s (binding: %s)", bs.R, bs.R_C, bs.binding_cap)
    return EXIT_OK


STUDY_HEADER = ("start_radius", "iterations", "observed_ratio", "status")


def perturbed_start(chi: KKTIterate, radius: float, rng: np.random.Generator) -> KKTIterate:
    """Start at Y-infinity distance ``radius`` from ``chi`` along a smooth random direction."""
    N = chi.N
    tau = np.linspace(0, 1, N + 1)[1:-1]
    nodes = np.sin(np.pi * tau)[:, None] * rng.standard_normal(2)[None, :]
    nodes += 0.3 * np.sin(2 * np.pi * tau)[:, None] * rng.standard_normal(2)[None, :]
    d = Direction(rng.standard_normal() * 0.1, nodes)
    lam = 0.1 * rng.standard_normal(N)
    size = norm(d, "Zinf") + float(np.max(np.abs(lam)))
    s = radius / size
    return KKTIterate(chi.z.plus(d, s), Multiplier(chi.lam.values + s * lam))


def convergence_study(sc: Scenario, radii: Sequence[float]) -> tuple[list[tuple], float]:
    """Undamped runs from perturbed starts; returns table rows and the empirical radius."""
    ref = _straight_run(sc)
    if not ref.converged:
        raise WindNavError(f"reference solve failed: {ref.status}")
    rng = np.random.default_rng(sc.seed)
    rows = []
    r_emp = 0.0
    ok_so_far = True
    for r in sorted(radii):
        start = perturbed_start(ref.final, r, rng)
        rep = solve(start, sc.wind, sc.vbar, sc.solver, sc.L_tilde)
        ratio = math.nan
        if rep.converged and len(rep.iterates) >= 3:
            diag = contraction_diagnostics(rep, ref.final)
            ratio = max(diag.ratios) if diag.ratios else 0.0
        elif rep.converged:
            ratio = 0.0
        good = rep.converged and ratio < 1.0 and abs(rep.T - ref.T) <= 1e-9 * max(1.0, abs(ref.T))
        if ok_so_far and good:
            r_emp = r
        else:
            ok_so_far = False
        rows.append((r, rep.iterations, ratio, rep.status))
    return rows, r_emp


def cmd_study(sc: Scenario, w: Writer, args) -> int:
    radii = [float(x) for x in np.geomspace(args.r_min, args.r_max, args.radii)]
    rows, r_emp = convergence_study(sc, radii)
    w.csv("study.csv", STUDY_HEADER, rows)
    w.json("study.json", {"R_empirical": r_emp, "radii": radii})
    log.info("empirical radius %.3g", r_emp)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "global": cmd_global, "verify": cmd_verify,
            "bounds": cmd_bounds, "study": cmd_study}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="windnav", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario JSON file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        s.add_argument("--quiet", action="store_true")
        if name == "verify":
            s.add_argument("--samples", type=int, default=200)
        if name == "study":
            s.add_argument("--r-min", type=float, default=1e-3)
            s.add_argument("--r-max", type=float, default=0.5)
            s.add_argument("--radii", type=int, default=12)
    return p


def _manifest(args, cfg_bytes: bytes, status: int, files: list[str], seconds: float) -> dict:
    return {
        "command": args.command,
        "config": str(args.config),
        "config_sha256": hashlib.sha256(cfg_bytes).hexdigest(),
        "seed": args.seed,
        "exit_code": status,
        "outputs": files,
        "timings": {"total_seconds": seconds},
        "versions": {"windnav": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    out = FsPath(args.out)
    w = Writer(out)
    try:
        cfg_bytes = FsPath(args.config).read_bytes()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sc = load_scenario(args.config)
        if args.seed is not None:
            sc = with_seed(sc, args.seed)
        sc.domain_and_bounds()
        status = COMMANDS[args.command](sc, w, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except WindExceedsAirspeedError as exc:
        print(f"error: infeasible scenario: {exc}", file=sys.stderr)
        status = EXIT_INFEASIBLE
    except WindNavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    files = [f for f in w.files]
    w.json("manifest.json", _manifest(args, cfg_bytes, status, sorted(files + ["manifest.json"]),
                                      time.perf_counter() - t0))
    w.flush()
    return status


if __name__ == "__main__":
    sys.exit(main())
