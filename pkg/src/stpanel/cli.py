"""Command-line entry point: ``stpanel <subcommand> ...``.

Exit status is 0 whenever the run completes, whatever the test decides (the
decision is in the JSON report); 1 on operational errors; 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from stpanel import __version__
from stpanel.dgp import ChangeSpec, DgpConfig, HeteroSpec, generate
from stpanel.errors import StPanelError
from stpanel.experiment import ExperimentGrid, emit_table, results_to_csv, run_grid, summary
from stpanel.forward_search import DEFAULT_TAU
from stpanel.inference import (
    DEFAULT_ALPHA,
    DEFAULT_B,
    DEFAULT_M,
    joint_test,
    spatial_heterogeneity_test,
    structural_change_test,
)
from stpanel.io import ColumnMap, load_panel_csv, write_panel_csv

log = logging.getLogger("stpanel")

TEST_COMMANDS = ("test-structural", "test-spatial", "test-joint")


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _csv_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stpanel",
        description="Bootstrap tests for temporary structural change and spatial heterogeneity in panel data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic panel CSV and its ground truth")
    sim.add_argument("--config", type=Path, help="JSON file with DGP settings (keys as in DgpConfig)")
    sim.add_argument("--n-units", type=int, default=20)
    sim.add_argument("--n-times", type=int, default=40)
    sim.add_argument("--r2", type=float, default=None, help="target R^2 (default: unscaled errors)")
    sim.add_argument("--change-proportion", type=float)
    sim.add_argument("--change-position", choices=["start", "middle", "end"], default="start")
    sim.add_argument("--hetero-proportion", type=float)
    sim.add_argument("--hetero-neighborhoods", type=int, default=4)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", type=Path, required=True, help="panel CSV path; ground truth goes to <stem>.truth.json")

    for name in TEST_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name[5:]} test on a panel CSV")
        p.add_argument("--input", type=Path, required=True)
        p.add_argument("--output", type=Path, required=True, help="JSON report path")
        p.add_argument("--alpha", type=_alpha, default=DEFAULT_ALPHA)
        p.add_argument("--B", type=int, default=DEFAULT_B, help="bootstrap resamples")
        p.add_argument("--stat", choices=["mean", "median"], default="mean")
        p.add_argument("--interval", choices=["pooled", "statistic"], default="pooled")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--unit-col", default="unit")
        p.add_argument("--time-col", default="time")
        p.add_argument("--y-col", default="y")
        p.add_argument("--x-cols", type=_csv_list, default=None, help="comma separated (default: x1..xp)")
        p.add_argument("--w-cols", type=_csv_list, default=["w"])
        p.add_argument("--neighborhood-col", default="neighborhood")
        if name in ("test-structural", "test-joint"):
            p.add_argument("--m", type=int, default=DEFAULT_M, help="sieve replicates per unit")
            p.add_argument("--n-structural", type=int, default=None)
        if name in ("test-spatial", "test-joint"):
            p.add_argument("--l", type=int, default=None, help="initial subset size (default ceil(N/2))")
            p.add_argument("--tau", type=float, default=DEFAULT_TAU)
            p.add_argument("--direction", choices=["increase", "absolute"], default="increase")
            p.add_argument("--n-spatial", type=int, default=None)
            if name == "test-spatial":
                p.add_argument("--trace-out", type=Path, default=None,
                               help="CSV of forward-search steps per time point, for plotting")
        if name == "test-joint":
            p.add_argument("--max-iter", type=int, default=20)
            p.add_argument("--converge-tol", type=float, default=1e-4)

    exp = sub.add_parser("experiment", help="run a simulation grid")
    exp.add_argument("--grid", type=Path, required=True, help="JSON or YAML grid file")
    exp.add_argument("--test", choices=["structural", "spatial", "joint"], required=True)
    exp.add_argument("--out-dir", type=Path, required=True)
    exp.add_argument("--workers", type=int, default=1)
    return parser


def _simulate(args) -> dict:
    if args.config is not None:
        cfg = DgpConfig.from_dict(json.loads(args.config.read_text()))
    else:
        change = ChangeSpec(args.change_proportion, args.change_position) if args.change_proportion else None
        hetero = HeteroSpec(args.hetero_proportion, args.hetero_neighborhoods) if args.hetero_proportion else None
        cfg = DgpConfig(args.n_units, args.n_times, r2_target=args.r2, change=change, hetero=hetero, seed=args.seed)
    data, truth = generate(cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(data, args.out)
    truth_path = args.out.with_name(args.out.stem + ".truth.json")
    truth_path.write_text(json.dumps(truth.to_dict(), indent=2))
    print(f"wrote {args.out} ({data.n_units} units x {data.n_times} times) and {truth_path}")
    return {"panel": str(args.out), "truth": str(truth_path)}


def _settings(args) -> dict:
    skip = {"command", "output", "verbose"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        out[k] = str(v.resolve()) if isinstance(v, Path) else v
    return out


def _run_test(args) -> dict:
    cm = ColumnMap(args.unit_col, args.time_col, args.y_col, args.x_cols, args.w_cols, args.neighborhood_col)
    data = load_panel_csv(args.input, cm)
    common = dict(B=args.B, alpha=args.alpha, stat_kind=args.stat, seed=args.seed,
                  interval=args.interval, workers=args.workers)
    if args.command == "test-structural":
        res = structural_change_test(data, m=args.m, n=args.n_structural, **common)
        body = res.to_dict()
        lines = [_line("structural change", res)]
    elif args.command == "test-spatial":
        res = spatial_heterogeneity_test(data, l=args.l, tau=args.tau, n=args.n_spatial,
                                         direction=args.direction, **common)
        body = res.to_dict()
        lines = [_line("spatial heterogeneity", res)]
        if args.trace_out is not None:
            _write_trace(res.details, data.time_ids, args.trace_out)
            lines.append(f"wrote forward-search trace to {args.trace_out}")
    else:
        res = joint_test(data, m=args.m, l=args.l, tau=args.tau, n_structural=args.n_structural,
                         n_spatial=args.n_spatial, max_iter=args.max_iter, converge_tol=args.converge_tol,
                         search_kw={"direction": args.direction}, **common)
        body = res.to_dict()
        lines = [_line("structural change", res.structural), _line("spatial heterogeneity", res.spatial),
                 f"backfitting: {res.iterations} iteration(s), converged={res.converged}"]
    report = {
        "command": args.command,
        "version": __version__,
        "settings": _settings(args),
        "result": body,
    }
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text(json.dumps(report, indent=2))
    for line in lines:
        print(line)
    return report


def _write_trace(search, time_ids, path: Path) -> None:
    q = search.robust_delta.shape[1]
    dcols = ["delta"] if q == 1 else [f"delta{j + 1}" for j in range(q)]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["time", "iteration", "subset_size", "max_cooks_d", *dcols, "robust"])
        for t, trace in zip(time_ids, search.traces):
            for rec in trace.records():
                out.writerow([t, rec["iteration"], rec["subset_size"], repr(rec["max_cooks_d"]),
                              *(repr(v) for v in rec["delta"]), int(rec["robust"])])


def _line(name, res) -> str:
    verdict = "REJECT" if res.reject else "do not reject"
    return (f"{name}: {verdict} H0 -- {res.coverage:.1f}% of {res.n_statistics_checked} estimates inside "
            f"[{res.ci.lower:.4f}, {res.ci.upper:.4f}] (alpha={res.alpha})")


def _experiment(args) -> dict:
    grid = ExperimentGrid.from_file(args.grid)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    results = run_grid(grid, args.test, workers=args.workers, checkpoint_dir=args.out_dir / "checkpoints")
    layout = "by_position" if args.test == "structural" else "by_neighborhoods"
    if args.test == "joint":
        text = ""
        for comp, lay in (("structural", "by_position"), ("spatial", "by_neighborhoods")):
            part = [r for r in results if r.coords["component"] == comp]
            text += emit_table(_project(part, lay), lay)[0] + "\n"
        csv_text = results_to_csv(results)
    else:
        text, csv_text = emit_table(results, layout)
    (args.out_dir / "table.txt").write_text(text)
    (args.out_dir / "results.csv").write_text(csv_text)
    (args.out_dir / "summary.json").write_text(json.dumps(summary(results, grid, args.test), indent=2))
    print(text)
    return {"out_dir": str(args.out_dir)}


def _project(results, layout):
    """Collapse the joint grid onto one injection axis for display."""
    from stpanel.experiment import CellResult

    keep = "position" if layout == "by_position" else "n_neighborhoods"
    drop = "n_neighborhoods" if keep == "position" else "position"
    groups: dict = {}
    for r in results:
        c = dict(r.coords)
        if c["proportion"] is not None:
            c[drop] = None
        groups.setdefault(json.dumps(c, sort_keys=True), []).append(r)
    out = []
    for key, rs in groups.items():
        reps = sum(r.replications for r in rs)
        cov = sum(r.mean_coverage * r.replications for r in rs) / reps if reps else float("nan")
        rej = sum(r.rejection_rate * r.replications for r in rs) / reps if reps else float("nan")
        out.append(CellResult(json.loads(key), cov, rej, reps))
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            _simulate(args)
        elif args.command in TEST_COMMANDS:
            _run_test(args)
        else:
            _experiment(args)
    except (StPanelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def rerun_argv(report: dict, output: str) -> list[str]:
    """Rebuild the command line that produced ``report``, writing to ``output``."""
    s = report["settings"]
    argv = [report["command"], "--output", output]
    flags = {
        "input": "--input", "alpha": "--alpha", "B": "--B", "stat": "--stat", "interval": "--interval",
        "seed": "--seed", "workers": "--workers", "unit_col": "--unit-col", "time_col": "--time-col",
        "y_col": "--y-col", "x_cols": "--x-cols", "w_cols": "--w-cols", "neighborhood_col": "--neighborhood-col",
        "m": "--m", "n_structural": "--n-structural", "l": "--l", "tau": "--tau", "direction": "--direction",
        "n_spatial": "--n-spatial", "max_iter": "--max-iter", "converge_tol": "--converge-tol",
    }
    for key, flag in flags.items():
        v = s.get(key)
        if v is None:
            continue
        argv += [flag, ",".join(v) if isinstance(v, list) else repr(v) if isinstance(v, float) else str(v)]
    return argv


if __name__ == "__main__":
    sys.exit(main())
