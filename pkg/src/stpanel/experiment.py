"""Monte Carlo harness: run a grid of simulated cells and tabulate coverage."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from stpanel import rng as rngmod
from stpanel.dgp import ChangeSpec, DgpConfig, HeteroSpec, generate
from stpanel.errors import ConfigError, IncompleteGrid, StPanelError
from stpanel.inference import joint_test, spatial_heterogeneity_test, structural_change_test

log = logging.getLogger(__name__)

TestKind = Literal["structural", "spatial", "joint"]


@dataclass(frozen=True)
class ExperimentGrid:
    n_units: tuple[int, ...] = (20, 40, 60)
    n_times: tuple[int, ...] = (40, 50, 75)
    proportions: tuple[float, ...] = (0.05, 0.10, 0.15)
    positions: tuple[str, ...] = ("start", "middle", "end")
    neighborhoods: tuple[int, ...] = (1, 2, 3, 4)
    r2_levels: tuple[float | None, ...] = (0.95,)
    include_null: bool = True
    replications: int = 200
    master_seed: int = 0
    m: int = 100
    B: int = 1000
    alpha: float = 0.05
    stat_kind: str = "mean"
    interval: str = "pooled"
    l: int | None = None
    tau: float | None = None
    rho_prime: float = 0.75
    delta_prime: float = 1.25

    def __post_init__(self):
        for name in ("n_units", "n_times", "r2_levels"):
            if not getattr(self, name):
                raise ConfigError(f"grid axis {name} is empty")
        if not self.proportions and not self.include_null:
            raise ConfigError("grid has no cells")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentGrid:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> ExperimentGrid:
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self, test_kind: TestKind) -> list[dict]:
        """Cell coordinates in table order (null cell first in each N, T, R^2 block)."""
        out = []
        for r2, N, T in product(self.r2_levels, self.n_units, self.n_times):
            base = {"test": test_kind, "N": N, "T": T, "r2": r2}
            if self.include_null:
                out.append({**base, "proportion": None, "position": None, "n_neighborhoods": None})
            for p in self.proportions:
                if test_kind == "structural":
                    out += [{**base, "proportion": p, "position": pos, "n_neighborhoods": None}
                            for pos in self.positions]
                elif test_kind == "spatial":
                    out += [{**base, "proportion": p, "position": None, "n_neighborhoods": k}
                            for k in self.neighborhoods]
                else:
                    out += [{**base, "proportion": p, "position": pos, "n_neighborhoods": k}
                            for pos in self.positions for k in self.neighborhoods]
        return out


@dataclass
class CellResult:
    coords: dict
    mean_coverage: float
    rejection_rate: float
    replications: int
    records: list[dict] = field(default_factory=list, repr=False)
    failures: int = 0

    @property
    def key(self) -> str:
        return cell_key(self.coords)


def cell_key(coords: dict) -> str:
    return json.dumps(coords, sort_keys=True)


def _cell_file(coords: dict) -> str:
    parts = [coords["test"], f"N{coords['N']}", f"T{coords['T']}", f"r2-{coords['r2']}",
             f"p-{coords['proportion']}", f"pos-{coords['position']}", f"k-{coords['n_neighborhoods']}"]
    if "component" in coords:
        parts.append(coords["component"])
    return "__".join(str(p) for p in parts) + ".jsonl"


def replication_seed(master_seed: int, coords: dict, rep: int) -> int:
    """Seed shared by every cell with the same (N, T, R^2) at replication ``rep``.

    Injection coordinates are left out on purpose: the null cell and each
    alternative then see identical covariates, innovations and resampling
    streams, which makes the cells paired comparisons.
    """
    return rngmod.child_seed(master_seed, coords["N"], coords["T"], coords["r2"], rep)


def cell_config(coords: dict, seed: int, grid: ExperimentGrid) -> DgpConfig:
    change = hetero = None
    if coords["proportion"] is not None:
        if coords["position"] is not None:
            change = ChangeSpec(coords["proportion"], coords["position"], grid.rho_prime)
        if coords["n_neighborhoods"] is not None:
            hetero = HeteroSpec(coords["proportion"], coords["n_neighborhoods"], grid.delta_prime)
    return DgpConfig(coords["N"], coords["T"], r2_target=coords["r2"], change=change, hetero=hetero, seed=seed)


def _outcome_record(o) -> dict:
    return {
        "coverage": o.coverage,
        "fraction_outside": o.fraction_outside,
        "reject": bool(o.reject),
        "lower": o.ci.lower,
        "upper": o.ci.upper,
    }


def run_replication(grid: ExperimentGrid, coords: dict, rep: int) -> dict:
    """One simulated dataset and test. Errors are returned, not raised."""
    seed = replication_seed(grid.master_seed, coords, rep)
    rec: dict = {"rep": rep, "seed": seed}
    try:
        data, _ = generate(cell_config(coords, seed, grid))
        common = dict(B=grid.B, alpha=grid.alpha, stat_kind=grid.stat_kind, seed=seed, interval=grid.interval)
        search = {} if grid.tau is None else {"tau": grid.tau}
        kind = coords["test"]
        if kind == "structural":
            rec.update(_outcome_record(structural_change_test(data, m=grid.m, **common)))
        elif kind == "spatial":
            rec.update(_outcome_record(spatial_heterogeneity_test(data, l=grid.l, **search, **common)))
        else:
            res = joint_test(data, m=grid.m, l=grid.l, **search, **common)
            rec["structural"] = _outcome_record(res.structural)
            rec["spatial"] = _outcome_record(res.spatial)
            rec["converged"] = res.converged
    except (StPanelError, ValueError, np.linalg.LinAlgError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _aggregate(coords: dict, records: list[dict], component: str | None = None) -> CellResult:
    ok = []
    for r in sorted(records, key=lambda r: r["rep"]):
        if "error" in r:
            continue
        ok.append(r[component] if component else r)
    cov = [r["coverage"] for r in ok]
    rej = [r["reject"] for r in ok]
    c = dict(coords)
    if component:
        c["component"] = component
    return CellResult(
        coords=c,
        mean_coverage=float(np.mean(cov)) if cov else float("nan"),
        rejection_rate=float(np.mean(rej)) if rej else float("nan"),
        replications=len(ok),
        records=sorted(records, key=lambda r: r["rep"]),
        failures=len(records) - len(ok),
    )


def _read_checkpoint(path: Path) -> dict[int, dict]:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["rep"]] = rec
    return done


def _task(args):
    grid, coords, rep = args
    return coords, run_replication(grid, coords, rep)


def run_grid(
    grid: ExperimentGrid,
    test_kind: TestKind,
    *,
    workers: int = 1,
    checkpoint_dir: str | os.PathLike | None = None,
    cells: Iterable[dict] | None = None,
) -> list[CellResult]:
    """Run every (cell, replication) of ``grid`` and aggregate per cell.

    With ``checkpoint_dir`` each finished replication is appended to the
    cell's JSONL file and replications already present are not re-run.
    Results do not depend on ``workers`` or on resumption.
    """
    cell_list = list(cells) if cells is not None else grid.cells(test_kind)
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    records: dict[str, dict[int, dict]] = {}
    todo = []
    for coords in cell_list:
        key = cell_key(coords)
        done = _read_checkpoint(ckdir / _cell_file(coords)) if ckdir is not None else {}
        records[key] = done
        todo += [(grid, coords, rep) for rep in range(grid.replications) if rep not in done]

    def store(coords, rec):
        records[cell_key(coords)][rec["rep"]] = rec
        if ckdir is not None:
            with open(ckdir / _cell_file(coords), "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for coords, rec in pool.map(_task, todo, chunksize=max(1, len(todo) // (4 * workers))):
                store(coords, rec)
    else:
        for t in todo:
            store(*_task(t))

    results = []
    for coords in cell_list:
        recs = [records[cell_key(coords)][r] for r in range(grid.replications)]
        if test_kind == "joint":
            results += [_aggregate(coords, recs, "structural"), _aggregate(coords, recs, "spatial")]
        else:
            results.append(_aggregate(coords, recs))
    failed = [r.key for r in results if r.failures]
    if failed:
        log.warning("%d cell(s) had failed replications: %s", len(failed), failed)
    return results


# ---------------------------------------------------------------------------
# tables

CSV_FIELDS = ["test", "component", "N", "T", "r2", "proportion", "position", "n_neighborhoods",
              "mean_coverage", "rejection_rate", "replications", "failures"]


def _fmt(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def results_to_csv(results: list[CellResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        row = {k: _fmt(r.coords.get(k)) for k in CSV_FIELDS[:8]}
        row.update(mean_coverage=repr(r.mean_coverage), rejection_rate=repr(r.rejection_rate),
                   replications=r.replications, failures=r.failures)
        writer.writerow(row)
    return buf.getvalue()


def results_from_csv(text: str) -> list[CellResult]:
    def parse(v, kind):
        if v == "":
            return None
        return kind(v)

    out = []
    for row in csv.DictReader(io.StringIO(text)):
        coords = {
            "test": row["test"],
            "N": int(row["N"]),
            "T": int(row["T"]),
            "r2": parse(row["r2"], float),
            "proportion": parse(row["proportion"], float),
            "position": parse(row["position"], str),
            "n_neighborhoods": parse(row["n_neighborhoods"], int),
        }
        if row["component"]:
            coords["component"] = row["component"]
        out.append(CellResult(coords, float(row["mean_coverage"]), float(row["rejection_rate"]),
                              int(row["replications"]), failures=int(row["failures"])))
    return out


def _row_label(coords: dict, layout: str) -> str:
    if coords["proportion"] is None:
        return "No Structural Change" if layout == "by_position" else "No Spatial Heterogeneity"
    if layout == "by_position":
        return coords["position"].capitalize()
    k = coords["n_neighborhoods"]
    return f"{k} Neighborhood" + ("s" if k != 1 else "")


def emit_table(results: list[CellResult], layout: Literal["by_position", "by_neighborhoods"]) -> tuple[str, str]:
    """Render coverage percentages in the layout of the published tables.

    Rows are grouped into one panel per proportion, with the null row on top;
    columns are the (N, T) pairs. One table per (test component, R^2).

    Returns
    -------
    (text, csv) : tuple of str

    Raises
    ------
    IncompleteGrid
        If a (row, column) combination implied by the results is missing.
    """
    if layout not in ("by_position", "by_neighborhoods"):
        raise ValueError(f"unknown layout {layout!r}")
    axis = "position" if layout == "by_position" else "n_neighborhoods"
    groups: dict[tuple, list[CellResult]] = {}
    for r in results:
        groups.setdefault((r.coords["test"], r.coords.get("component"), r.coords["r2"]), []).append(r)

    blocks = []
    for (test, component, r2), rs in groups.items():
        cols = sorted({(r.coords["N"], r.coords["T"]) for r in rs})
        index = {}
        for r in rs:
            index[(r.coords["proportion"], r.coords[axis] if r.coords["proportion"] is not None else None,
                   r.coords["N"], r.coords["T"])] = r
        props = sorted({r.coords["proportion"] for r in rs if r.coords["proportion"] is not None})
        levels = sorted({r.coords[axis] for r in rs if r.coords["proportion"] is not None},
                        key=lambda v: ("start", "middle", "end").index(v) if axis == "position" else v)
        has_null = any(r.coords["proportion"] is None for r in rs)

        lines = []
        title = f"{test}" + (f" ({component})" if component else "") + f", R^2 = {r2}"
        lines.append(title)
        header = ["".ljust(26)] + [f"N={n},T={t}".rjust(12) for n, t in cols]
        lines.append("".join(header))

        def row(label, prop, level):
            cells = []
            for n, t in cols:
                r = index.get((prop, level, n, t))
                if r is None:
                    raise IncompleteGrid(f"missing cell {test} r2={r2} proportion={prop} {axis}={level} N={n} T={t}")
                cells.append(f"{r.mean_coverage:12.1f}")
            return label.ljust(26) + "".join(cells)

        if has_null:
            lines.append(row(_row_label({"proportion": None}, layout), None, None))
        for pi, p in enumerate(props):
            lines.append(f"({chr(ord('a') + pi)}) proportion = {round(100 * p)}%")
            for lev in levels:
                lines.append(row("  " + _row_label({"proportion": p, axis: lev, "n_neighborhoods": lev,
                                                    "position": lev}, layout), p, lev))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n", results_to_csv(results)


def summary(results: list[CellResult], grid: ExperimentGrid, test_kind: str) -> dict:
    return {
        "test": test_kind,
        "grid": grid.to_dict(),
        "cells": [
            {**r.coords, "mean_coverage": r.mean_coverage, "rejection_rate": r.rejection_rate,
             "replications": r.replications, "failures": r.failures}
            for r in results
        ],
        "failed_cells": [r.coords for r in results if r.failures],
    }
