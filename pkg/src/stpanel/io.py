"""Long-format panel CSV reading and writing.

Expected columns: ``unit, time, y, x1..xp, w[, neighborhood]``. Every
(unit, time) combination must appear exactly once.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from stpanel.errors import DuplicateCell, NonNumericField, PanelFormatError, UnbalancedPanel
from stpanel.model import PanelDataset


@dataclass
class ColumnMap:
    unit: str = "unit"
    time: str = "time"
    y: str = "y"
    x: list[str] | None = None  # default: every column named x<digits>
    w: list[str] = field(default_factory=lambda: ["w"])
    neighborhood: str | None = "neighborhood"

    def resolve(self, header: list[str]) -> ColumnMap:
        x = self.x
        if x is None:
            x = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:]))
        hood = self.neighborhood if self.neighborhood in header else None
        cm = ColumnMap(self.unit, self.time, self.y, list(x), list(self.w), hood)
        missing = [c for c in [cm.unit, cm.time, cm.y, *cm.x, *cm.w] if c not in header]
        if missing:
            raise PanelFormatError(f"missing column(s): {', '.join(missing)}")
        if not cm.x:
            raise PanelFormatError("no covariate columns (x1..xp) found")
        return cm


def _sort_labels(labels: list[str]) -> list[str]:
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def load_panel_csv(path: str | os.PathLike, column_map: ColumnMap | None = None) -> PanelDataset:
    """Read a long-format CSV into a balanced :class:`PanelDataset`.

    Units keep their order of first appearance; time points are sorted
    ascending (numerically when every label is a number).

    Raises
    ------
    UnbalancedPanel, DuplicateCell, NonNumericField, PanelFormatError
    """
    cm = column_map or ColumnMap()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PanelFormatError("empty file")
        cm = cm.resolve([h.strip() for h in reader.fieldnames])
        reader.fieldnames = [h.strip() for h in reader.fieldnames]
        cells: dict[tuple[str, str], tuple[int, list[float]]] = {}
        hoods: dict[str, int] = {}
        units: list[str] = []
        times: set[str] = set()
        numeric = [cm.y, *cm.x, *cm.w]
        for rownum, row in enumerate(reader, start=1):
            u, t = (row.get(cm.unit) or "").strip(), (row.get(cm.time) or "").strip()
            if not u or not t:
                raise PanelFormatError("empty unit or time label", rownum)
            vals = []
            for col in numeric:
                raw = (row.get(col) or "").strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise NonNumericField(f"column {col!r} has non-numeric value {raw!r}", rownum) from None
                if not np.isfinite(v):
                    raise NonNumericField(f"column {col!r} has non-finite value {raw!r}", rownum)
                vals.append(v)
            if (u, t) in cells:
                raise DuplicateCell(
                    f"duplicate cell unit={u!r}, time={t!r} (first seen at row {cells[(u, t)][0]})", rownum
                )
            cells[(u, t)] = (rownum, vals)
            if u not in hoods:
                units.append(u)
            if cm.neighborhood is not None:
                raw = (row.get(cm.neighborhood) or "").strip()
                try:
                    h = int(raw)
                except ValueError:
                    raise NonNumericField(f"neighborhood {raw!r} is not an integer", rownum) from None
                if hoods.setdefault(u, h) != h:
                    raise PanelFormatError(f"unit {u!r} has more than one neighborhood label", rownum)
            else:
                hoods.setdefault(u, 1)
            times.add(t)

    time_list = _sort_labels(list(times))
    N, T, p, q = len(units), len(time_list), len(cm.x), len(cm.w)
    arr = np.empty((N, T, 1 + p + q))
    for i, u in enumerate(units):
        for j, t in enumerate(time_list):
            cell = cells.get((u, t))
            if cell is None:
                raise UnbalancedPanel(u, t)
            arr[i, j] = cell[1]
    return PanelDataset(
        y=arr[:, :, 0],
        x=arr[:, :, 1 : 1 + p],
        w=arr[:, :, 1 + p :],
        neighborhood=np.array([hoods[u] for u in units]),
        unit_ids=tuple(units),
        time_ids=tuple(time_list),
    )


def write_panel_csv(dataset: PanelDataset, path: str | os.PathLike) -> None:
    """Write ``dataset`` in long format with full float precision."""
    p, q = dataset.n_covariates, dataset.n_spatial
    wcols = ["w"] if q == 1 else [f"w{j + 1}" for j in range(q)]
    header = ["unit", "time", "y", *[f"x{j + 1}" for j in range(p)], *wcols, "neighborhood"]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for i, u in enumerate(dataset.unit_ids):
            for t, tl in enumerate(dataset.time_ids):
                out.writerow(
                    [u, tl, repr(float(dataset.y[i, t])),
                     *(repr(float(v)) for v in dataset.x[i, t]),
                     *(repr(float(v)) for v in dataset.w[i, t]),
                     int(dataset.neighborhood[i])]
                )
