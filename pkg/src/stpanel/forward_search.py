"""Forward search over the cross-section at each time point.

Starting from the ``l`` observations with the smallest absolute residuals
under the full-sample fit, the subset grows by one observation per step: the
model is refitted on the subset, residuals are computed for all N units, and
the ``size + 1`` smallest are kept. The largest Cook's distance within each
subset fit is monitored; when it rises by more than ``tau`` between
consecutive steps the search stops and the fit *before* the jump is returned
as the robust fit. ``direction="absolute"`` also stops on large drops.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stpanel.errors import (
    InitialSubsetSingular,
    RankDeficient,
    StPanelError,
    UnestimableTimePoint,
)
from stpanel.model import ModelFit, PanelDataset, cooks_distances, fit_ols

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.25


@dataclass(frozen=True, eq=False)
class ForwardSearchTrace:
    subset_history: list[NDArray]
    max_cooks_d: list[float]
    stop_iteration: int
    triggered: bool
    robust_fit: ModelFit
    full_fit: ModelFit
    robust_coef: NDArray
    events: list[str] = field(default_factory=list)
    step_fits: list[ModelFit | None] = field(default_factory=list, repr=False)

    @property
    def robust_delta(self) -> NDArray:
        return self.robust_fit.delta_hat

    @property
    def full_delta(self) -> NDArray:
        return self.full_fit.delta_hat

    def records(self) -> list[dict]:
        """One row per step: iteration, subset size, max Cook's D, delta estimate(s)."""
        rows = []
        for it, (subset, d) in enumerate(zip(self.subset_history, self.max_cooks_d)):
            fit = self.step_fits[it] if it < len(self.step_fits) else None
            delta = [float("nan")] * self.full_fit.n_spatial if fit is None else [float(v) for v in fit.delta_hat]
            rows.append(
                {
                    "iteration": it,
                    "subset_size": int(subset.size),
                    "max_cooks_d": d,
                    "delta": delta,
                    "robust": it == self.stop_iteration,
                }
            )
        return rows


def default_initial_size(n_obs: int) -> int:
    return math.ceil(n_obs / 2)


def _smallest(abs_resid: NDArray, size: int) -> NDArray:
    # stable sort: ties go to the lower observation index
    return np.sort(np.argsort(abs_resid, kind="stable")[:size])


def forward_search(
    design: ArrayLike,
    targets: ArrayLike,
    l: int | None = None,
    tau: float = DEFAULT_TAU,
    n_spatial: int = 1,
    compare: Literal["consecutive", "initial"] = "consecutive",
    direction: Literal["increase", "absolute"] = "increase",
) -> ForwardSearchTrace:
    """Run one forward search.

    Parameters
    ----------
    design : array, shape (N, k)
    targets : array, shape (N,)
    l : int, optional
        Initial subset size, default ``ceil(N / 2)``; must satisfy
        ``k + 2 <= l < N``.
    tau : float
        Tolerance on the jump in max Cook's distance. ``inf`` disables stopping.
    compare : {"consecutive", "initial"}
        Compare each max Cook's D with the previous step or with the first one.
    direction : {"increase", "absolute"}
        Stop only when max Cook's D rises by more than ``tau``, or on any
        change larger than ``tau``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    N, k = X.shape
    if l is None:
        l = default_initial_size(N)
    if not k + 2 <= l < N:
        raise ValueError(f"initial subset size l={l} must satisfy {k + 2} <= l < {N}")
    if compare not in ("consecutive", "initial"):
        raise ValueError(f"unknown comparison {compare!r}")
    if direction not in ("increase", "absolute"):
        raise ValueError(f"unknown direction {direction!r}")

    full = fit_ols(X, y, n_spatial=n_spatial)
    subset = _smallest(np.abs(full.residuals), l)

    history: list[NDArray] = []
    maxd: list[float] = []
    fits: list[ModelFit | None] = []
    events: list[str] = []
    last_ok: int | None = None
    reference: float | None = None
    coef = full.coef

    while True:
        it = len(history)
        history.append(subset)
        try:
            fit = fit_ols(X[subset], y[subset], n_spatial=n_spatial)
        except RankDeficient as exc:
            if it == 0:
                raise InitialSubsetSingular(f"initial subset of size {l} is singular: {exc}") from exc
            events.append(f"iteration {it}: rank deficient subset of size {subset.size}, criterion skipped")
            log.debug(events[-1])
            fits.append(None)
            maxd.append(float("nan"))
        else:
            d = cooks_distances(fit)
            finite = np.isfinite(d)
            if not finite.all():
                events.append(f"iteration {it}: {int((~finite).sum())} observation(s) with leverage one excluded")
            cur = float(d[finite].max()) if finite.any() else float("nan")
            fits.append(fit)
            maxd.append(cur)
            coef = fit.coef
            if math.isfinite(cur):
                jump = None if reference is None else cur - reference
                if jump is not None and (jump if direction == "increase" else abs(jump)) > tau:
                    return ForwardSearchTrace(
                        subset_history=history,
                        max_cooks_d=maxd,
                        stop_iteration=last_ok,
                        triggered=True,
                        robust_fit=fits[last_ok],
                        full_fit=full,
                        robust_coef=fits[last_ok].coef,
                        events=events,
                        step_fits=fits,
                    )
                if compare == "consecutive" or reference is None:
                    reference = cur
                last_ok = it
        if subset.size == N:
            break
        subset = _smallest(np.abs(y - X @ coef), subset.size + 1)

    return ForwardSearchTrace(
        subset_history=history,
        max_cooks_d=maxd,
        stop_iteration=len(history) - 1,
        triggered=False,
        robust_fit=full,
        full_fit=full,
        robust_coef=full.coef,
        events=events,
        step_fits=fits,
    )


@dataclass(frozen=True, eq=False)
class PanelSearch:
    traces: list[ForwardSearchTrace]
    l: int
    tau: float

    @property
    def robust_delta(self) -> NDArray:
        """Shape (T, q)."""
        return np.array([tr.robust_delta for tr in self.traces])

    @property
    def full_delta(self) -> NDArray:
        return np.array([tr.full_delta for tr in self.traces])

    @property
    def robust_coef(self) -> NDArray:
        return np.array([tr.robust_coef for tr in self.traces])

    @property
    def n_triggered(self) -> int:
        return sum(tr.triggered for tr in self.traces)


def forward_search_panel(
    dataset: PanelDataset,
    l: int | None = None,
    tau: float = DEFAULT_TAU,
    *,
    workers: int = 1,
    compare: Literal["consecutive", "initial"] = "consecutive",
    direction: Literal["increase", "absolute"] = "increase",
    response: ArrayLike | None = None,
) -> PanelSearch:
    """Forward search independently at every time point.

    ``response`` replaces ``dataset.y`` (shape (N, T)) when given.

    Raises
    ------
    UnestimableTimePoint
        Listing every time point whose search could not be run.
    """
    y = dataset.y if response is None else np.asarray(response, dtype=float)
    if l is None:
        l = default_initial_size(dataset.n_units)

    def one(t):
        try:
            return forward_search(
                dataset.time_design(t), y[:, t], l=l, tau=tau,
                n_spatial=dataset.n_spatial, compare=compare, direction=direction,
            )
        except (StPanelError, ValueError) as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(dataset.n_times)))
    else:
        results = [one(t) for t in range(dataset.n_times)]
    failures = {t: f"{type(r).__name__}: {r}" for t, r in enumerate(results) if isinstance(r, Exception)}
    if failures:
        raise UnestimableTimePoint(failures)
    return PanelSearch(traces=results, l=l, tau=tau)
