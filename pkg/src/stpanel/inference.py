"""Bootstrap intervals, the two tests and their joint (backfitting) version.

Both tests compare a collection of estimates against a percentile bootstrap
interval and reject when at least ``100 * alpha`` percent of them fall
outside it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stpanel import rng as rngmod
from stpanel.forward_search import DEFAULT_TAU, PanelSearch, forward_search_panel
from stpanel.model import PanelDataset
from stpanel.sieve import RhoMatrix, collect_rho_estimates

StatKind = Literal["mean", "median"]
IntervalKind = Literal["pooled", "statistic"]

DEFAULT_B = 1000
DEFAULT_M = 100
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True, eq=False)
class BootstrapCI:
    lower: float
    upper: float
    point_estimate: float
    mc_variance: float
    alpha: float
    stat_kind: str
    B: int
    n: int
    interval: str = "statistic"
    statistics: NDArray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "point_estimate": self.point_estimate,
            "mc_variance": self.mc_variance,
            "alpha": self.alpha,
            "stat_kind": self.stat_kind,
            "B": self.B,
            "n": self.n,
            "interval": self.interval,
        }


def _resample_indices(n_values: int, n: int, B: int, seed: int, coord: int, workers: int) -> NDArray:
    def block(bs):
        return np.stack(
            [rngmod.substream(seed, rngmod.RESAMPLE, coord, b).integers(0, n_values, size=n) for b in bs]
        )

    if workers <= 1 or B < 2:
        return block(range(B))
    from concurrent.futures import ThreadPoolExecutor

    chunks = np.array_split(np.arange(B), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(block, chunks)))


def percentile_bootstrap_ci(
    values: ArrayLike,
    n: int,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    stat_kind: StatKind = "mean",
    seed: int = 0,
    *,
    interval: IntervalKind = "statistic",
    coord: int = 0,
    workers: int = 1,
) -> BootstrapCI:
    """Percentile bootstrap interval from ``B`` resamples of size ``n``.

    Each resample ``b`` is drawn with replacement from generator
    ``(seed, RESAMPLE, coord, b)``. The bootstrap point estimate is the
    average of the ``B`` resample statistics and ``mc_variance`` their
    variance with divisor ``B - 1``.

    ``interval`` picks where the ``(alpha/2, 1 - alpha/2)`` percentiles are
    taken: ``"statistic"`` uses the ``B`` resample statistics (an interval
    for the mean or median), ``"pooled"`` uses all ``n * B`` resampled
    estimates (an interval for an individual estimate).
    """
    v = np.asarray(values, dtype=float).ravel()
    if not 1 <= n < v.size:
        raise ValueError(f"need 1 <= n < {v.size}, got n={n}")
    if B < 100:
        raise ValueError(f"B must be >= 100, got {B}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    idx = _resample_indices(v.size, n, B, seed, coord, workers)
    samples = v[idx]
    if stat_kind == "mean":
        # summation rounding can leave a mean outside its own sample range
        stats = np.clip(samples.mean(axis=1), samples.min(axis=1), samples.max(axis=1))
    elif stat_kind == "median":
        stats = np.median(samples, axis=1)
    else:
        raise ValueError(f"unknown stat_kind {stat_kind!r}")
    if interval == "statistic":
        source = stats
    elif interval == "pooled":
        source = samples.ravel()
    else:
        raise ValueError(f"unknown interval kind {interval!r}")
    lower, upper = np.quantile(source, [alpha / 2, 1 - alpha / 2])
    point = float(np.clip(stats.mean(), stats.min(), stats.max()))
    return BootstrapCI(
        lower=float(lower),
        upper=float(upper),
        point_estimate=point,
        mc_variance=float(np.sum((stats - point) ** 2) / (B - 1)),
        alpha=alpha,
        stat_kind=stat_kind,
        B=B,
        n=n,
        interval=interval,
        statistics=stats,
    )


@dataclass(frozen=True, eq=False)
class TestOutcome:
    """Decision of one test.

    For a vector neighborhood variable, ``components`` holds one outcome per
    coordinate and the top level reports the worst coordinate.
    """

    __test__ = False  # not a pytest class

    kind: str
    reject: bool
    fraction_outside: float
    alpha: float
    ci: BootstrapCI
    n_statistics_checked: int
    per_item_outside: NDArray
    provenance: dict
    summaries: dict = field(default_factory=dict)
    components: tuple = ()
    details: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.reject != (self.fraction_outside >= self.alpha):
            raise AssertionError("decision inconsistent with fraction_outside")

    @property
    def coverage(self) -> float:
        """Percentage of checked estimates inside the interval."""
        return 100.0 * (1.0 - self.fraction_outside)

    def to_dict(self) -> dict:
        return {
            "test": self.kind,
            "reject": bool(self.reject),
            "fraction_outside": self.fraction_outside,
            "coverage_percent": self.coverage,
            "alpha": self.alpha,
            "n_statistics_checked": self.n_statistics_checked,
            "ci": self.ci.to_dict(),
            "summaries": {k: v.to_dict() for k, v in self.summaries.items()},
            "components": [c.to_dict() for c in self.components],
            "provenance": self.provenance,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def interval_test(
    kind: str,
    checked: ArrayLike,
    source: ArrayLike,
    n: int,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    stat_kind: StatKind = "mean",
    seed: int = 0,
    interval: IntervalKind = "pooled",
    coord: int = 0,
    workers: int = 1,
    provenance: dict | None = None,
    details=None,
) -> TestOutcome:
    """Bootstrap ``source`` into an interval and count how much of ``checked`` falls outside.

    Intervals for both the mean and the median are computed and reported in
    ``summaries``; ``stat_kind`` picks the one that drives the decision.
    """
    summaries = {
        sk: percentile_bootstrap_ci(
            source, n, B, alpha, sk, seed, interval=interval, coord=coord, workers=workers
        )
        for sk in ("mean", "median")
    }
    ci = summaries[stat_kind]
    checked = np.asarray(checked, dtype=float)
    outside = (checked < ci.lower) | (checked > ci.upper)
    frac = float(outside.mean())
    return TestOutcome(
        kind=kind,
        reject=frac >= alpha,
        fraction_outside=frac,
        alpha=alpha,
        ci=ci,
        n_statistics_checked=int(checked.size),
        per_item_outside=outside,
        provenance=dict(provenance or {}),
        summaries=summaries,
        details=details,
    )


def structural_change_test(
    dataset: PanelDataset,
    m: int = DEFAULT_M,
    n: int | None = None,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    stat_kind: StatKind = "mean",
    seed: int = 0,
    *,
    interval: IntervalKind = "pooled",
    workers: int = 1,
    ar_method: str = "cls",
    rho: RhoMatrix | None = None,
) -> TestOutcome:
    """Sieve-bootstrap test for a temporary change in the AR(1) parameter.

    The ``N * m`` replicated estimates are bootstrapped into an interval and
    then checked against it. ``n`` defaults to half the number of estimates.
    """
    if rho is None:
        rho = collect_rho_estimates(dataset, m, seed, workers=workers, ar_method=ar_method)
    values = rho.values()
    if n is None:
        n = math.ceil(values.size / 2)
    provenance = {
        "master_seed": int(seed),
        "m": rho.m,
        "n": n,
        "B": B,
        "alpha": alpha,
        "stat_kind": stat_kind,
        "interval": interval,
        "ar_method": ar_method,
        "sieve": rho.seed_provenance,
        "failed_units": {str(k): v for k, v in rho.failures.items()},
        "n_units": dataset.n_units,
        "n_times": dataset.n_times,
    }
    return interval_test(
        "structural", values, values, n, B, alpha, stat_kind, seed, interval, 0, workers, provenance, details=rho
    )


def spatial_heterogeneity_test(
    dataset: PanelDataset,
    l: int | None = None,
    tau: float = DEFAULT_TAU,
    n: int | None = None,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    stat_kind: StatKind = "mean",
    seed: int = 0,
    *,
    interval: IntervalKind = "pooled",
    workers: int = 1,
    search: PanelSearch | None = None,
    **search_kw,
) -> TestOutcome:
    """Forward-search test for units with a different neighborhood effect.

    The interval is built from the ``T`` robust estimates; the ``T``
    full-sample estimates are checked against it. Each coordinate of a vector
    neighborhood variable is tested separately (``coord`` selects its
    resampling streams) and the test rejects if any coordinate does.
    """
    if search is None:
        search = forward_search_panel(dataset, l=l, tau=tau, workers=workers, **search_kw)
    robust = search.robust_delta
    full = search.full_delta
    T = robust.shape[0]
    if n is None:
        n = math.ceil(T / 2)
    provenance = {
        "master_seed": int(seed),
        "l": search.l,
        "tau": search.tau,
        "n": n,
        "B": B,
        "alpha": alpha,
        "stat_kind": stat_kind,
        "interval": interval,
        "n_triggered": search.n_triggered,
        "n_units": dataset.n_units,
        "n_times": dataset.n_times,
        **{k: v for k, v in search_kw.items()},
    }
    parts = tuple(
        interval_test("spatial", full[:, j], robust[:, j], n, B, alpha, stat_kind, seed, interval, j, workers,
                 {**provenance, "coordinate": j}, details=search)
        for j in range(robust.shape[1])
    )
    if len(parts) == 1:
        return parts[0]
    worst = max(parts, key=lambda o: o.fraction_outside)
    return TestOutcome(
        kind="spatial",
        reject=any(p.reject for p in parts),
        fraction_outside=worst.fraction_outside,
        alpha=alpha,
        ci=worst.ci,
        n_statistics_checked=worst.n_statistics_checked,
        per_item_outside=np.column_stack([p.per_item_outside for p in parts]),
        provenance=provenance,
        summaries=worst.summaries,
        components=parts,
        details=search,
    )


def quasi_difference(a: NDArray, rho: float) -> NDArray:
    """``a_t - rho * a_{t-1}`` along axis 1; the first time point is kept as is."""
    out = np.array(a, dtype=float, copy=True)
    out[:, 1:] = a[:, 1:] - rho * a[:, :-1]
    return out


@dataclass(frozen=True, eq=False)
class JointOutcome:
    structural: TestOutcome
    spatial: TestOutcome
    iterations: int
    converged: bool
    history: list[dict]

    def to_dict(self) -> dict:
        return {
            "structural": self.structural.to_dict(),
            "spatial": self.spatial.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "history": self.history,
        }


def joint_test(
    dataset: PanelDataset,
    *,
    m: int = DEFAULT_M,
    B: int = DEFAULT_B,
    alpha: float = DEFAULT_ALPHA,
    stat_kind: StatKind = "mean",
    l: int | None = None,
    tau: float = DEFAULT_TAU,
    n_structural: int | None = None,
    n_spatial: int | None = None,
    max_iter: int = 20,
    converge_tol: float = 1e-4,
    seed: int = 0,
    interval: IntervalKind = "pooled",
    workers: int = 1,
    search_kw: dict | None = None,
) -> JointOutcome:
    """Alternate the two estimation phases until the estimates settle, then test.

    One iteration:

    (a) forward search on the working data gives robust coefficients per time
        point;
    (b) the neighborhood part ``w * delta_t`` is subtracted from the original
        response and the sieve phase is run on these partial residuals;
    (c) response, covariates and ``w`` are quasi-differenced with the mean
        unit AR(1) estimate, giving the working data for the next (a).

    Iteration stops once the largest absolute change in (mean robust
    coefficients, mean AR(1) estimate) is below ``converge_tol``, or after
    ``max_iter`` rounds. Both tests are then run on the last iterates:
    the spatial test on the last search, the structural test on the last
    partial residuals.
    """
    search_kw = dict(search_kw or {})
    working = dataset
    prev = None
    history: list[dict] = []
    converged = False
    for it in range(1, max_iter + 1):
        search = forward_search_panel(working, l=l, tau=tau, workers=workers, **search_kw)
        delta_t = search.robust_delta  # (T, q)
        spatial_part = np.einsum("itq,tq->it", dataset.w, delta_t)
        partial = dataset.with_response(dataset.y - spatial_part)
        rho = collect_rho_estimates(partial, m, seed, workers=workers)
        rho_bar = float(np.mean(rho.unit_rho))
        params = np.concatenate([search.robust_coef[:, 1:].mean(axis=0), [rho_bar]])
        change = float("inf") if prev is None else float(np.max(np.abs(params - prev)))
        history.append({"iteration": it, "rho_bar": rho_bar, "delta_bar": delta_t.mean(axis=0).tolist(),
                        "max_change": change})
        if change < converge_tol or (prev is None and math.isinf(converge_tol)):
            converged = True
            break
        prev = params
        working = PanelDataset(
            y=quasi_difference(dataset.y, rho_bar),
            x=np.stack([quasi_difference(dataset.x[:, :, j], rho_bar) for j in range(dataset.n_covariates)], axis=2),
            w=np.stack([quasi_difference(dataset.w[:, :, j], rho_bar) for j in range(dataset.n_spatial)], axis=2),
            neighborhood=dataset.neighborhood,
            unit_ids=dataset.unit_ids,
            time_ids=dataset.time_ids,
        )
    structural = structural_change_test(
        partial, m=m, n=n_structural, B=B, alpha=alpha, stat_kind=stat_kind, seed=seed,
        interval=interval, workers=workers, rho=rho,
    )
    spatial = spatial_heterogeneity_test(
        working, l=l, tau=tau, n=n_spatial, B=B, alpha=alpha, stat_kind=stat_kind, seed=seed,
        interval=interval, workers=workers, search=search, **search_kw,
    )
    extra = {"joint_iterations": len(history), "joint_converged": converged,
             "max_iter": max_iter, "converge_tol": converge_tol}
    structural.provenance.update(extra)
    spatial.provenance.update(extra)
    return JointOutcome(structural, spatial, len(history), converged, history)
