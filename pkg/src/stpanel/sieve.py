"""AR-sieve replication of per-unit residual processes.

For each spatial unit the time-series regression is fitted, an AR(1) is fitted
to its residuals, and ``m`` residual series are regenerated by recursing the
fitted AR(1) with innovations resampled from the centred empirical innovation
distribution. Each replicate is added back to the fitted values, the
regression is refitted and the AR(1) re-estimated, giving an ``N x m`` matrix
of autoregressive estimates.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import lfilter

from stpanel import rng as rngmod
from stpanel.errors import DegenerateSeries, RankDeficient, UnestimableUnit
from stpanel.model import PanelDataset, ar1_slopes, fit_ar1, fit_ols, residual_maker

log = logging.getLogger(__name__)

BURN_IN = 50
SEED_SCHEME = "SeedSequence(master_seed, spawn_key=(1, unit, replicate)) -> PCG64"


@dataclass(frozen=True, eq=False)
class RhoMatrix:
    """Replicated AR(1) estimates, one row per unit.

    ``estimates[i, k]`` is NaN when replicate ``k`` of unit ``i`` failed; the
    reasons are kept in ``failures``.
    """

    estimates: NDArray
    unit_rho: NDArray
    master_seed: int
    failures: dict = field(default_factory=dict)
    seed_scheme: str = SEED_SCHEME
    burn_in: int = BURN_IN

    @property
    def m(self) -> int:
        return self.estimates.shape[1]

    @property
    def n_units(self) -> int:
        return self.estimates.shape[0]

    def values(self) -> NDArray:
        """All successful estimates, flattened unit-major."""
        flat = self.estimates.ravel()
        return flat[np.isfinite(flat)]

    @property
    def seed_provenance(self) -> dict:
        return {"master_seed": self.master_seed, "scheme": self.seed_scheme, "burn_in": self.burn_in}


def _draws(rng: np.random.Generator, n_pool: int, size: int) -> NDArray:
    return rng.integers(0, n_pool, size=size)


def sieve_replicate(
    innovations: ArrayLike,
    rho_hat: float,
    length: int,
    count: int,
    rng: np.random.Generator | Sequence[np.random.Generator],
    burn_in: int = BURN_IN,
) -> NDArray:
    """Generate ``count`` AR(1) series of ``length`` from resampled innovations.

    Innovations are centred, then drawn i.i.d. with replacement; each series
    starts at zero ``burn_in`` steps before the kept window.

    ``rng`` is either one generator shared by all replicates or a sequence of
    ``count`` generators, one per replicate.

    Returns
    -------
    ndarray, shape (count, length)
    """
    a = np.asarray(innovations, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("innovation pool is empty")
    if not abs(rho_hat) < 1:
        raise ValueError(f"|rho_hat| must be < 1, got {rho_hat}")
    if count == 0:
        return np.empty((0, length))
    centred = np.zeros_like(a) if np.ptp(a) == 0 else a - a.mean()
    steps = length + burn_in
    if isinstance(rng, np.random.Generator):
        idx = _draws(rng, a.size, (count, steps))
    else:
        if len(rng) != count:
            raise ValueError(f"need {count} generators, got {len(rng)}")
        idx = np.stack([_draws(g, a.size, steps) for g in rng])
    shocks = centred[idx]
    series = lfilter([1.0], [1.0, -rho_hat], shocks, axis=1)
    return series[:, burn_in:]


def replicate_rho(
    design: NDArray,
    fitted: NDArray,
    rho_hat: float,
    innovations: NDArray,
    rngs: Sequence[np.random.Generator],
    burn_in: int = BURN_IN,
) -> NDArray:
    """Steps T.3 to T.5 for one unit: replicate, rebuild, refit, re-estimate.

    Refitting ``fitted + e*`` on ``design`` leaves residuals ``(I - H) e*``;
    that identity is used to refit every replicate with one product. A
    replicate that is identically zero (constant innovation pool) reproduces
    its generating ``rho_hat``.
    """
    T = design.shape[0]
    e_star = sieve_replicate(innovations, rho_hat, T, len(rngs), rngs, burn_in=burn_in)
    y_star = fitted[None, :] + e_star
    new_resid = y_star @ residual_maker(design)
    rho = ar1_slopes(new_resid)
    zero = ~np.any(e_star, axis=1)
    rho[zero] = rho_hat
    return rho


def _unit_estimates(dataset: PanelDataset, i: int, m: int, seed: int, ar_method: str):
    design = dataset.unit_design(i)
    fit = fit_ols(design, dataset.y[i], n_spatial=dataset.n_spatial)
    ar = fit_ar1(fit.residuals, method=ar_method)
    rngs = [rngmod.substream(seed, rngmod.SIEVE, i, k) for k in range(m)]
    return ar.rho_hat, replicate_rho(design, fit.fitted, ar.rho_hat, ar.innovations, rngs)


def collect_rho_estimates(
    dataset: PanelDataset,
    m: int,
    seed: int,
    *,
    workers: int = 1,
    ar_method: str = "cls",
) -> RhoMatrix:
    """Run the sieve phase for every unit and collect the ``N x m`` estimates.

    Raises
    ------
    UnestimableUnit
        If some unit yields no successful replicate.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    N = dataset.n_units

    def one(i):
        try:
            return _unit_estimates(dataset, i, m, seed, ar_method)
        except (RankDeficient, DegenerateSeries) as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(N)))
    else:
        results = [one(i) for i in range(N)]

    est = np.full((N, m), np.nan)
    unit_rho = np.full(N, np.nan)
    failures: dict[int, str] = {}
    for i, res in enumerate(results):
        if isinstance(res, Exception):
            raise UnestimableUnit(i, f"{type(res).__name__}: {res}")
        unit_rho[i], row = res
        bad = ~np.isfinite(row)
        if bad.all():
            raise UnestimableUnit(i, "every replicate series was degenerate")
        if bad.any():
            failures[i] = f"{int(bad.sum())} degenerate replicate(s)"
            log.warning("unit %d: %s", i, failures[i])
        est[i] = row
    est.flags.writeable = False
    unit_rho.flags.writeable = False
    return RhoMatrix(estimates=est, unit_rho=unit_rho, master_seed=int(seed), failures=failures)
