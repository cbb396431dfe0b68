"""Panel data container and the primitive estimators.

The model is ``y_it = b0 + x_it' b + w_it' d + e_it`` with AR(1) errors
``e_it = rho * e_i,t-1 + a_it``.  Everything here is a pure function of its
inputs; returned objects hold read-only arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from stpanel.errors import DegenerateSeries, DimensionMismatch, LeverageOne, RankDeficient

RANK_TOL = 1e-10
RHO_BOUND = 0.999
LEVERAGE_TOL = 1e-10


def _frozen(a: ArrayLike, dtype=float) -> NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced N x T panel.

    Parameters
    ----------
    y : array, shape (N, T)
    x : array, shape (N, T, p)
        Covariates. A 2-D array is read as a single covariate.
    w : array, shape (N, T) or (N, T, q)
        Neighborhood-system variable(s).
    neighborhood : array of int, shape (N,)
        Neighborhood label of each unit, in ``1..K``.
    unit_ids, time_ids : sequences, optional
        Opaque labels; default to ``0..N-1`` and ``0..T-1``.
    """

    y: NDArray
    x: NDArray
    w: NDArray
    neighborhood: NDArray
    unit_ids: tuple = ()
    time_ids: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise DimensionMismatch(f"y must be 2-D (N, T), got shape {y.shape}")
        n, t = y.shape
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 2:
            w = w[:, :, None]
        if x.ndim != 3 or x.shape[:2] != (n, t):
            raise DimensionMismatch(f"x shape {x.shape} does not match y shape {y.shape}")
        if w.ndim != 3 or w.shape[:2] != (n, t):
            raise DimensionMismatch(f"w shape {w.shape} does not match y shape {y.shape}")
        hood = np.asarray(self.neighborhood)
        if hood.shape != (n,):
            raise DimensionMismatch(f"neighborhood must have shape ({n},), got {hood.shape}")
        if not np.issubdtype(hood.dtype, np.integer):
            if not np.all(np.equal(np.mod(hood, 1), 0)):
                raise ValueError("neighborhood labels must be integers")
            hood = hood.astype(int)
        if n < 2 or t < 3:
            raise DimensionMismatch(f"need N >= 2 and T >= 3, got N={n}, T={t}")
        if hood.size and hood.min() < 1:
            raise ValueError("neighborhood labels must be >= 1")
        for name, arr in (("y", y), ("x", x), ("w", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains missing or non-finite values")
        unit_ids = tuple(self.unit_ids) if len(self.unit_ids) else tuple(range(n))
        time_ids = tuple(self.time_ids) if len(self.time_ids) else tuple(range(t))
        if len(unit_ids) != n or len(time_ids) != t:
            raise DimensionMismatch("unit_ids/time_ids lengths do not match (N, T)")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "neighborhood", _frozen(hood, dtype=int))
        object.__setattr__(self, "unit_ids", unit_ids)
        object.__setattr__(self, "time_ids", time_ids)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_times(self) -> int:
        return self.y.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[2]

    @property
    def n_spatial(self) -> int:
        return self.w.shape[2]

    @property
    def n_params(self) -> int:
        return 1 + self.n_covariates + self.n_spatial

    def unit_design(self, i: int) -> NDArray:
        """Time-series design ``[1, X_i, W_i]`` for unit ``i``, shape (T, k)."""
        return np.column_stack([np.ones(self.n_times), self.x[i], self.w[i]])

    def time_design(self, t: int) -> NDArray:
        """Cross-sectional design ``[1, X_t, W_t]`` at time ``t``, shape (N, k)."""
        return np.column_stack([np.ones(self.n_units), self.x[:, t], self.w[:, t]])

    def pooled_design(self) -> NDArray:
        """Stacked design over all (unit, time) cells, unit-major."""
        n, t = self.y.shape
        return np.column_stack(
            [np.ones(n * t), self.x.reshape(n * t, -1), self.w.reshape(n * t, -1)]
        )

    def with_response(self, y: ArrayLike) -> PanelDataset:
        return PanelDataset(y, self.x, self.w, self.neighborhood, self.unit_ids, self.time_ids)

    def equals(self, other: PanelDataset, atol: float = 0.0) -> bool:
        return (
            self.y.shape == other.y.shape
            and self.x.shape == other.x.shape
            and self.w.shape == other.w.shape
            and np.allclose(self.y, other.y, rtol=0, atol=atol)
            and np.allclose(self.x, other.x, rtol=0, atol=atol)
            and np.allclose(self.w, other.w, rtol=0, atol=atol)
            and np.array_equal(self.neighborhood, other.neighborhood)
        )


@dataclass(frozen=True, eq=False)
class ModelFit:
    """Result of one least-squares regression.

    ``coef`` is the full coefficient vector in design-column order; the last
    ``n_spatial`` entries are the neighborhood coefficients.
    """

    coef: NDArray
    residuals: NDArray
    fitted: NDArray
    leverage: NDArray
    sigma2_hat: float
    n_spatial: int = 1

    @property
    def n_obs(self) -> int:
        return self.residuals.shape[0]

    @property
    def n_params(self) -> int:
        return self.coef.shape[0]

    @property
    def beta_hat(self) -> NDArray:
        """Intercept followed by covariate slopes."""
        return self.coef[: self.n_params - self.n_spatial]

    @property
    def delta_hat(self) -> NDArray:
        """Neighborhood coefficient(s), always a 1-D array of length ``n_spatial``."""
        return self.coef[self.n_params - self.n_spatial :]


@dataclass(frozen=True, eq=False)
class Ar1Fit:
    rho_hat: float
    innovations: NDArray
    innovation_variance: float
    raw_rho: float = field(default=float("nan"), repr=False)

    @property
    def clamped(self) -> bool:
        return self.rho_hat != self.raw_rho


def _qr(design: NDArray):
    q, r = np.linalg.qr(design, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0 or np.any(diag <= RANK_TOL * scale):
        raise RankDeficient(
            f"design of shape {design.shape} is rank deficient "
            f"(min |R_jj| / max |R_jj| = {diag.min() / scale if scale else 0.0:.3e})"
        )
    return q, r


def fit_ols(design: ArrayLike, targets: ArrayLike, n_spatial: int = 1) -> ModelFit:
    """Least-squares fit of ``targets`` on the columns of ``design``.

    Solved through a thin QR factorisation. Raises :class:`RankDeficient`
    when some ``|R_jj|`` falls below ``1e-10 * max |R_jj|``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {X.shape} incompatible with targets {y.shape}")
    n, k = X.shape
    if not 0 <= n_spatial <= k:
        raise DimensionMismatch(f"n_spatial={n_spatial} outside 0..{k}")
    if n <= k:
        raise RankDeficient(f"{n} observations cannot identify {k} parameters")
    q, r = _qr(X)
    coef = solve_triangular(r, q.T @ y)
    fitted = X @ coef
    resid = y - fitted
    leverage = np.clip(np.einsum("ij,ij->i", q, q), 0.0, 1.0)
    sigma2 = float(resid @ resid) / (n - k)
    return ModelFit(
        coef=_frozen(coef),
        residuals=_frozen(resid),
        fitted=_frozen(fitted),
        leverage=_frozen(leverage),
        sigma2_hat=sigma2,
        n_spatial=n_spatial,
    )


def residual_maker(design: ArrayLike) -> NDArray:
    """Return ``I - H`` for ``design``; applying it to a target gives OLS residuals.

    Lets many responses sharing one design be refitted with a single matmul.
    """
    X = np.asarray(design, dtype=float)
    q, _ = _qr(X)
    return np.eye(X.shape[0]) - q @ q.T


def fit_ar1(series: ArrayLike, method: Literal["cls", "yule_walker"] = "cls") -> Ar1Fit:
    """Fit ``e_t = rho * e_{t-1} + a_t`` without intercept.

    ``cls`` (default) regresses e_t on e_{t-1}; ``yule_walker`` uses the
    lag-1 sample autocorrelation. The estimate is clamped into
    ``[-0.999, 0.999]`` and innovations are computed with the clamped value.
    """
    e = np.asarray(series, dtype=float)
    if e.ndim != 1 or e.shape[0] < 3:
        raise DimensionMismatch(f"AR(1) fit needs a 1-D series of length >= 3, got {e.shape}")
    lag, lead = e[:-1], e[1:]
    if method == "cls":
        denom = float(lag @ lag)
    elif method == "yule_walker":
        denom = float(e @ e)
    else:
        raise ValueError(f"unknown AR(1) method {method!r}")
    if denom == 0.0:
        raise DegenerateSeries("lagged series is identically zero")
    raw = float(lag @ lead) / denom
    rho = min(max(raw, -RHO_BOUND), RHO_BOUND)
    innov = lead - rho * lag
    var = float(innov @ innov) / max(innov.shape[0] - 1, 1)
    return Ar1Fit(rho_hat=rho, innovations=_frozen(innov), innovation_variance=var, raw_rho=raw)


def ar1_slopes(series: NDArray) -> NDArray:
    """Row-wise CLS AR(1) slopes, clamped; rows with zero lag energy give NaN."""
    lag, lead = series[:, :-1], series[:, 1:]
    denom = np.einsum("ij,ij->i", lag, lag)
    num = np.einsum("ij,ij->i", lag, lead)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), np.nan)
    return np.clip(rho, -RHO_BOUND, RHO_BOUND)


def _exact_fit(fit: ModelFit) -> bool:
    # residuals at rounding level relative to the fitted values
    scale = float(np.sqrt(np.mean(fit.fitted**2)))
    return fit.sigma2_hat <= (RANK_TOL * scale) ** 2


def cooks_distances(fit: ModelFit) -> NDArray:
    """Cook's distance of every observation; ``inf`` where leverage is one.

    An exact fit (residuals at rounding level) has zero distances.
    """
    h = fit.leverage
    e = fit.residuals
    k = fit.n_params
    out = np.full(h.shape, np.inf)
    ok = h < 1.0 - LEVERAGE_TOL
    if _exact_fit(fit):
        out[ok] = 0.0
    else:
        out[ok] = (e[ok] ** 2 / (k * fit.sigma2_hat)) * (h[ok] / (1.0 - h[ok]) ** 2)
    return out


def cooks_distance(fit: ModelFit, i: int) -> float:
    """Cook's distance ``D_i = e_i^2 / (k s^2) * h_ii / (1 - h_ii)^2``.

    Raises :class:`LeverageOne` when ``h_ii >= 1 - 1e-10``.
    """
    h = float(fit.leverage[i])
    if h >= 1.0 - LEVERAGE_TOL:
        raise LeverageOne(i, h)
    if _exact_fit(fit):
        return 0.0
    e = float(fit.residuals[i])
    return e * e / (fit.n_params * fit.sigma2_hat) * h / (1.0 - h) ** 2
