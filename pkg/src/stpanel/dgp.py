"""Synthetic spatio-temporal panels with optional temporary structural change
and spatial heterogeneity.

Data are generated as

    y_it = b0 + b1 x1_it + b2 x2_it + delta_i w_it + eps_it
    eps_it = rho_t eps_i,t-1 + c a_it,   a_it ~ N(0, sd^2)

with ``x1 ~ N(100, 10^2)``, ``x2 ~ N(50, 10^2)`` and ``w_it ~ Poisson(lam_k)``
for the unit's neighborhood ``k``. ``rho_t`` switches to ``rho_prime`` on a
contiguous block of time points, ``delta_i`` to ``delta_prime`` on a set of
units. ``c`` rescales the innovations to hit a target R^2.

All draws are made in a fixed order from one stream, regardless of which
injections are configured, so configurations that differ only in their
injections share the same ``a_it``, ``x`` and ``w``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from stpanel import rng as rngmod
from stpanel.errors import ConfigError
from stpanel.model import PanelDataset

Position = Literal["start", "middle", "end"]


@dataclass(frozen=True)
class ChangeSpec:
    proportion: float
    position: Position = "start"
    rho_prime: float = 0.75


@dataclass(frozen=True)
class HeteroSpec:
    proportion: float
    n_neighborhoods_affected: int = 4
    delta_prime: float = 1.25


@dataclass(frozen=True)
class DgpConfig:
    n_units: int
    n_times: int
    beta0: float = 40.00
    beta1: float = 0.70
    beta2: float = 0.45
    delta: float = 0.25
    rho: float = 0.5
    innovation_sd: float = 2.0
    x_means: tuple[float, float] = (100.0, 50.0)
    x_sds: tuple[float, float] = (10.0, 10.0)
    neighborhood_lambdas: tuple[float, ...] = (2.0, 4.0, 6.0, 10.0)
    r2_target: float | None = None
    change: ChangeSpec | None = None
    hetero: HeteroSpec | None = None
    seed: int = 0
    burn_in: int = 50

    def __post_init__(self):
        validate(self)

    def with_(self, **kw) -> DgpConfig:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DgpConfig:
        d = dict(d)
        if d.get("change") is not None:
            d["change"] = ChangeSpec(**d["change"])
        if d.get("hetero") is not None:
            d["hetero"] = HeteroSpec(**d["hetero"])
        for key in ("x_means", "x_sds", "neighborhood_lambdas"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    """What the generator actually did. Indices are 0-based."""

    change_times: tuple[int, ...]
    hetero_units: tuple[int, ...]
    error_scale: float
    config: DgpConfig
    rho_by_time: tuple[float, ...] = field(repr=False, default=())
    delta_by_unit: tuple[float, ...] = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "change_times": list(self.change_times),
            "hetero_units": list(self.hetero_units),
            "error_scale": self.error_scale,
            "rho_by_time": list(self.rho_by_time),
            "delta_by_unit": list(self.delta_by_unit),
            "config": self.config.to_dict(),
        }


def _ceil_count(p: float, total: int) -> int:
    # guard against 0.15 * 20 == 3.0000000000000004
    return math.ceil(round(p * total, 9))


def validate(cfg: DgpConfig) -> None:
    if cfg.n_units < 2 or cfg.n_times < 3:
        raise ConfigError("need n_units >= 2 and n_times >= 3")
    if not abs(cfg.rho) < 1:
        raise ConfigError("|rho| must be < 1")
    if cfg.innovation_sd <= 0:
        raise ConfigError("innovation_sd must be positive")
    if not cfg.neighborhood_lambdas or min(cfg.neighborhood_lambdas) <= 0:
        raise ConfigError("neighborhood lambdas must be positive")
    if len(cfg.neighborhood_lambdas) > cfg.n_units:
        raise ConfigError("more neighborhoods than units")
    if cfg.r2_target is not None and not 0 < cfg.r2_target < 1:
        raise ConfigError("r2_target must lie in (0, 1)")
    if cfg.change is not None:
        c = cfg.change
        if not 0 < c.proportion < 1:
            raise ConfigError("change proportion must lie in (0, 1)")
        if c.position not in ("start", "middle", "end"):
            raise ConfigError(f"unknown change position {c.position!r}")
        if not abs(c.rho_prime) < 1:
            raise ConfigError("|rho_prime| must be < 1")
    if cfg.hetero is not None:
        h = cfg.hetero
        if not 0 < h.proportion < 1:
            raise ConfigError("heterogeneity proportion must lie in (0, 1)")
        if not 1 <= h.n_neighborhoods_affected <= len(cfg.neighborhood_lambdas):
            raise ConfigError("n_neighborhoods_affected out of range")
        sizes = neighborhood_sizes(cfg.n_units, len(cfg.neighborhood_lambdas))
        k = _ceil_count(h.proportion, cfg.n_units)
        per = [0] * h.n_neighborhoods_affected
        for j in range(k):
            per[j % h.n_neighborhoods_affected] += 1
        if any(need > have for need, have in zip(per, sizes)):
            raise ConfigError("heterogeneous units do not fit in the affected neighborhoods")


def neighborhood_sizes(n_units: int, n_hoods: int) -> list[int]:
    base, extra = divmod(n_units, n_hoods)
    return [base + (1 if k < extra else 0) for k in range(n_hoods)]


def neighborhood_labels(n_units: int, n_hoods: int) -> np.ndarray:
    """Contiguous, near-equal neighborhoods; the remainder goes to the first ones."""
    return np.repeat(np.arange(1, n_hoods + 1), neighborhood_sizes(n_units, n_hoods))


def change_block(n_times: int, proportion: float, position: Position) -> tuple[int, ...]:
    """0-based time indices of a contiguous block of ``ceil(p * T)`` points."""
    k = _ceil_count(proportion, n_times)
    if position == "start":
        start = 0
    elif position == "end":
        start = n_times - k
    else:
        start = (n_times - k) // 2
    return tuple(range(start, start + k))


def hetero_units(labels: np.ndarray, proportion: float, n_affected: int) -> tuple[int, ...]:
    """Pick ``ceil(p * N)`` units round-robin over neighborhoods ``1..n_affected``.

    Within a neighborhood the lowest-index units are taken first.
    """
    k = _ceil_count(proportion, labels.shape[0])
    members = [list(np.flatnonzero(labels == h + 1)) for h in range(n_affected)]
    chosen = []
    for j in range(k):
        chosen.append(int(members[j % n_affected].pop(0)))
    return tuple(sorted(chosen))


def systematic_variance(cfg: DgpConfig) -> float:
    """Variance of the non-error part of y under the baseline parameters.

    ``Var(w)`` is that of the Poisson mixture over neighborhoods: mean of the
    lambdas (within) plus their dispersion (between), weighted by
    neighborhood size.
    """
    sizes = np.array(neighborhood_sizes(cfg.n_units, len(cfg.neighborhood_lambdas)), float)
    weights = sizes / sizes.sum()
    lam = np.asarray(cfg.neighborhood_lambdas, float)
    mean_lam = weights @ lam
    var_w = mean_lam + weights @ (lam - mean_lam) ** 2
    return (
        cfg.beta1**2 * cfg.x_sds[0] ** 2
        + cfg.beta2**2 * cfg.x_sds[1] ** 2
        + cfg.delta**2 * var_w
    )


def calibrate_r2(cfg: DgpConfig) -> float:
    """Error scale ``c`` such that the population R^2 equals ``cfg.r2_target``.

    Solves ``c^2 sd^2 / (1 - rho^2) = V_sys (1 - R^2) / R^2``. Returns 1.0 when
    no target is set.
    """
    if cfg.r2_target is None:
        return 1.0
    r2 = cfg.r2_target
    target_err_var = systematic_variance(cfg) * (1.0 - r2) / r2
    return math.sqrt(target_err_var * (1.0 - cfg.rho**2)) / cfg.innovation_sd


def generate(cfg: DgpConfig) -> tuple[PanelDataset, GroundTruth]:
    N, T, B = cfg.n_units, cfg.n_times, cfg.burn_in
    g = rngmod.substream(cfg.seed, rngmod.DGP)
    labels = neighborhood_labels(N, len(cfg.neighborhood_lambdas))
    lam = np.asarray(cfg.neighborhood_lambdas, float)[labels - 1]

    x1 = g.normal(cfg.x_means[0], cfg.x_sds[0], size=(N, T))
    x2 = g.normal(cfg.x_means[1], cfg.x_sds[1], size=(N, T))
    w = g.poisson(lam[:, None], size=(N, T)).astype(float)
    a = g.normal(0.0, cfg.innovation_sd, size=(N, B + T))

    scale = calibrate_r2(cfg)
    a = scale * a

    rho_t = np.full(T, cfg.rho)
    times: tuple[int, ...] = ()
    if cfg.change is not None:
        times = change_block(T, cfg.change.proportion, cfg.change.position)
        rho_t[list(times)] = cfg.change.rho_prime
    rho_path = np.concatenate([np.full(B, cfg.rho), rho_t])

    eps = np.empty((N, B + T))
    prev = np.zeros(N)
    for s in range(B + T):
        prev = rho_path[s] * prev + a[:, s]
        eps[:, s] = prev
    eps = eps[:, B:]

    delta_i = np.full(N, cfg.delta)
    units: tuple[int, ...] = ()
    if cfg.hetero is not None:
        units = hetero_units(labels, cfg.hetero.proportion, cfg.hetero.n_neighborhoods_affected)
        delta_i[list(units)] = cfg.hetero.delta_prime

    y = cfg.beta0 + cfg.beta1 * x1 + cfg.beta2 * x2 + delta_i[:, None] * w + eps
    data = PanelDataset(y=y, x=np.stack([x1, x2], axis=2), w=w, neighborhood=labels)
    truth = GroundTruth(
        change_times=times,
        hetero_units=units,
        error_scale=scale,
        config=cfg,
        rho_by_time=tuple(float(r) for r in rho_t),
        delta_by_unit=tuple(float(d) for d in delta_i),
    )
    return data, truth


def true_errors(cfg: DgpConfig) -> np.ndarray:
    """The ``eps_it`` that :func:`generate` adds for ``cfg``, shape (N, T)."""
    data, truth = generate(cfg)
    systematic = (
        cfg.beta0
        + cfg.beta1 * data.x[:, :, 0]
        + cfg.beta2 * data.x[:, :, 1]
        + np.asarray(truth.delta_by_unit)[:, None] * data.w[:, :, 0]
    )
    return data.y - systematic
