import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stpanel.dgp import (
    ChangeSpec,
    DgpConfig,
    HeteroSpec,
    calibrate_r2,
    change_block,
    generate,
    hetero_units,
    neighborhood_labels,
    true_errors,
)
from stpanel.errors import ConfigError
from stpanel.model import fit_ar1, fit_ols


def test_baseline_rho_recovered():
    data, _ = generate(DgpConfig(60, 75, seed=1))
    eps = true_errors(DgpConfig(60, 75, seed=1))
    rhos = [fit_ar1(e).rho_hat for e in eps]
    assert np.mean(rhos) == pytest.approx(0.5, abs=0.05)
    assert data.y.shape == (60, 75) and data.x.shape == (60, 75, 2)


@pytest.mark.parametrize("position, expected", [("start", range(0, 4)), ("end", range(36, 40)), ("middle", range(18, 22))])
def test_change_block_positions(position, expected):
    _, truth = generate(DgpConfig(20, 40, change=ChangeSpec(0.10, position)))
    assert truth.change_times == tuple(expected)
    rho_t = np.asarray(truth.rho_by_time)
    assert np.all(rho_t[list(expected)] == 0.75)
    assert np.sum(rho_t == 0.5) == 36


def test_hetero_assignment():
    _, truth = generate(DgpConfig(20, 40, hetero=HeteroSpec(0.15, 4)))
    labels = neighborhood_labels(20, 4)
    assert len(truth.hetero_units) == 3
    assert sorted(labels[list(truth.hetero_units)]) == [1, 2, 3]
    assert truth.hetero_units == (0, 5, 10)
    d = np.asarray(truth.delta_by_unit)
    assert np.all(d[list(truth.hetero_units)] == 1.25) and np.sum(d == 0.25) == 17


def test_error_scale_vanishes_with_r2():
    scales = [calibrate_r2(DgpConfig(20, 40, r2_target=r)) for r in (0.5, 0.9, 0.99, 0.9999)]
    assert all(a > b for a, b in zip(scales, scales[1:]))
    assert scales[-1] / scales[0] == pytest.approx(0.01, rel=1e-3)


def test_pooled_r2_near_target():
    data, _ = generate(DgpConfig(60, 75, r2_target=0.95, seed=3))
    fit = fit_ols(data.pooled_design(), data.y.ravel())
    y = data.y.ravel()
    r2 = 1 - fit.residuals @ fit.residuals / np.sum((y - y.mean()) ** 2)
    assert r2 == pytest.approx(0.95, abs=0.03)


def test_ar_estimate_invariant_to_error_scale():
    base = DgpConfig(10, 60, seed=4)
    e1 = true_errors(base)
    e2 = true_errors(base.with_(r2_target=0.9))
    for a, b in zip(e1, e2):
        assert fit_ar1(a).rho_hat == pytest.approx(fit_ar1(b).rho_hat, abs=1e-9)


def test_paired_cells_share_innovations():
    # with rho_prime equal to rho the alternative reproduces the null exactly
    null, _ = generate(DgpConfig(20, 40, seed=9))
    alt, truth = generate(DgpConfig(20, 40, seed=9, change=ChangeSpec(0.25, "middle", rho_prime=0.5)))
    np.testing.assert_array_equal(null.y, alt.y)
    assert len(truth.change_times) == 10


def test_x_and_w_unaffected_by_injection():
    null, _ = generate(DgpConfig(20, 40, seed=9))
    alt, _ = generate(DgpConfig(20, 40, seed=9, change=ChangeSpec(0.3), hetero=HeteroSpec(0.3, 3)))
    np.testing.assert_array_equal(null.x, alt.x)
    np.testing.assert_array_equal(null.w, alt.w)


def test_w_nonnegative_integers():
    data, _ = generate(DgpConfig(23, 10, seed=2))
    w = data.w[:, :, 0]
    assert np.all(w >= 0) and np.all(w == np.round(w))
    sizes = np.bincount(data.neighborhood)[1:]
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == 23


def test_deterministic():
    a, ta = generate(DgpConfig(20, 40, seed=5, r2_target=0.95))
    b, tb = generate(DgpConfig(20, 40, seed=5, r2_target=0.95))
    assert a.equals(b) and ta.to_dict() == tb.to_dict()


def test_config_round_trip():
    cfg = DgpConfig(20, 40, change=ChangeSpec(0.1, "end"), hetero=HeteroSpec(0.05, 2), r2_target=0.9)
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_units=1),
        dict(rho=1.0),
        dict(innovation_sd=0.0),
        dict(r2_target=1.0),
        dict(change=ChangeSpec(0.0)),
        dict(change=ChangeSpec(0.1, "late")),
        dict(hetero=HeteroSpec(0.1, 5)),
        dict(hetero=HeteroSpec(0.9, 1)),
    ],
)
def test_invalid_config(kw):
    base = dict(n_units=20, n_times=40)
    base.update(kw)
    with pytest.raises(ConfigError):
        DgpConfig(**base)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(3, 200), p=st.floats(0.01, 0.99), pos=st.sampled_from(["start", "middle", "end"]))
def test_change_block_cardinality(T, p, pos):
    block = change_block(T, p, pos)
    assert len(block) == min(T, int(np.ceil(round(p * T, 9))))
    assert block == tuple(range(block[0], block[0] + len(block)))
    assert 0 <= block[0] and block[-1] < T


@settings(max_examples=60, deadline=None)
@given(N=st.integers(8, 120), p=st.floats(0.01, 0.25), k=st.integers(1, 4))
def test_hetero_cardinality(N, p, k):
    labels = neighborhood_labels(N, 4)
    units = hetero_units(labels, p, k)
    count = int(np.ceil(round(p * N, 9)))
    assert len(units) == len(set(units)) == count
    hoods = np.bincount(labels[list(units)], minlength=5)[1:]
    assert set(np.flatnonzero(hoods) + 1) <= set(range(1, k + 1))
    assert hoods[:k].max() - hoods[:k].min() <= 1
