import math

import numpy as np
import pytest

from stpanel.dgp import DgpConfig, HeteroSpec, generate
from stpanel.errors import InitialSubsetSingular, UnestimableTimePoint
from stpanel.forward_search import forward_search, forward_search_panel
from stpanel.model import PanelDataset, cooks_distances, fit_ols


def cross_section(seed, N=40, sd=0.1, hetero=None):
    d, truth = generate(DgpConfig(N, 3, rho=0.0, innovation_sd=sd, hetero=hetero, seed=seed))
    return d.time_design(0), d.y[:, 0], truth


def test_noiseless_runs_to_completion():
    X, _, _ = cross_section(0)
    y = X @ np.array([40.0, 0.7, 0.45, 0.25])
    tr = forward_search(X, y)
    assert not tr.triggered
    assert tr.robust_fit is tr.full_fit
    assert abs(tr.robust_delta[0] - tr.full_delta[0]) <= 1e-8


def test_clean_data_rarely_triggers():
    hits = sum(forward_search(*cross_section(s, N=60)[:2]).triggered for s in range(100))
    assert hits <= 15


def test_robust_beats_full_with_outliers():
    wins = 0
    for s in range(200):
        X, y, _ = cross_section(s, hetero=HeteroSpec(0.15, 4))
        tr = forward_search(X, y)
        wins += abs(tr.robust_delta[0] - 0.25) < abs(tr.full_delta[0] - 0.25)
    assert wins >= 180


def test_l_boundary():
    X, y, _ = cross_section(1)
    tr = forward_search(X, y, l=39)
    assert len(tr.subset_history) <= 2
    with pytest.raises(ValueError):
        forward_search(X, y, l=40)
    with pytest.raises(ValueError):
        forward_search(X, y, l=5)


def test_trace_invariants():
    X, y, _ = cross_section(3, hetero=HeteroSpec(0.15, 4))
    tr = forward_search(X, y, tau=math.inf)
    sizes = [s.size for s in tr.subset_history]
    assert sizes == list(range(20, 41))
    assert all(np.isfinite(tr.max_cooks_d)) and min(tr.max_cooks_d) >= 0
    tr = forward_search(X, y)
    assert tr.triggered
    sub = tr.subset_history[tr.stop_iteration]
    np.testing.assert_allclose(tr.robust_fit.coef, fit_ols(X[sub], y[sub]).coef, rtol=0, atol=0)
    assert tr.max_cooks_d[tr.stop_iteration] == cooks_distances(tr.robust_fit).max()
    assert tr.max_cooks_d[tr.stop_iteration + 1] - tr.max_cooks_d[tr.stop_iteration] > 0.25
    rows = tr.records()
    assert [r["subset_size"] for r in rows] == sizes[: len(rows)]
    assert sum(r["robust"] for r in rows) == 1


def test_initial_subset_smallest_abs_residuals():
    X, y, _ = cross_section(4)
    full = fit_ols(X, y)
    tr = forward_search(X, y, tau=math.inf)
    expected = np.sort(np.argsort(np.abs(full.residuals), kind="stable")[:20])
    np.testing.assert_array_equal(tr.subset_history[0], expected)


def test_infinite_tau_equals_full_fit():
    for s in range(5):
        X, y, _ = cross_section(s, sd=2.0, hetero=HeteroSpec(0.15, 4))
        tr = forward_search(X, y, tau=math.inf)
        np.testing.assert_array_equal(tr.robust_fit.coef, tr.full_fit.coef)


def test_absolute_direction_also_stops_on_drops():
    # any trigger under "increase" is also a trigger under "absolute"
    for s in range(20):
        X, y, _ = cross_section(s, sd=1.0)
        up = forward_search(X, y)
        ab = forward_search(X, y, direction="absolute")
        if up.triggered:
            assert ab.triggered and ab.stop_iteration <= up.stop_iteration


def test_deterministic():
    X, y, _ = cross_section(5, hetero=HeteroSpec(0.1, 2))
    a, b = forward_search(X, y), forward_search(X, y)
    assert a.max_cooks_d == b.max_cooks_d and a.stop_iteration == b.stop_iteration


def test_initial_subset_singular():
    X, y, _ = cross_section(6)
    X = X.copy()
    X[:, 3] = 0.0
    X[:2, 3] = 1.0  # w nonzero only on two units whose residuals are huge
    y = y.copy()
    y[0] += 100
    y[1] += 300
    with pytest.raises(InitialSubsetSingular):
        forward_search(X, y)


def test_panel_shapes_and_default_l():
    data, _ = generate(DgpConfig(20, 3, seed=2))
    ps = forward_search_panel(data)
    assert len(ps.traces) == 3 and ps.l == 10
    assert ps.robust_delta.shape == (3, 1) and ps.full_delta.shape == (3, 1)
    assert ps.robust_delta.shape == ps.full_delta.shape


def test_panel_heterogeneity_medians():
    data, _ = generate(DgpConfig(40, 50, r2_target=0.95, hetero=HeteroSpec(0.15, 4), seed=12))
    ps = forward_search_panel(data)
    assert abs(np.median(ps.robust_delta) - 0.25) <= 0.15
    assert np.median(ps.full_delta) - 0.25 > 0.05


def test_panel_workers_identical(null_panel):
    a = forward_search_panel(null_panel)
    b = forward_search_panel(null_panel, workers=3)
    np.testing.assert_array_equal(a.robust_delta, b.robust_delta)


def test_panel_failure_collected(null_panel):
    w = np.array(null_panel.w)
    w[:, 5, 0] = 0.0
    w[:, 9, 0] = 0.0
    bad = PanelDataset(null_panel.y, null_panel.x, w, null_panel.neighborhood)
    with pytest.raises(UnestimableTimePoint) as info:
        forward_search_panel(bad)
    assert set(info.value.failures) == {5, 9}
