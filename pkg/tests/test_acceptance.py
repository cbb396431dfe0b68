"""Acceptance suite. Each test records one PASS/FAIL line, printed at the end
of the run (``pytest tests/test_acceptance.py``)."""

import numpy as np
import pytest
from scipy.stats import binomtest

import conftest
from conftest import loo_cooks, normal_equations
from stpanel.dgp import HeteroSpec
from stpanel.experiment import ExperimentGrid, run_grid
from stpanel.forward_search import forward_search
from stpanel.inference import joint_test, spatial_heterogeneity_test, structural_change_test
from stpanel.model import cooks_distances, fit_ar1, fit_ols

pytestmark = pytest.mark.acceptance


def record(name, ok, detail):
    conftest.ACCEPTANCE[name] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def random_instance(g):
    n, k = g.integers(10, 80), g.integers(1, 6)
    X = np.column_stack([np.ones(n), g.normal(0, g.uniform(0.5, 20), (n, k))])
    y = X @ g.normal(0, 3, k + 1) + g.normal(0, g.uniform(0.1, 5), n)
    return X, y


def test_1_oracle_equivalence():
    g = np.random.default_rng(1)
    ols_err = cook_err = 0.0
    for _ in range(100):
        X, y = random_instance(g)
        ols_err = max(ols_err, np.max(np.abs(fit_ols(X, y).coef - normal_equations(X, y))))
    for _ in range(100):
        X, y = random_instance(g)
        d = cooks_distances(fit_ols(X, y))
        oracle = np.array([loo_cooks(X, y, i) for i in range(len(y))])
        cook_err = max(cook_err, np.max(np.abs(d - oracle)))
    record("1 oracle equivalence", ols_err <= 1e-8 and cook_err <= 1e-10,
           f"max |OLS - normal equations| = {ols_err:.2e} (<= 1e-8), "
           f"max |Cook's D - leave-one-out| = {cook_err:.2e} (<= 1e-10)")


def test_2_estimator_fidelity():
    from scipy.signal import lfilter

    hits = 0
    for s in range(100):
        a = np.random.default_rng(s).normal(0, 2, 5000 + 200)
        series = lfilter([1.0], [1.0, -0.5], a)[200:]
        hits += 0.45 <= fit_ar1(series).rho_hat <= 0.55
    record("2 estimator fidelity", hits >= 95, f"{hits}/100 runs with rho_hat in [0.45, 0.55] (>= 95)")


NULL_GRID = dict(n_units=(20,), n_times=(40,), r2_levels=(0.95,), replications=200, master_seed=2024)


def test_3_size_reproduction():
    grid = ExperimentGrid(**NULL_GRID, proportions=())
    [s] = run_grid(grid, "structural")
    [p] = run_grid(grid, "spatial")
    ok_s = abs(s.mean_coverage - 92.2) <= 4
    ok_p = abs(p.mean_coverage - 95.0) <= 4
    record("3 size reproduction", ok_s and ok_p,
           f"structural null coverage {s.mean_coverage:.2f} (target 92.2 +/- 4), "
           f"spatial null coverage {p.mean_coverage:.2f} (target 95.0 +/- 4), 200 replications")


def sign_test(results):
    null, alt = results
    diff = np.array([a["coverage"] - n["coverage"] for n, a in zip(null.records, alt.records)])
    lower, higher = int(np.sum(diff < 0)), int(np.sum(diff > 0))
    p = binomtest(lower, lower + higher, 0.5, alternative="greater").pvalue if lower + higher else 1.0
    return null.mean_coverage, alt.mean_coverage, lower, higher, p


def test_4a_structural_directional_power():
    grid = ExperimentGrid(**NULL_GRID, proportions=(0.15,), positions=("start",))
    null_cov, alt_cov, lower, higher, p = sign_test(run_grid(grid, "structural"))
    record("4a structural directional power", alt_cov < null_cov and p < 0.05,
           f"coverage null {null_cov:.2f} vs change at start {alt_cov:.2f}; "
           f"{lower} lower / {higher} higher of 200 paired runs, sign test p = {p:.3g} (< 0.05)")


def test_4b_spatial_directional_power():
    grid = ExperimentGrid(**{**NULL_GRID, "n_units": (40,), "n_times": (50,)}, proportions=(0.15,),
                          neighborhoods=(4,))
    null_cov, alt_cov, lower, higher, p = sign_test(run_grid(grid, "spatial"))
    record("4b spatial directional power", alt_cov < null_cov and p < 0.05,
           f"coverage null {null_cov:.2f} vs 4 neighborhoods {alt_cov:.2f}; "
           f"{lower} lower / {higher} higher of 200 paired runs, sign test p = {p:.3g} (< 0.05)")


def test_5_forward_search_robustness():
    from test_forward_search import cross_section

    wins = 0
    for s in range(200):
        X, y, _ = cross_section(1000 + s, hetero=HeteroSpec(0.15, 4))
        tr = forward_search(X, y)
        wins += abs(tr.robust_delta[0] - 0.25) < abs(tr.full_delta[0] - 0.25)
    record("5 forward-search robustness", wins >= 180,
           f"robust closer to 0.25 than full-sample in {wins}/200 cross-sections (>= 180)")


def test_6_determinism(null_panel):
    same = []
    kw = dict(B=300, seed=5)
    for workers in (1, 4):
        s = structural_change_test(null_panel, m=30, workers=workers, **kw)
        p = spatial_heterogeneity_test(null_panel, workers=workers, **kw)
        j = joint_test(null_panel, m=20, max_iter=3, workers=workers, **kw)
        same.append((s.to_json(), p.to_json(), j.structural.to_json(), j.spatial.to_json()))
    grid = ExperimentGrid(n_units=(20,), n_times=(40,), proportions=(0.1,), positions=("end",),
                          replications=3, m=10, B=100, master_seed=8)
    g1, g4 = (run_grid(grid, "structural", workers=w) for w in (1, 4))
    grid_same = [(r.coords, r.records) for r in g1] == [(r.coords, r.records) for r in g4]
    record("6 determinism", same[0] == same[1] and grid_same,
           f"tests identical across 1 and 4 workers: {same[0] == same[1]}; grid identical: {grid_same}")


def test_7_invariant_suite():
    import test_dgp
    import test_inference
    import test_model

    checks = {
        "OLS residual orthogonality and leverage sum": test_model.test_residuals_orthogonal_to_design,
        "AR(1) estimate scale invariance": test_model.test_ar1_scale_invariance,
        "interval shift equivariance under a fixed seed": test_inference.test_shift_equivariance,
        "change-block cardinality": test_dgp.test_change_block_cardinality,
        "heterogeneous-unit cardinality": test_dgp.test_hetero_cardinality,
        "paired-innovation identity": test_dgp.test_paired_cells_share_innovations,
    }
    failed = []
    for name, fn in checks.items():
        try:
            fn()
        except Exception as exc:  # noqa: BLE001
            failed.append(f"{name} ({type(exc).__name__})")
    record("7 invariant suite", not failed,
           f"{len(checks) - len(failed)}/{len(checks)} property checks pass" + (f"; failed: {failed}" if failed else ""))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
