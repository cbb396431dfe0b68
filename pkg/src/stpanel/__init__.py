"""Nonparametric tests for temporary structural change and spatial
heterogeneity in spatio-temporal panel regressions."""

from stpanel.dgp import ChangeSpec, DgpConfig, GroundTruth, HeteroSpec, calibrate_r2, generate
from stpanel.errors import (
    DegenerateSeries,
    DimensionMismatch,
    DuplicateCell,
    IncompleteGrid,
    InitialSubsetSingular,
    LeverageOne,
    NonNumericField,
    RankDeficient,
    StPanelError,
    UnbalancedPanel,
    UnestimableTimePoint,
    UnestimableUnit,
)
from stpanel.experiment import CellResult, ExperimentGrid, emit_table, run_grid
from stpanel.forward_search import ForwardSearchTrace, forward_search, forward_search_panel
from stpanel.inference import (
    BootstrapCI,
    TestOutcome,
    joint_test,
    percentile_bootstrap_ci,
    spatial_heterogeneity_test,
    structural_change_test,
)
from stpanel.io import ColumnMap, load_panel_csv, write_panel_csv
from stpanel.model import Ar1Fit, ModelFit, PanelDataset, cooks_distance, fit_ar1, fit_ols
from stpanel.sieve import RhoMatrix, collect_rho_estimates, sieve_replicate

__version__ = "0.1.0"

__all__ = [
    "Ar1Fit", "BootstrapCI", "CellResult", "ChangeSpec", "ColumnMap", "DegenerateSeries", "DgpConfig",
    "DimensionMismatch", "DuplicateCell", "ExperimentGrid", "ForwardSearchTrace", "GroundTruth", "HeteroSpec",
    "IncompleteGrid", "InitialSubsetSingular", "LeverageOne", "ModelFit", "NonNumericField", "PanelDataset",
    "RankDeficient", "RhoMatrix", "StPanelError", "TestOutcome", "UnbalancedPanel", "UnestimableTimePoint",
    "UnestimableUnit", "calibrate_r2", "collect_rho_estimates", "cooks_distance", "emit_table", "fit_ar1",
    "fit_ols", "forward_search", "forward_search_panel", "generate", "joint_test", "load_panel_csv",
    "percentile_bootstrap_ci", "run_grid", "sieve_replicate", "spatial_heterogeneity_test",
    "structural_change_test", "write_panel_csv",
]
