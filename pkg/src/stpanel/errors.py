"""Exception hierarchy for the panel tests."""

from __future__ import annotations


class StPanelError(Exception):
    """Base class for every error raised by :mod:`stpanel`."""


class DimensionMismatch(StPanelError, ValueError):
    pass


class RankDeficient(StPanelError, ValueError):
    """Design matrix is singular beyond the rank tolerance."""


class DegenerateSeries(StPanelError, ValueError):
    """AR(1) regression undefined because the lagged series is all zeros."""


class LeverageOne(StPanelError, ValueError):
    """Observation has leverage numerically equal to one."""

    def __init__(self, index: int, leverage: float):
        super().__init__(f"observation {index} has leverage {leverage:.12g}")
        self.index = index
        self.leverage = leverage


class UnestimableUnit(StPanelError):
    """Every sieve replicate failed for a spatial unit."""

    def __init__(self, unit: int, reason: str):
        super().__init__(f"unit {unit}: no successful replicates ({reason})")
        self.unit = unit
        self.reason = reason


class InitialSubsetSingular(RankDeficient):
    pass


class UnestimableTimePoint(StPanelError):
    def __init__(self, failures: dict[int, str]):
        detail = "; ".join(f"t={t}: {msg}" for t, msg in sorted(failures.items()))
        super().__init__(f"forward search failed at {len(failures)} time point(s): {detail}")
        self.failures = failures


class ConfigError(StPanelError, ValueError):
    pass


class IncompleteGrid(StPanelError):
    pass


class PanelFormatError(StPanelError, ValueError):
    """Malformed panel CSV. ``row`` is the 1-based data row number when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class UnbalancedPanel(PanelFormatError):
    def __init__(self, unit, time):
        super().__init__(f"missing cell for unit={unit!r}, time={time!r}")
        self.unit = unit
        self.time = time


class DuplicateCell(PanelFormatError):
    pass


class NonNumericField(PanelFormatError):
    pass
