"""Outcome construction, fixed-effects OLS and summary tables."""

from .outcomes import commute_distance, haversine_km, modal_year, post1950_filter, walkscore_place
from .panel import PlacePanel, summary_stats
from .regression import (
    OUTCOMES,
    SPECIFICATIONS,
    RankDeficient,
    RegressionResult,
    RegressionSpec,
    fit_ols,
    run_suite,
)

__all__ = [
    "OUTCOMES",
    "SPECIFICATIONS",
    "PlacePanel",
    "RankDeficient",
    "RegressionResult",
    "RegressionSpec",
    "commute_distance",
    "fit_ols",
    "haversine_km",
    "modal_year",
    "post1950_filter",
    "run_suite",
    "summary_stats",
    "walkscore_place",
]
