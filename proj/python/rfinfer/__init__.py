"""Covariate-adjusted randomization inference for two-arm trials.

Thin wrapper over the compiled extension. The heavy lifting (forest fits,
exact tests, the simulation engine) lives in C++; this package re-exports
the bound operations under their natural names.
"""

from rfinfer._core import (
    AdjustedAnalysis,
    ConfidenceInterval,
    CrossEstimate,
    EffectEstimate,
    ForestConfig,
    ForestDiagnostics,
    TestResult,
    __version__,
    analyze,
    cross_estimation,
    estimate_effect,
    permutation_test,
    rf_oob_residuals,
    sample_size_reduction,
    t_test,
    wilcoxon_test,
)

__all__ = [
    "AdjustedAnalysis",
    "ConfidenceInterval",
    "CrossEstimate",
    "EffectEstimate",
    "ForestConfig",
    "ForestDiagnostics",
    "TestResult",
    "__version__",
    "analyze",
    "cross_estimation",
    "estimate_effect",
    "permutation_test",
    "rf_oob_residuals",
    "sample_size_reduction",
    "t_test",
    "wilcoxon_test",
]
