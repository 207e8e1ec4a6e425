"""Numerical laboratory for magnetic Schrodinger operators whose field
vanishes to first order along a curve.

The package computes the low-lying spectrum of the 2D operator directly,
builds the dimensionally reduced 1D effective models (fiber operators,
their dispersive curves, harmonic-well and Bohr-Sommerfeld predictions),
and cross-validates the two routes against each other.
"""

from .config import ExperimentConfig
from .effective import (
    ActionProfile,
    EffectiveSymbolGrid,
    HarmonicPrediction,
    QuantizedOperator1D,
    action_period,
    action_profile,
    bohr_sommerfeld_spectrum,
    effective_principal,
    effective_subprincipal,
    harmonic_prediction,
    im_diagnostics,
    quantize_1d,
    subprincipal_value,
    well_bottom_hessian,
)
from .errors import (
    BracketError,
    ConfigError,
    ConvergenceError,
    CoverageError,
    DegenerateMinimumError,
    DiagnosticError,
    MagwellError,
    PipelineError,
    PreconditionerError,
    RangeError,
    RegularityError,
    ResolutionError,
    StagnationError,
    ValidationError,
)
from .geometry import (
    CurveGeometry,
    FieldProfile,
    GaugeData,
    ModelCatalogEntry,
    ValidationReport,
    builtin_models,
    model_from_parameters,
    tubular_gauge,
    validate_assumptions,
)
from .linalg import (
    EigenSolveReport,
    SparseSymmetricMatrix,
    SymmetricBandMatrix,
    dense_band_eigensolve,
    deterministic_block,
    sparse_eigensolve_smallest,
)
from .magnetic2d import (
    LocalizationReport,
    MagneticOperator2D,
    TubeDiscretization,
    assemble_2d,
    assemble_2d_physical,
    localization_diagnostics,
    solve_2d,
)
from .montgomery import (
    CriticalPointData,
    DispersiveCurveTable,
    MontgomeryEigenpair,
    MontgomeryGrid,
    critical_point_cached,
    dispersive_curve,
    find_critical_point,
    montgomery_spectrum,
)
from .pipeline import (
    ComparisonReport,
    compare_spectra,
    emit_report,
    run_pipeline,
)
from .spectra import SpectrumResult, cluster_eigenvalues, cluster_means

__version__ = "0.1.0"

__all__ = [
    "BracketError",
    "ConfigError",
    "ConvergenceError",
    "CoverageError",
    "DegenerateMinimumError",
    "DiagnosticError",
    "MagwellError",
    "PipelineError",
    "PreconditionerError",
    "RangeError",
    "RegularityError",
    "ResolutionError",
    "StagnationError",
    "ValidationError",
    "ActionProfile",
    "EffectiveSymbolGrid",
    "HarmonicPrediction",
    "QuantizedOperator1D",
    "action_period",
    "action_profile",
    "bohr_sommerfeld_spectrum",
    "effective_principal",
    "effective_subprincipal",
    "harmonic_prediction",
    "im_diagnostics",
    "quantize_1d",
    "subprincipal_value",
    "well_bottom_hessian",
    "EigenSolveReport",
    "SparseSymmetricMatrix",
    "SymmetricBandMatrix",
    "dense_band_eigensolve",
    "deterministic_block",
    "sparse_eigensolve_smallest",
    "CurveGeometry",
    "FieldProfile",
    "GaugeData",
    "ModelCatalogEntry",
    "ValidationReport",
    "builtin_models",
    "model_from_parameters",
    "tubular_gauge",
    "validate_assumptions",
    "CriticalPointData",
    "DispersiveCurveTable",
    "MontgomeryEigenpair",
    "MontgomeryGrid",
    "critical_point_cached",
    "dispersive_curve",
    "find_critical_point",
    "montgomery_spectrum",
    "LocalizationReport",
    "MagneticOperator2D",
    "TubeDiscretization",
    "assemble_2d",
    "assemble_2d_physical",
    "localization_diagnostics",
    "solve_2d",
    "SpectrumResult",
    "cluster_eigenvalues",
    "cluster_means",
    "ExperimentConfig",
    "ComparisonReport",
    "compare_spectra",
    "emit_report",
    "run_pipeline",
    "__version__",
]
