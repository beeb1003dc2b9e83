"""Spatial smoothness estimation and cluster-size thresholds for volumetric
noise with a mixed Gaussian plus exponential autocorrelation."""

from .acf import (
    AcfParams,
    AcfSample,
    FwhmEstimate,
    acf_eval,
    acf_jacobian,
    fit_acf,
    fit_fwhm,
    fwhm_from_acf,
    gaussian_fwhm_classic,
    sample_acf,
)
from .cluster import (
    Cluster,
    ClusterSet,
    Connectivity,
    Sidedness,
    find_clusters,
    max_cluster_size,
    z_threshold_from_p,
)
from .clustsim import (
    MaxSizeTable,
    SimConfig,
    ThresholdTable,
    clustsim,
    run_simulation,
    threshold_from_table,
)
from .errors import (
    AcfsimError,
    ConfigError,
    DataError,
    DegenerateDataError,
    EmptyMaskError,
    FitFailureError,
    GridMismatchError,
    InsufficientDataError,
    InvalidGridError,
    NumericalError,
    SmoothnessUndefinedError,
    ZeroVarianceError,
)
from .estimators import ClusterThresholdSimulator, NoiseSampler, SmoothnessEstimator
from .grid import (
    Mask,
    ScalarField,
    Series4D,
    VolumeGrid,
    blur_series_in_mask,
    gaussian_blur_in_mask,
    resample,
    resample_mask,
    resample_series,
)
from .harness import (
    ExperimentConfig,
    StabilityReport,
    SubjectCell,
    aggregate,
    emit_report,
    read_config,
    run_experiment,
    run_subject,
)
from .nifti import read_mask, read_volume, write_volume
from .stats import DeltaStats, PairedTResult, delta_stats, paired_t_test
from .synth import SynthPlan, build_plan, synthesize_field

__version__ = "0.1.0"

__all__ = [
    "AcfParams", "AcfSample", "FwhmEstimate", "acf_eval", "acf_jacobian",
    "fit_acf", "fit_fwhm", "fwhm_from_acf", "gaussian_fwhm_classic", "sample_acf",
    "Cluster", "ClusterSet", "Connectivity", "Sidedness", "find_clusters",
    "max_cluster_size", "z_threshold_from_p",
    "MaxSizeTable", "SimConfig", "ThresholdTable", "clustsim", "run_simulation",
    "threshold_from_table",
    "AcfsimError", "ConfigError", "DataError", "DegenerateDataError",
    "EmptyMaskError", "FitFailureError", "GridMismatchError",
    "InsufficientDataError", "InvalidGridError", "NumericalError",
    "SmoothnessUndefinedError", "ZeroVarianceError",
    "ClusterThresholdSimulator", "NoiseSampler", "SmoothnessEstimator",
    "Mask", "ScalarField", "Series4D", "VolumeGrid", "blur_series_in_mask",
    "gaussian_blur_in_mask", "resample", "resample_mask", "resample_series",
    "ExperimentConfig", "StabilityReport", "SubjectCell", "aggregate",
    "emit_report", "read_config", "run_experiment", "run_subject",
    "read_mask", "read_volume", "write_volume",
    "DeltaStats", "PairedTResult", "delta_stats", "paired_t_test",
    "SynthPlan", "build_plan", "synthesize_field",
]
