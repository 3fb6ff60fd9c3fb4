"""Dependent Matern processes: coupled Matern SDEs in joint state-space
form, with O(N) filtering, missing-value prediction and two-stage
posterior inference over the cross-series coupling."""

__version__ = "0.1.0"

from .errors import DepMaternError
from .filter_smoother import (
    FilterResult,
    MultiSeriesDataset,
    PredictionTable,
    SmootherResult,
    kalman_filter,
    predict_missing,
    rts_smooth,
)
from .inference import (
    InferenceConfig,
    PosteriorSamples,
    PosteriorSummary,
    SeriesFit,
    fit_lengthscales,
    mh_sample,
    summarize,
)
from .kernels import (
    CouplingMatrix,
    MaternHyper,
    correlation_from_C,
    cross_covariance,
    length_scale_ratio,
    matern_univariate,
)
from .simulate import sample_path, synth_benchmark
from .ssm import (
    JointStateSpaceModel,
    build_joint,
    build_univariate,
    diffusion_constant,
    discretize,
    joint_stationary_covariance,
    joint_stationary_covariance_lyapunov,
)

__all__ = [
    "__version__",
    "DepMaternError",
    "MultiSeriesDataset",
    "FilterResult",
    "SmootherResult",
    "PredictionTable",
    "kalman_filter",
    "rts_smooth",
    "predict_missing",
    "InferenceConfig",
    "PosteriorSamples",
    "PosteriorSummary",
    "SeriesFit",
    "fit_lengthscales",
    "mh_sample",
    "summarize",
    "CouplingMatrix",
    "MaternHyper",
    "correlation_from_C",
    "cross_covariance",
    "length_scale_ratio",
    "matern_univariate",
    "sample_path",
    "synth_benchmark",
    "JointStateSpaceModel",
    "build_joint",
    "build_univariate",
    "diffusion_constant",
    "discretize",
    "joint_stationary_covariance",
    "joint_stationary_covariance_lyapunov",
]
