"""Fixed-lag estimation of accelerometer intrinsics and gravity direction."""

from .errors import (
    AntipodeError,
    ConfigError,
    CoverageError,
    DataError,
    NonMonotonicTimeError,
    NonPSDError,
    RankDeficientError,
)
from .graph import EstimatorConfig, Estimate, IntrinsicsEstimator, run_estimator
from .odometry import GRAVITY, ImuSample, OdometryFactor, PoseMeasurement
from .synth import ScenarioConfig, scenario, simulate

__version__ = "0.1.0"
