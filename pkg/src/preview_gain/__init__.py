"""Finite-preview l2-gain state feedback for linear time-varying models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    FeasibilityError,
    InputError,
    NotPositiveDefiniteError,
    PreviewExhaustedError,
    PreviewGainError,
    SingularBlockError,
)
from .lifting import (  # noqa: E402
    BlockCache,
    PreviewCertificate,
    certificate,
    contraction_stats,
    deadbeat_gain,
    lift_block,
    lifted_riccati,
    preview_bound,
    transform_block,
)
from .model import ModelProvider, StepData, check_assumptions, unicycle_model  # noqa: E402
from .riccati import feedback_gain, riccati_step, riccati_step_alt, solve_periodic  # noqa: E402
from .sim import empirical_gain, measure_delta, simulate  # noqa: E402
from .spd import riemannian_distance  # noqa: E402
from .synthesis import StreamingController, approximant, gain_schedule, terminal_matrix  # noqa: E402

__all__ = [
    "__version__",
    "BlockCache",
    "ConvergenceError",
    "FeasibilityError",
    "InputError",
    "ModelProvider",
    "NotPositiveDefiniteError",
    "PreviewCertificate",
    "PreviewExhaustedError",
    "PreviewGainError",
    "SingularBlockError",
    "StepData",
    "StreamingController",
    "approximant",
    "certificate",
    "check_assumptions",
    "contraction_stats",
    "deadbeat_gain",
    "empirical_gain",
    "feedback_gain",
    "gain_schedule",
    "lift_block",
    "lifted_riccati",
    "measure_delta",
    "preview_bound",
    "riccati_step",
    "riccati_step_alt",
    "riemannian_distance",
    "simulate",
    "solve_periodic",
    "terminal_matrix",
    "transform_block",
    "unicycle_model",
]
