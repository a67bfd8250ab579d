"""Position-sensitive feature attribution for black-box sequence models.

Disentangles what a feature contributes (value importance) from where it
sits in the sequence (position importance), via exact enumeration on small
instances and two fixed-sample estimators at scale.
"""

__version__ = "0.1.0"

from .approx import (
    LeastSquaresConfig,
    SamplingConfig,
    least_squares_estimate,
    sampling_estimate,
)
from .exact import (
    AttributionMatrix,
    AttributionResult,
    exact_attribution,
    exact_matrix,
    position_importance,
    value_importance,
)
from .games import OrderedGame, SyntheticTokenModel, toy_ordered_game
from .gateway import (
    EvalCache,
    GatewayGame,
    MaskingPolicy,
    ModelEndpoint,
    SequenceSample,
    materialize,
    ordered_game_from_model,
)
from .perms import Permutation, SeededSampler

__all__ = [
    "AttributionMatrix",
    "AttributionResult",
    "EvalCache",
    "GatewayGame",
    "LeastSquaresConfig",
    "MaskingPolicy",
    "ModelEndpoint",
    "OrderedGame",
    "Permutation",
    "SamplingConfig",
    "SeededSampler",
    "SequenceSample",
    "SyntheticTokenModel",
    "exact_attribution",
    "exact_matrix",
    "least_squares_estimate",
    "materialize",
    "ordered_game_from_model",
    "position_importance",
    "sampling_estimate",
    "toy_ordered_game",
    "value_importance",
]
