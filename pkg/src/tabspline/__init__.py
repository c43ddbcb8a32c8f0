"""Spline and piecewise-linear encodings of numerical features for tabular MLPs."""

__version__ = "0.1.0"

from .basis import BasisFamily, KnotVector, build_clamped_knots, eval_basis, eval_basis_batch
from .encoding import EncoderSpec, fit_encoder
from .knots import KnotBudget, KnotSet, target_aware_knots
from .learnable import KnotLogits, knots_from_logits, learnable_param_count
from .ple import PleBoundaries, build_ple_boundaries, encode_ple, encode_ple_batch

__all__ = [
    "BasisFamily",
    "EncoderSpec",
    "KnotBudget",
    "KnotLogits",
    "KnotSet",
    "KnotVector",
    "PleBoundaries",
    "build_clamped_knots",
    "build_ple_boundaries",
    "encode_ple",
    "encode_ple_batch",
    "eval_basis",
    "eval_basis_batch",
    "fit_encoder",
    "knots_from_logits",
    "learnable_param_count",
    "target_aware_knots",
]
