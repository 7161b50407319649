"""Desk-scale laboratory for shifted grouped attention, low-rank adapter
fine-tuning, long-context evaluation protocols, and analytical FLOPs
accounting on small decoder-only transformers."""

from .errors import (CapacityError, ConfigurationError, ContractError,
                     DimensionError, StateError, TrainingDiverged)
from .model import LLAMA2_7B, ModelConfig, TransformerModel, count_parameters
from .patterns import (AttentionSpec, PatternMask, build_equivalent_mask,
                       competitor_masks, masked_full_attention, run_attention,
                       s2_attention, shift_halves, unshift_halves)

__all__ = [
    "AttentionSpec", "PatternMask", "build_equivalent_mask",
    "competitor_masks", "masked_full_attention", "run_attention",
    "s2_attention", "shift_halves", "unshift_halves",
    "ModelConfig", "TransformerModel", "count_parameters", "LLAMA2_7B",
    "CapacityError", "ConfigurationError", "ContractError",
    "DimensionError", "StateError", "TrainingDiverged",
]

__version__ = "0.1.0"
