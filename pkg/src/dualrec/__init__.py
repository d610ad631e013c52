"""Dual-channel (temporal + Toeplitz positional) sequential recommender in numpy."""

from .model import ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from .positional import SparseMask, flops_count, generate_sparse_mask
from .temporal import TemporalParams, exp_power_attention
from .training import RunConfig, TrainConfig, train

__all__ = [
    "ModelConfig", "RunConfig", "SparseMask", "TemporalParams", "TrainConfig",
    "exp_power_attention", "flops_count", "forward", "generate_sparse_mask",
    "init_params", "load_checkpoint", "save_checkpoint", "train",
]
__version__ = "0.1.0"
