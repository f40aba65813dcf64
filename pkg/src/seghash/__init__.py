"""Segmented ternary deep hashing with hash-table candidate recall."""

from .align import AlignConfig, adjust_objective, adjust_objectives, alignment_loss, iterative_train
from .baselines import LshConfig, LshIndex, dense_rerank, hamming_scan, lsh_build, lsh_query, pack_bits
from .estimator import MODES, SegmentedHasher, SegmentedSearch, parse_mode
from .hashnet import GradientSet, HashHead, OptimizerState, adamw_step, backward, forward
from .index import RecallResult, SegmentedIndex
from .pretrain import InitialLossConfig, discretize, initial_loss, pretrain_run
from .storage import FormatError
from .ternary import SegmentConfig, collide, expand, relax, segment, ternarize

__version__ = "0.1.0"

__all__ = [
    "AlignConfig", "adjust_objective", "adjust_objectives", "alignment_loss", "iterative_train",
    "LshConfig", "LshIndex", "dense_rerank", "hamming_scan", "lsh_build", "lsh_query", "pack_bits",
    "MODES", "SegmentedHasher", "SegmentedSearch", "parse_mode",
    "GradientSet", "HashHead", "OptimizerState", "adamw_step", "backward", "forward",
    "RecallResult", "SegmentedIndex",
    "InitialLossConfig", "discretize", "initial_loss", "pretrain_run",
    "FormatError",
    "SegmentConfig", "collide", "expand", "relax", "segment", "ternarize",
]
