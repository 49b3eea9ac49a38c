"""Look-ahead multi-entity Transformer for statistically dependent multi-agent trajectories."""

from .mask import (
    AttentionMask,
    build_baseline_mask,
    build_lookahead_mask,
    build_mask,
    build_naive_lookahead_mask,
    reachability,
)
from .model import ModelConfig, MultiEntityTransformer, forward, grad, init_params, loss
from .sequence import Sequence, interleave_rows, labels, read_sequences, shuffle_agents, write_sequences
from .trajectory_space import BASKETBALL_GRID, TOY_GRID, BinGrid

__version__ = "0.1.0"
