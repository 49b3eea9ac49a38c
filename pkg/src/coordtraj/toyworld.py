"""Two perfectly coordinated agents sharing one random action per step."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .sequence import Sequence
from .trajectory_space import TOY_GRID, bin_indices

TOY_ACTIONS = tuple(itertools.product((-1, 0, 1), repeat=2))


@dataclass(frozen=True)
class ToyConfig:
    n_steps: int = 20
    start_offsets: tuple = ((-1.0, 0.0), (1.0, 0.0))
    action_set: tuple = field(default=TOY_ACTIONS)

    def __post_init__(self):
        if len(self.action_set) != 9:
            raise ValueError("toy action set must have exactly 9 actions")
        if len(set(map(tuple, self.start_offsets))) != len(self.start_offsets):
            raise ValueError("start positions must be distinct")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


def generate_toy_sequence(cfg: ToyConfig, rng: np.random.Generator) -> Sequence:
    """Agent ``i`` always starts at ``start_offsets[i]``; slot order is random."""
    starts = np.asarray(cfg.start_offsets, dtype=np.float64)
    order = rng.permutation(len(starts))
    actions = np.asarray(cfg.action_set, dtype=np.float64)[rng.integers(0, len(cfg.action_set), cfg.n_steps)]
    offsets = np.concatenate([np.zeros((1, 2)), np.cumsum(actions, axis=0)])
    positions = starts[order][:, None, :] + offsets[None, :, :]
    return Sequence(order.copy(), positions)


def generate_toy_dataset(cfg: ToyConfig, count: int, seed: int) -> list[Sequence]:
    rng = np.random.default_rng(seed)
    return [generate_toy_sequence(cfg, rng) for _ in range(count)]


def toy_stream(cfg: ToyConfig, rng: np.random.Generator) -> Iterator[Sequence]:
    while True:
        yield generate_toy_sequence(cfg, rng)


def coordination_score(seq: Sequence) -> float:
    """Fraction of steps where both agents' displacements share a toy-grid bin."""
    if seq.n_agents != 2:
        raise ValueError(f"coordination score needs exactly 2 agents, got {seq.n_agents}")
    v = bin_indices(seq.displacements(), TOY_GRID)
    return float(np.mean(v[0] == v[1]))
