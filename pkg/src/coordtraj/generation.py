"""Autoregressive rollouts: agent-wise for the look-ahead model, simultaneous for the baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .mask import AttentionMask, build_baseline_mask, build_lookahead_mask
from .model import MultiEntityTransformer, forward, nll_grid
from .sequence import Sequence, labels, z_row_index
from .trajectory_space import BinGrid, bin_center, sample_bin, sample_within_bin

MODES = ("sample", "bin_center")


@dataclass
class TraceStep:
    t: int
    k: int
    agent_id: int
    chosen_bin: int
    prob: float


@dataclass
class RolloutResult:
    sequence: Sequence
    trace: list[TraceStep] = field(default_factory=list)

    def log_prob(self) -> float:
        """Sum of log categorical probabilities of the chosen bins."""
        return float(sum(np.log(s.prob) for s in self.trace))


def _draw(logits: torch.Tensor, grid: BinGrid, rng: np.random.Generator, mode: str):
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite logits during rollout")
    probs = torch.softmax(logits.detach().to(torch.float64), dim=-1).numpy()
    v = sample_bin(probs, rng)
    if mode == "sample":
        delta = sample_within_bin(v, grid, rng)
    elif mode == "bin_center":
        delta = bin_center(v, grid)
    else:
        raise ValueError(f"unknown rollout mode {mode!r}; expected one of {MODES}")
    return v, float(probs[v - 1]), np.asarray(delta)


def _empty_track(starts, T: int) -> np.ndarray:
    starts = np.asarray(starts, dtype=np.float64)
    if starts.ndim != 2 or starts.shape[1] != 2:
        raise ValueError("starts must have shape (K, 2)")
    pos = np.full((starts.shape[0], T + 1, 2), np.nan)
    pos[:, 0] = starts
    return pos


def _prefix_logits(model, pos, agent_ids, context, mask: AttentionMask, n_rows: int) -> torch.Tensor:
    seq = Sequence(agent_ids, pos, context)
    with torch.no_grad():
        return forward(model, seq, mask.prefix(n_rows)).z_logits


def rollout_agentwise(
    model: MultiEntityTransformer,
    grid: BinGrid,
    starts,
    agent_ids,
    T: int,
    rng: np.random.Generator,
    order=None,
    mode: str = "sample",
    context=None,
) -> RolloutResult:
    """Generate one agent at a time within each step, following ``order``.

    ``order`` is a 0-based permutation of input slots; the generated
    sequence is returned in the input slot order.
    """
    agent_ids = np.asarray(agent_ids, dtype=np.int64)
    K = len(agent_ids)
    order = np.arange(K) if order is None else np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(K)):
        raise ValueError(f"order {order.tolist()} is not a permutation of 0..{K - 1}")
    pos = _empty_track(np.asarray(starts)[order], T)
    ids = agent_ids[order]
    ctx = None if context is None else np.asarray(context, dtype=np.float64)[order]
    mask = build_lookahead_mask(K, T)
    trace = []
    for t in range(1, T + 1):
        for k in range(1, K + 1):
            logits = _prefix_logits(model, pos, ids, ctx, mask, z_row_index(t, k, K) + 1)[-1]
            v, p, delta = _draw(logits, grid, rng, mode)
            pos[k - 1, t] = pos[k - 1, t - 1] + delta
            trace.append(TraceStep(t, k, int(ids[k - 1]), v, p))
    inverse = np.argsort(order)
    out = Sequence(agent_ids.copy(), pos[inverse], None if context is None else np.asarray(context, dtype=np.float64))
    return RolloutResult(out, trace)


def rollout_simultaneous(
    model: MultiEntityTransformer,
    grid: BinGrid,
    starts,
    agent_ids,
    T: int,
    rng: np.random.Generator,
    mode: str = "sample",
    context=None,
) -> RolloutResult:
    """Baseline rollout: every agent's step-t bin drawn independently."""
    agent_ids = np.asarray(agent_ids, dtype=np.int64)
    K = len(agent_ids)
    pos = _empty_track(starts, T)
    mask = build_baseline_mask(K, T)
    trace = []
    for t in range(1, T + 1):
        logits = _prefix_logits(model, pos, agent_ids, context, mask, t * K)[-K:]
        for k in range(1, K + 1):
            v, p, delta = _draw(logits[k - 1], grid, rng, mode)
            pos[k - 1, t] = pos[k - 1, t - 1] + delta
            trace.append(TraceStep(t, k, int(agent_ids[k - 1]), v, p))
    return RolloutResult(Sequence(agent_ids.copy(), pos, context), trace)


def rollout_hybrid(
    model: MultiEntityTransformer,
    grid: BinGrid,
    seq: Sequence,
    free_slot: int,
    rng: np.random.Generator,
    mode: str = "sample",
) -> RolloutResult:
    """Generate one agent while the others replay ground truth.

    The free agent is moved to the last slot; its own history is generated.
    """
    K, T = seq.n_agents, seq.n_steps
    order = [s for s in range(K) if s != free_slot] + [free_slot]
    pos = seq.positions[order].copy()
    pos[-1, 1:] = np.nan
    ids = seq.agent_ids[order]
    ctx = None if seq.context is None else seq.context[order]
    mask = build_lookahead_mask(K, T)
    trace = []
    for t in range(1, T + 1):
        logits = _prefix_logits(model, pos, ids, ctx, mask, z_row_index(t, K, K) + 1)[-1]
        v, p, delta = _draw(logits, grid, rng, mode)
        pos[-1, t] = pos[-1, t - 1] + delta
        trace.append(TraceStep(t, K, int(ids[-1]), v, p))
    inverse = np.argsort(order)
    return RolloutResult(Sequence(seq.agent_ids.copy(), pos[inverse], seq.context), trace)


def teacher_forced_nll(model: MultiEntityTransformer, grid: BinGrid, seq: Sequence,
                       mask: AttentionMask) -> tuple[np.ndarray, float]:
    """Per-(t, k) bin NLLs with ground-truth history, and their mean."""
    with torch.no_grad():
        nll = nll_grid(forward(model, seq, mask), labels(seq, grid)).to(torch.float64).numpy()
    return nll, float(nll.mean())
