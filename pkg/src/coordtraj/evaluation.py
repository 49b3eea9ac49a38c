"""Audits: per-step NLL, agent-order permutation, slot conditioning, and leakage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .mask import build_mask, permitted_inputs, reachability
from .model import ModelConfig, init_params, forward
from .sequence import RowKind, Sequence, permute_agents, row_arrays
from .generation import teacher_forced_nll
from .trajectory_space import BinGrid, TOY_GRID


def _nll(model, grid: BinGrid, variant: str, seq: Sequence) -> np.ndarray:
    mask = build_mask(variant, seq.n_agents, seq.n_steps)
    return teacher_forced_nll(model, grid, seq, mask)[0]


def per_timestep_nll(model, grid: BinGrid, variant: str, dataset: list[Sequence]) -> np.ndarray:
    """Mean NLL at each step over sequences and agents; length T."""
    if not dataset:
        raise ValueError("empty dataset")
    T = dataset[0].n_steps
    if any(s.n_steps != T for s in dataset):
        raise ValueError("all sequences must share T")
    per_seq = np.stack([_nll(model, grid, variant, s).mean(axis=1) for s in dataset])
    return per_seq.mean(axis=0)


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class PermutationAudit:
    unshuffled_nll: np.ndarray
    shuffled_nll: np.ndarray  # (n_sequences, n_shuffles)
    percent_error: np.ndarray  # same shape
    mean_abs_percent_error: float
    correlation: float
    notice: str = ""

    @property
    def shuffled_nll_mean(self) -> np.ndarray:
        return self.shuffled_nll.mean(axis=1)

    def rows(self) -> list[dict]:
        return [
            {"sequence": i, "unshuffled_nll": float(u), "shuffled_nll_mean": float(s),
             "mean_abs_percent_error": float(np.abs(pe).mean())}
            for i, (u, s, pe) in enumerate(zip(self.unshuffled_nll, self.shuffled_nll_mean, self.percent_error))
        ]


def permutation_audit(model, grid: BinGrid, variant: str, dataset: list[Sequence],
                      rng: np.random.Generator, n_shuffles: int = 10) -> PermutationAudit:
    """Percent error of each shuffled-order sequence NLL against the original order."""
    if not dataset:
        raise ValueError("empty dataset")
    base = np.array([_nll(model, grid, variant, s).mean() for s in dataset])
    if all(s.n_agents == 1 for s in dataset):
        zeros = np.zeros((len(dataset), n_shuffles))
        return PermutationAudit(base, np.repeat(base[:, None], n_shuffles, axis=1), zeros, 0.0, 1.0,
                                notice="all sequences have K=1; agent order cannot change, audit is vacuous")
    shuffled = np.empty((len(dataset), n_shuffles))
    for i, s in enumerate(dataset):
        for j in range(n_shuffles):
            shuffled[i, j] = _nll(model, grid, variant, permute_agents(s, rng.permutation(s.n_agents))).mean()
    pe = (shuffled - base[:, None]) / np.abs(base[:, None]) * 100.0
    return PermutationAudit(base, shuffled, pe, float(np.abs(pe).mean()),
                            _correlation(base, shuffled.mean(axis=1)))


@dataclass
class PositionAudit:
    first_slot_nll: np.ndarray  # (pairs,)
    last_slot_nll: np.ndarray  # (pairs, n_shuffles)
    percent_change: np.ndarray  # (pairs,) positive means improvement
    mean_percent_improvement: float
    pairs: list = field(default_factory=list)  # (sequence index, agent id)


def position_conditioning_audit(model, grid: BinGrid, variant: str, dataset: list[Sequence],
                                rng: np.random.Generator, n_shuffles: int = 10) -> PositionAudit:
    """First-step NLL of each agent in slot 1 vs slot K with the others reshuffled.

    In slot 1 the other agents keep their original relative order.
    """
    firsts, lasts, pairs = [], [], []
    for i, s in enumerate(dataset):
        K = s.n_agents
        if K < 2:
            raise ValueError(f"sequence {i} has K={K}; position audit needs K >= 2")
        for a in range(K):
            others = np.array([j for j in range(K) if j != a])
            first = _nll(model, grid, variant, permute_agents(s, np.r_[a, others]))[0, 0]
            last = [
                _nll(model, grid, variant, permute_agents(s, np.r_[rng.permutation(others), a]))[0, K - 1]
                for _ in range(n_shuffles)
            ]
            firsts.append(first)
            lasts.append(last)
            pairs.append((i, int(s.agent_ids[a])))
    if not firsts:
        raise ValueError("empty dataset")
    firsts, lasts = np.array(firsts), np.array(lasts)
    change = (firsts[:, None] - lasts) / np.abs(firsts[:, None]) * 100.0
    per_pair = change.mean(axis=1)
    return PositionAudit(firsts, lasts, per_pair, float(per_pair.mean()), pairs)


@dataclass
class LeakageAudit:
    variant: str
    n_layers: int
    n_trials: int
    violations: list  # (trial, output row, input row) for forbidden influence
    unsound: list  # influence the mask's reachability says is impossible

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    def own_future_violations(self) -> list:
        """Output z_{t,k} influenced by a later-step row of the same agent slot."""
        return [(tr, q, s) for tr, q, s in self.violations if s.k == q.k and s.t > q.t]

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "n_layers": self.n_layers,
            "n_trials": self.n_trials,
            "violations": self.n_violations,
            "own_future_violations": len(self.own_future_violations()),
            "unsound": len(self.unsound),
            "examples": [f"{q} <- {s}" for _, q, s in self.violations[:10]],
        }


def random_sequence(K: int, T: int, n_agents_total: int, rng: np.random.Generator,
                    grid: BinGrid = TOY_GRID, context_dim: int = 0) -> Sequence:
    ids = rng.choice(n_agents_total, size=K, replace=False)
    lo = np.array([grid.x_min, grid.y_min])
    hi = np.array([grid.x_max, grid.y_max])
    steps = lo + (hi - lo) * rng.random((K, T, 2)) * 0.999
    starts = rng.uniform(-3, 3, (K, 1, 2))
    pos = np.concatenate([starts, starts + np.cumsum(steps, axis=1)], axis=1)
    ctx = rng.normal(size=(K, T + 1, context_dim)) if context_dim else None
    return Sequence(ids, pos, ctx)


def leakage_audit(config: ModelConfig, variant: str, K: int, T: int, n_trials: int,
                  seed: int = 0, grid: BinGrid = TOY_GRID) -> LeakageAudit:
    """Perturb each input row of random models/sequences and flag forbidden influence.

    Position inputs move by 10% of the grid's x extent; look-ahead rows also
    have their displacement inputs moved by the same amount.
    """
    mask = build_mask(variant, K, T)
    ok = permitted_inputs(mask)
    reach = reachability(mask, config.n_layers)
    bump = 0.1 * (grid.x_max - grid.x_min)
    rng = np.random.default_rng(seed)
    violations, unsound = [], []
    for trial in range(n_trials):
        model = init_params(config, seed=seed * 100003 + trial, dtype=torch.float64)
        seq = random_sequence(K, T, config.n_agents_total, rng, grid, config.context_dim)
        ra = row_arrays(seq, mask.layout)
        z_rows = ra.index[RowKind.LOCATION]
        with torch.no_grad():
            base = model(ra, mask.allowed)
            for s in range(mask.size):
                kind, off = ra.locate(s)
                pert = ra.copy()
                pert.features[kind][off, :2] += bump
                if kind is RowKind.LOOKAHEAD:
                    pert.features[kind][off, -2:] += bump
                changed = (model(pert, mask.allowed) != base).any(dim=1).numpy()
                for zi in np.nonzero(changed)[0]:
                    q = int(z_rows[zi])
                    if not ok[q, s]:
                        violations.append((trial, mask.layout[q], mask.layout[s]))
                    if not reach[q, s]:
                        unsound.append((trial, mask.layout[q], mask.layout[s]))
    return LeakageAudit(variant, config.n_layers, n_trials, violations, unsound)
