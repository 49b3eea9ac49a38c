"""Per-sample Adam training with validation-based model selection."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
import torch

from .mask import build_mask
from .model import ModelConfig, MultiEntityTransformer, forward, init_params, loss
from .sequence import Sequence, labels, shuffle_agents
from .trajectory_space import BinGrid

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-9
    epochs: int = 50
    samples_per_epoch: int = 500
    plateau_patience: int = 20
    reduced_lr: float = 1e-7
    seed: int = 0
    shuffle_agents: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or self.reduced_lr < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.epochs < 1 or self.samples_per_epoch < 1:
            raise ValueError("epochs and samples_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# learning rate 1e-6 for the full-size model; the toy run uses 1e-5
BASKETBALL_TRAIN_CONFIG = TrainConfig(learning_rate=1e-6, epochs=650, samples_per_epoch=20000)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-9) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))


@dataclass
class EpochMetrics:
    epoch: int
    train_nll: float
    val_nll: float
    lr: float


@dataclass
class TrainResult:
    model: MultiEntityTransformer
    final_model: MultiEntityTransformer
    metrics: list[EpochMetrics]
    best_epoch: int

    @property
    def best_val_nll(self) -> float:
        return self.metrics[self.best_epoch - 1].val_nll


def sequence_loss(model: MultiEntityTransformer, seq: Sequence, variant: str, grid: BinGrid) -> torch.Tensor:
    mask = build_mask(variant, seq.n_agents, seq.n_steps)
    return loss(forward(model, seq, mask), labels(seq, grid))


def evaluate_nll(model: MultiEntityTransformer, seqs: Iterable[Sequence], variant: str, grid: BinGrid) -> float:
    """Mean per-sequence NLL (each itself a mean over T*K predictions)."""
    with torch.no_grad():
        vals = [float(sequence_loss(model, s, variant, grid)) for s in seqs]
    if not vals:
        raise ValueError("empty evaluation set")
    return float(np.mean(vals))


def sample_stream(seqs: list[Sequence], rng: np.random.Generator) -> Iterator[Sequence]:
    """Infinite stream of uniformly drawn sequences from a finite set."""
    if not seqs:
        return
    while True:
        yield seqs[int(rng.integers(len(seqs)))]


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_source: Iterator[Sequence],
    val_set: list[Sequence],
    grid: BinGrid,
    variant: str = "lookahead",
    dtype: torch.dtype = torch.float32,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    if model_cfg.n_bins != grid.bin_count:
        raise ValueError(f"n_bins={model_cfg.n_bins} but grid has {grid.bin_count} bins")
    model = init_params(model_cfg, train_cfg.seed, dtype)
    params = dict(model.named_parameters())
    state = AdamState()
    rng = np.random.default_rng(train_cfg.seed)
    lr = train_cfg.learning_rate
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)

    best_state, best_val, best_epoch = None, math.inf, 0
    since_best, reduced = 0, False
    metrics: list[EpochMetrics] = []
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        total = 0.0
        for i in range(train_cfg.samples_per_epoch):
            try:
                seq = next(train_source)
            except StopIteration:
                raise TrainingError(f"training source exhausted in epoch {epoch} after {i} samples") from None
            if train_cfg.shuffle_agents:
                seq = shuffle_agents(seq, rng)
            try:
                value = sequence_loss(model, seq, variant, grid)
            except FloatingPointError as e:
                raise TrainingError(f"epoch {epoch}, sample {i}: {e}") from e
            if not torch.isfinite(value):
                raise TrainingError(f"non-finite loss {float(value)} at epoch {epoch}, sample {i}")
            grads = torch.autograd.grad(value, list(params.values()), allow_unused=True)
            grads = {n: (torch.zeros_like(p) if g is None else g) for (n, p), g in zip(params.items(), grads)}
            adam_step(params, grads, state, lr, betas, train_cfg.adam_eps)
            total += value.item()
        model.eval()
        val = evaluate_nll(model, val_set, variant, grid)
        m = EpochMetrics(epoch, total / train_cfg.samples_per_epoch, val, lr)
        metrics.append(m)
        log.info("epoch %d train_nll %.4f val_nll %.4f lr %g", epoch, m.train_nll, val, lr)
        if on_epoch is not None:
            on_epoch(m)
        if val < best_val - 1e-4 or best_state is None:
            best_val, best_epoch, since_best = val, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            since_best += 1
            if val < best_val:
                best_val, best_epoch = val, epoch
                best_state = copy.deepcopy(model.state_dict())
            if since_best >= train_cfg.plateau_patience and not reduced:
                lr, reduced = train_cfg.reduced_lr, True
    best = init_params(model_cfg, train_cfg.seed, dtype)
    best.load_state_dict(best_state)
    best.eval()
    return TrainResult(best, model, metrics, best_epoch)


def write_metrics_csv(path, metrics: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_nll", "val_nll", "lr"])
        for m in metrics:
            w.writerow([m.epoch, repr(m.train_nll), repr(m.val_nll), repr(m.lr)])
