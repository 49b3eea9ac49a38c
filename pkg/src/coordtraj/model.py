"""Multi-entity Transformer over start, location and look-ahead rows."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .mask import AttentionMask
from .sequence import RowArrays, RowKind, Sequence, row_arrays


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    n_layers: int = 2
    embed_dim: int = 20
    mlp_widths: tuple[int, ...] = (64, 128)
    n_bins: int = 9
    n_agents_total: int = 2
    context_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not self.mlp_widths or self.mlp_widths[-1] != self.d_model:
            raise ValueError("final MLP width must equal d_model")
        for name in ("d_model", "n_heads", "d_ff", "n_layers", "embed_dim", "n_bins", "n_agents_total"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.context_dim < 0:
            raise ValueError("context_dim must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


TOY_MODEL_CONFIG = ModelConfig()
# d_model 512, 8 heads, d_ff 2048, 6 layers, MLP 128/256/512, 20-dim embeddings,
# 121 bins, binary frontcourt-side context. Players in the 2015-16 set: ~500.
BASKETBALL_MODEL_CONFIG = ModelConfig(
    d_model=512, n_heads=8, d_ff=2048, n_layers=6, embed_dim=20,
    mlp_widths=(128, 256, 512), n_bins=121, n_agents_total=500, context_dim=1,
)

# raw feature width per row kind, excluding embedding and context
_RAW_WIDTH = {RowKind.START: 2, RowKind.LOCATION: 2, RowKind.LOOKAHEAD: 4}
_MLP_NAME = {RowKind.START: "g_r", RowKind.LOCATION: "g_z", RowKind.LOOKAHEAD: "g_u"}


class NonFiniteActivation(FloatingPointError):
    pass


def _mlp(d_in: int, widths: tuple[int, ...]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, w in enumerate(widths):
        layers.append(nn.Linear(d_in, w))
        if i < len(widths) - 1:
            layers.append(nn.ReLU())
        d_in = w
    return nn.Sequential(*layers)


class MaskedSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        h, dh = self.n_heads, self.d_head
        q = self.q(x).view(n, h, dh).transpose(0, 1)
        k = self.k(x).view(n, h, dh).transpose(0, 1)
        v = self.v(x).view(n, h, dh).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(dh)
        # disallowed keys get exactly zero weight after softmax
        scores = scores.masked_fill(~allowed, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        y = (attn @ v).transpose(0, 1).reshape(n, h * dh)
        return self.out(y)


class EncoderLayer(nn.Module):
    """Post-norm Transformer encoder layer without dropout."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.attn = MaskedSelfAttention(d_model, n_heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attn(x, allowed))
        return self.norm2(x + self.ff(x))


class MultiEntityTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.embedding = nn.Embedding(c.n_agents_total, c.embed_dim)
        self.g_z = _mlp(c.embed_dim + 2 + c.context_dim, c.mlp_widths)
        self.g_u = _mlp(c.embed_dim + 4 + c.context_dim, c.mlp_widths)
        self.g_r = _mlp(c.embed_dim + 2 + c.context_dim, c.mlp_widths)
        self.layers = nn.ModuleList(EncoderLayer(c.d_model, c.n_heads, c.d_ff) for _ in range(c.n_layers))
        self.classifier = nn.Linear(c.d_model, c.n_bins)

    @property
    def dtype(self) -> torch.dtype:
        return self.classifier.weight.dtype

    def embed_rows(self, ra: RowArrays) -> torch.Tensor:
        x = torch.zeros(ra.n_rows, self.config.d_model, dtype=self.dtype)
        for kind, idx in ra.index.items():
            agents = torch.as_tensor(ra.agent_ids[kind])
            if agents.numel() and (agents.min() < 0 or agents.max() >= self.config.n_agents_total):
                raise ValueError(f"agent id outside embedding table of size {self.config.n_agents_total}")
            feats = torch.as_tensor(ra.features[kind], dtype=self.dtype)
            expected = _RAW_WIDTH[kind] + self.config.context_dim
            if feats.shape[1] != expected:
                raise ValueError(f"{kind.value} rows have {feats.shape[1]} raw features, expected {expected}")
            inp = torch.cat([self.embedding(agents), feats], dim=1)
            x = x.index_copy(0, torch.as_tensor(idx), getattr(self, _MLP_NAME[kind])(inp))
        return x

    def encode(self, ra: RowArrays, allowed) -> torch.Tensor:
        allowed = torch.tensor(np.asarray(allowed), dtype=torch.bool)
        if allowed.shape != (ra.n_rows, ra.n_rows):
            raise ValueError(f"mask is {tuple(allowed.shape)} but there are {ra.n_rows} rows")
        x = self.embed_rows(ra)
        for i, layer in enumerate(self.layers):
            x = layer(x, allowed)
            if not torch.isfinite(x).all():
                raise NonFiniteActivation(f"non-finite activation after encoder layer {i}")
        return x

    def forward(self, ra: RowArrays, allowed) -> torch.Tensor:
        """Logits for every z row, in layout order: ``(n_z, n_bins)``."""
        h = self.encode(ra, allowed)
        z_idx = torch.as_tensor(ra.index.get(RowKind.LOCATION, np.zeros(0, dtype=np.int64)))
        return self.classifier(h[z_idx])


@dataclass
class ForwardOutput:
    """Per-z-row logits. ``logits`` is ``(T, K, n_bins)`` when all z rows are present."""

    z_logits: torch.Tensor
    K: int
    T: int | None = None
    rows: tuple = field(default_factory=tuple)

    @property
    def logits(self) -> torch.Tensor:
        if self.T is None:
            raise ValueError("prefix output does not cover a full T x K grid")
        return self.z_logits.reshape(self.T, self.K, -1)

    def probs(self) -> torch.Tensor:
        return torch.softmax(self.z_logits, dim=-1)


def init_params(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> MultiEntityTransformer:
    """Fan-in scaled uniform weights, unit-normal embeddings, identity layer norms."""
    model = MultiEntityTransformer(config).to(dtype)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
                mod.bias.copy_(torch.rand(mod.bias.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
            elif isinstance(mod, nn.Embedding):
                mod.weight.copy_(torch.randn(mod.weight.shape, generator=gen, dtype=dtype))
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.fill_(0.0)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward(model: MultiEntityTransformer, seq: Sequence, mask: AttentionMask) -> ForwardOutput:
    K = seq.n_agents
    if seq.context_dim != model.config.context_dim:
        raise ValueError(f"sequence context width {seq.context_dim} != config {model.config.context_dim}")
    layout = mask.layout
    if layout and max(r.k for r in layout) > K:
        raise ValueError("mask layout references more agents than the sequence has")
    if layout and max(r.t for r in layout) > seq.n_steps:
        raise ValueError("mask layout references more steps than the sequence has")
    ra = row_arrays(seq, layout)
    z_logits = model(ra, mask.allowed)
    z_rows = tuple(r for r in layout if r.kind is RowKind.LOCATION)
    T = len(z_rows) // K if len(z_rows) % K == 0 and (not z_rows or z_rows[-1].k == K) else None
    return ForwardOutput(z_logits, K, T, z_rows)


def loss(output: ForwardOutput, labels) -> torch.Tensor:
    """Mean over (t, k) of ``-ln softmax(logits)[v_tk]``; labels are 1-based."""
    logits = output.logits
    lab = torch.as_tensor(np.asarray(labels), dtype=torch.int64)
    if lab.shape != logits.shape[:2]:
        raise ValueError(f"labels shape {tuple(lab.shape)} != logits grid {tuple(logits.shape[:2])}")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, (lab - 1).unsqueeze(-1)).mean()


def nll_grid(output: ForwardOutput, labels) -> torch.Tensor:
    """``(T, K)`` per-prediction NLLs."""
    lab = torch.as_tensor(np.asarray(labels), dtype=torch.int64)
    logp = torch.log_softmax(output.logits, dim=-1)
    return -logp.gather(-1, (lab - 1).unsqueeze(-1)).squeeze(-1)


def grad(model: MultiEntityTransformer, seq: Sequence, mask: AttentionMask, labels) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of :func:`loss` for every named parameter."""
    params = dict(model.named_parameters())
    model.zero_grad(set_to_none=True)
    value = loss(forward(model, seq, mask), labels)
    grads = torch.autograd.grad(value, list(params.values()), allow_unused=True)
    return {
        name: (torch.zeros_like(p) if g is None else g)
        for (name, p), g in zip(params.items(), grads)
    }
