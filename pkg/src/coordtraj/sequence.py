"""Multi-agent sequences, the interleaved row layout, and JSONL IO."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from .trajectory_space import BinGrid, TrajectoryRangeError, bin_indices


class RowKind(str, Enum):
    START = "r"
    LOCATION = "z"
    LOOKAHEAD = "u"


@dataclass(frozen=True)
class RowDescriptor:
    """Identity of one input row. ``t`` and ``k`` are 1-based; ``t == 0`` for start rows."""

    kind: RowKind
    t: int
    k: int

    def __str__(self):
        if self.kind is RowKind.START:
            return f"r{self.k}"
        return f"{self.kind.value}{self.t}{self.k}" if max(self.t, self.k) < 10 else f"{self.kind.value}{self.t},{self.k}"


@dataclass
class Sequence:
    """K agents with T+1 positions each; ``positions`` has shape ``(K, T+1, 2)``."""

    agent_ids: np.ndarray
    positions: np.ndarray
    context: np.ndarray | None = None

    def __post_init__(self):
        self.agent_ids = np.asarray(self.agent_ids, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError(f"positions must have shape (K, T+1, 2), got {self.positions.shape}")
        K, T1, _ = self.positions.shape
        if K < 1 or T1 < 2:
            raise ValueError("need at least one agent and two positions (T >= 1)")
        if self.agent_ids.shape != (K,):
            raise ValueError(f"expected {K} agent ids, got {self.agent_ids.shape}")
        if len(set(self.agent_ids.tolist())) != K:
            raise ValueError("agent_ids must be distinct")
        if self.context is not None:
            self.context = np.asarray(self.context, dtype=np.float64)
            if self.context.ndim != 3 or self.context.shape[:2] != (K, T1):
                raise ValueError(f"context must have shape (K, T+1, C), got {self.context.shape}")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def context_dim(self) -> int:
        return 0 if self.context is None else self.context.shape[2]

    def context_array(self) -> np.ndarray:
        """Context with shape ``(K, T+1, C)``; zero-width when absent."""
        if self.context is None:
            return np.zeros(self.positions.shape[:2] + (0,))
        return self.context

    def displacements(self) -> np.ndarray:
        """``(K, T, 2)`` per-step displacements."""
        return np.diff(self.positions, axis=1)

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        if (self.context is None) != (other.context is None):
            return False
        return (
            np.array_equal(self.agent_ids, other.agent_ids)
            and np.array_equal(self.positions, other.positions)
            and (self.context is None or np.array_equal(self.context, other.context))
        )


def validate_in_grid(seq: Sequence, grid: BinGrid) -> None:
    """Raise if any displacement lies outside ``grid``, naming ``(t, k)``."""
    d = seq.displacements()
    ok = (
        (d[..., 0] >= grid.x_min) & (d[..., 0] < grid.x_max)
        & (d[..., 1] >= grid.y_min) & (d[..., 1] < grid.y_max)
    )
    if not ok.all():
        k, t = np.argwhere(~ok)[0]
        raise TrajectoryRangeError(
            f"displacement {tuple(d[k, t])} at (t={t + 1}, k={k + 1}) outside the grid"
        )


def clamp_to_grid(seq: Sequence, grid: BinGrid) -> Sequence:
    """Preprocessing: clip displacements into the grid and re-integrate positions."""
    d = seq.displacements()
    eps_x = (grid.x_max - grid.x_min) * 1e-9
    eps_y = (grid.y_max - grid.y_min) * 1e-9
    d[..., 0] = np.clip(d[..., 0], grid.x_min, grid.x_max - eps_x)
    d[..., 1] = np.clip(d[..., 1], grid.y_min, grid.y_max - eps_y)
    pos = np.concatenate([seq.positions[:, :1], seq.positions[:, :1] + np.cumsum(d, axis=1)], axis=1)
    return Sequence(seq.agent_ids.copy(), pos, None if seq.context is None else seq.context.copy())


@lru_cache(maxsize=None)
def interleave_rows(K: int, T: int) -> tuple[RowDescriptor, ...]:
    """r_1..r_K, then z_{t,k} immediately followed by u_{t,k}, time-major."""
    if K < 1 or T < 1:
        raise ValueError("K and T must be >= 1")
    rows = [RowDescriptor(RowKind.START, 0, k) for k in range(1, K + 1)]
    for t in range(1, T + 1):
        for k in range(1, K + 1):
            rows.append(RowDescriptor(RowKind.LOCATION, t, k))
            rows.append(RowDescriptor(RowKind.LOOKAHEAD, t, k))
    return tuple(rows)


@lru_cache(maxsize=None)
def location_rows(K: int, T: int) -> tuple[RowDescriptor, ...]:
    """z rows only, time-major: the layout of the independence baseline."""
    return tuple(RowDescriptor(RowKind.LOCATION, t, k) for t in range(1, T + 1) for k in range(1, K + 1))


def z_row_index(t: int, k: int, K: int) -> int:
    """0-based position of z_{t,k} in the interleaved layout."""
    return K + 2 * K * (t - 1) + 2 * (k - 1)


@dataclass(frozen=True)
class RawFeatureRow:
    agent_id: int
    position: tuple[float, float]
    context: tuple[float, ...]
    trajectory: tuple[float, float] | None = None
    next_position: tuple[float, float] | None = None


def _row_content(seq: Sequence, row: RowDescriptor):
    k = row.k - 1
    ctx = seq.context_array()
    if row.kind is RowKind.START:
        return seq.agent_ids[k], seq.positions[k, 0], ctx[k, 0], None
    t = row.t - 1
    if row.kind is RowKind.LOCATION:
        return seq.agent_ids[k], seq.positions[k, t], ctx[k, t], None
    return seq.agent_ids[k], seq.positions[k, t + 1], ctx[k, t], seq.positions[k, t + 1] - seq.positions[k, t]


def build_raw_rows(
    seq: Sequence, grid: BinGrid | None = None, layout: Iterable[RowDescriptor] | None = None
) -> list[RawFeatureRow]:
    """Raw per-row content aligned with ``layout`` (interleaved by default).

    Look-ahead rows hold the position at ``t+1`` as ``position`` and
    ``next_position``, the step-``t`` context, and the step-``t`` displacement.
    """
    if grid is not None:
        validate_in_grid(seq, grid)
    if layout is None:
        layout = interleave_rows(seq.n_agents, seq.n_steps)
    out = []
    for row in layout:
        aid, pos, ctx, traj = _row_content(seq, row)
        pos_t = (float(pos[0]), float(pos[1]))
        if traj is None:
            out.append(RawFeatureRow(int(aid), pos_t, tuple(map(float, ctx))))
        else:
            out.append(
                RawFeatureRow(
                    int(aid), pos_t, tuple(map(float, ctx)),
                    trajectory=(float(traj[0]), float(traj[1])), next_position=pos_t,
                )
            )
    return out


@dataclass
class RowArrays:
    """Vectorized raw rows grouped by kind, ready for the input MLPs.

    ``features[kind]`` is ``(n_kind, F_kind)`` with column order
    z/r: ``[x, y, h...]`` and u: ``[x_next, y_next, h..., dx, dy]``.
    ``index[kind]`` gives the layout positions of those rows.
    """

    n_rows: int
    index: dict
    agent_ids: dict
    features: dict

    def copy(self) -> "RowArrays":
        return RowArrays(
            self.n_rows,
            {k: v.copy() for k, v in self.index.items()},
            {k: v.copy() for k, v in self.agent_ids.items()},
            {k: v.copy() for k, v in self.features.items()},
        )

    def locate(self, row: int) -> tuple[RowKind, int]:
        """Kind and within-kind offset of layout row ``row``."""
        for kind, idx in self.index.items():
            hit = np.nonzero(idx == row)[0]
            if hit.size:
                return kind, int(hit[0])
        raise IndexError(row)


def row_arrays(seq: Sequence, layout: tuple[RowDescriptor, ...]) -> RowArrays:
    ctx = seq.context_array()
    groups: dict = {kind: ([], []) for kind in RowKind}
    for i, row in enumerate(layout):
        groups[row.kind][0].append(i)
        groups[row.kind][1].append((row.t, row.k))
    index, agents, feats = {}, {}, {}
    for kind, (rows, tk) in groups.items():
        if not rows:
            continue
        tk = np.asarray(tk, dtype=np.int64)
        t, k = tk[:, 0] - 1, tk[:, 1] - 1
        if kind is RowKind.START:
            f = np.concatenate([seq.positions[k, 0], ctx[k, 0]], axis=1)
        elif kind is RowKind.LOCATION:
            f = np.concatenate([seq.positions[k, t], ctx[k, t]], axis=1)
        else:
            nxt = seq.positions[k, t + 1]
            f = np.concatenate([nxt, ctx[k, t], nxt - seq.positions[k, t]], axis=1)
        index[kind] = np.asarray(rows, dtype=np.int64)
        agents[kind] = seq.agent_ids[k]
        feats[kind] = f
    return RowArrays(len(layout), index, agents, feats)


def permute_agents(seq: Sequence, perm) -> Sequence:
    """New sequence whose slot ``i`` holds old slot ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    return Sequence(
        seq.agent_ids[perm].copy(),
        seq.positions[perm].copy(),
        None if seq.context is None else seq.context[perm].copy(),
    )


def shuffle_agents(seq: Sequence, rng: np.random.Generator) -> Sequence:
    return permute_agents(seq, rng.permutation(seq.n_agents))


def labels(seq: Sequence, grid: BinGrid) -> np.ndarray:
    """``(T, K)`` 1-based bin indices of each step's displacement."""
    validate_in_grid(seq, grid)
    return bin_indices(seq.displacements(), grid).T.copy()


class SequenceFileError(ValueError):
    pass


def _to_obj(seq: Sequence) -> dict:
    obj = {"agent_ids": seq.agent_ids.tolist(), "positions": seq.positions.tolist()}
    if seq.context is not None:
        obj["context"] = seq.context.tolist()
    return obj


def write_sequences(path, seqs: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        for seq in seqs:
            fh.write(json.dumps(_to_obj(seq)) + "\n")


def parse_sequence(obj: dict) -> Sequence:
    for key in ("agent_ids", "positions"):
        if key not in obj:
            raise SequenceFileError(f"missing {key!r}")
    positions = obj["positions"]
    lengths = {len(p) for p in positions}
    if len(lengths) > 1:
        raise SequenceFileError(f"inconsistent T across agents: lengths {sorted(lengths)}")
    if len(positions) != len(obj["agent_ids"]):
        raise SequenceFileError("number of agent_ids does not match number of position tracks")
    try:
        return Sequence(obj["agent_ids"], positions, obj.get("context"))
    except ValueError as e:
        raise SequenceFileError(str(e)) from e


def read_sequences(path) -> list[Sequence]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse_sequence(json.loads(line)))
            except (json.JSONDecodeError, SequenceFileError, TypeError) as e:
                raise SequenceFileError(f"{Path(path).name}:{lineno}: {e}") from e
    return out
