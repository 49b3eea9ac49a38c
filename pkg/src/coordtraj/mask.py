"""Self-attention masks over the row layout and their information-flow closure.

``allowed[q, s]`` is True when query row ``q`` may attend key row ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sequence import RowDescriptor, RowKind, interleave_rows, location_rows

VARIANTS = ("lookahead", "baseline", "naive")


@dataclass(frozen=True, eq=False)
class AttentionMask:
    allowed: np.ndarray
    layout: tuple[RowDescriptor, ...]
    variant: str

    @property
    def size(self) -> int:
        return len(self.layout)

    def prefix(self, n: int) -> "AttentionMask":
        """Mask restricted to the first ``n`` layout rows."""
        return AttentionMask(self.allowed[:n, :n], self.layout[:n], self.variant)

    def to_text(self) -> str:
        return "\n".join("".join("1" if a else "0" for a in row) for row in self.allowed)


def _lookahead_allows(q: RowDescriptor, s: RowDescriptor) -> bool:
    if s.kind is RowKind.START:
        return True
    if q.kind is RowKind.START:
        return False
    if s.t < q.t:
        return True
    if s.t > q.t:
        return False
    if s.kind is RowKind.LOCATION:
        return s.k <= q.k
    # key is a look-ahead row at the same step
    if q.kind is RowKind.LOCATION:
        return s.k < q.k
    return s.k <= q.k


@lru_cache(maxsize=None)
def build_lookahead_mask(K: int, T: int) -> AttentionMask:
    layout = interleave_rows(K, T)
    n = len(layout)
    allowed = np.zeros((n, n), dtype=bool)
    for i, q in enumerate(layout):
        for j, s in enumerate(layout):
            allowed[i, j] = _lookahead_allows(q, s)
    allowed.setflags(write=False)
    return AttentionMask(allowed, layout, "lookahead")


@lru_cache(maxsize=None)
def build_baseline_mask(K: int, T: int) -> AttentionMask:
    """Location rows only; z_{t2,k2} sees z_{t1,k1} iff t1 <= t2."""
    layout = location_rows(K, T)
    t = np.array([r.t for r in layout])
    allowed = t[None, :] <= t[:, None]
    allowed.setflags(write=False)
    return AttentionMask(allowed, layout, "baseline")


@lru_cache(maxsize=None)
def build_naive_lookahead_mask(K: int, T: int) -> AttentionMask:
    """Baseline plus a one-step peek at earlier-ordered agents' next positions.

    Only sound for a single attention layer; deeper stacks leak the future.
    """
    layout = location_rows(K, T)
    t = np.array([r.t for r in layout])
    k = np.array([r.k for r in layout])
    allowed = (t[None, :] <= t[:, None]) | ((t[None, :] == t[:, None] + 1) & (k[None, :] < k[:, None]))
    allowed.setflags(write=False)
    return AttentionMask(allowed, layout, "naive")


def build_mask(variant: str, K: int, T: int) -> AttentionMask:
    try:
        builder = {
            "lookahead": build_lookahead_mask,
            "baseline": build_baseline_mask,
            "naive": build_naive_lookahead_mask,
        }[variant]
    except KeyError:
        raise ValueError(f"unknown mask variant {variant!r}; expected one of {VARIANTS}") from None
    return builder(K, T)


def reachability(mask: AttentionMask, layers: int) -> np.ndarray:
    """``R[q, s]``: input row ``s`` can influence output row ``q`` after ``layers`` rounds.

    Residual connections always carry a row to itself, so the one-step
    relation is ``allowed | I``.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    step = (np.asarray(mask.allowed) | np.eye(mask.size, dtype=bool)).astype(np.int64)
    reach = step.copy()
    for _ in range(layers - 1):
        reach = ((reach @ step) > 0).astype(np.int64)
    return reach.astype(bool)


def is_transitively_closed(mask: AttentionMask) -> bool:
    a = np.asarray(mask.allowed).astype(np.int64)
    return bool(np.array_equal((a @ a) > 0, mask.allowed))


def permitted_inputs(mask: AttentionMask) -> np.ndarray:
    """Inputs whose content the chain-rule factorization lets each row depend on.

    For a prediction at (t, k): everything up to step t for every agent,
    plus step-t displacements of agents ordered before k. Look-ahead rows
    u_{t1,k1} carry step-t1 displacements; location rows z_{t1,k1} carry the
    position at t1, which encodes the displacement at t1 - 1. Non-location
    query rows get the same information set as the z row at their step/slot,
    widened by their own look-ahead content.
    """
    layout = mask.layout
    n = len(layout)
    out = np.zeros((n, n), dtype=bool)
    for i, q in enumerate(layout):
        for j, s in enumerate(layout):
            if s.kind is RowKind.START:
                out[i, j] = True
                continue
            if q.kind is RowKind.START:
                out[i, j] = False
                continue
            # (step, slot) of the displacement the key row reveals; z rows
            # reveal the previous step's displacement
            rev_t = s.t if s.kind is RowKind.LOOKAHEAD else s.t - 1
            if rev_t < q.t:
                out[i, j] = True
            elif rev_t == q.t:
                if q.kind is RowKind.LOOKAHEAD:
                    out[i, j] = s.k <= q.k
                else:
                    out[i, j] = s.k < q.k
            else:
                out[i, j] = False
    return out


def leak_report(mask: AttentionMask, layers: int) -> list[tuple[RowDescriptor, RowDescriptor]]:
    """(output z row, forbidden input row) pairs reachable at ``layers`` depth."""
    reach = reachability(mask, layers)
    ok = permitted_inputs(mask)
    bad = reach & ~ok
    out = []
    for q, s in zip(*np.nonzero(bad)):
        if mask.layout[q].kind is RowKind.LOCATION:
            out.append((mask.layout[q], mask.layout[s]))
    return out
