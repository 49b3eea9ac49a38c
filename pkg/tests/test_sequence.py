import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordtraj.sequence import (
    RowKind,
    Sequence,
    SequenceFileError,
    build_raw_rows,
    clamp_to_grid,
    interleave_rows,
    labels,
    permute_agents,
    read_sequences,
    shuffle_agents,
    write_sequences,
    z_row_index,
)
from coordtraj.toyworld import ToyConfig, generate_toy_dataset
from coordtraj.trajectory_space import TOY_GRID, TrajectoryRangeError


def names(rows):
    return [str(r) for r in rows]


def test_interleave_small():
    assert names(interleave_rows(2, 2)) == ["r1", "r2", "z11", "u11", "z12", "u12", "z21", "u21", "z22", "u22"]
    assert names(interleave_rows(1, 1)) == ["r1", "z11", "u11"]


@pytest.mark.parametrize("K,T", [(1, 1), (2, 20), (10, 20), (3, 7)])
def test_interleave_length_and_z_index(K, T):
    rows = interleave_rows(K, T)
    assert len(rows) == K + 2 * T * K
    for t in range(1, T + 1):
        for k in range(1, K + 1):
            z = rows[z_row_index(t, k, K)]
            u = rows[z_row_index(t, k, K) + 1]
            assert (z.kind, z.t, z.k) == (RowKind.LOCATION, t, k)
            assert (u.kind, u.t, u.k) == (RowKind.LOOKAHEAD, t, k)
    assert len(interleave_rows(10, 20)) == 410


def test_interleave_rejects_empty():
    with pytest.raises(ValueError):
        interleave_rows(0, 3)


def _two_agent_seq():
    # agent slot 1 goes (-1,0) -> (0,1) -> (0,1); slot 2 mirrors from (1,0)
    pos = [[[-1, 0], [0, 1], [0, 1]], [[1, 0], [2, 1], [2, 1]]]
    return Sequence([0, 1], pos)


def test_raw_rows_content():
    rows = build_raw_rows(_two_agent_seq(), TOY_GRID)
    layout = interleave_rows(2, 2)
    by_name = dict(zip(names(layout), rows))
    u11 = by_name["u11"]
    assert u11.next_position == (0.0, 1.0)
    assert u11.trajectory == (1.0, 1.0)
    assert u11.position == u11.next_position
    assert by_name["z11"].position == (-1.0, 0.0)
    assert by_name["z11"].trajectory is None
    for k in (1, 2):
        r, z = by_name[f"r{k}"], by_name[f"z1{k}"]
        assert (r.agent_id, r.position, r.context) == (z.agent_id, z.position, z.context)


def test_raw_rows_lookahead_invariant(rng):
    seq = generate_toy_dataset(ToyConfig(n_steps=5), 1, 3)[0]
    layout = interleave_rows(2, 5)
    for row, raw in zip(layout, build_raw_rows(seq, TOY_GRID)):
        if row.kind is RowKind.LOOKAHEAD:
            prev = seq.positions[row.k - 1, row.t - 1]
            assert raw.next_position == tuple(prev + np.array(raw.trajectory))


def test_raw_rows_context_steps():
    ctx = np.arange(2 * 3).reshape(2, 3, 1).astype(float)
    seq = Sequence([0, 1], _two_agent_seq().positions, ctx)
    by_name = dict(zip(names(interleave_rows(2, 2)), build_raw_rows(seq)))
    assert by_name["u21"].context == (1.0,)  # h at t, not t+1
    assert by_name["z21"].context == (1.0,)
    assert by_name["r2"].context == (3.0,)


def test_raw_rows_out_of_grid_names_step():
    seq = Sequence([0], [[[0, 0], [1, 0], [3, 0]]])
    with pytest.raises(TrajectoryRangeError, match=r"t=2, k=1"):
        build_raw_rows(seq, TOY_GRID)


def test_sequence_validation():
    with pytest.raises(ValueError):
        Sequence([0, 0], np.zeros((2, 3, 2)))
    with pytest.raises(ValueError):
        Sequence([0], np.zeros((1, 1, 2)))
    with pytest.raises(ValueError):
        Sequence([0, 1], np.zeros((1, 3, 2)))


def test_labels():
    seq = Sequence([0, 1], [[[0, 0], [1, 1], [1, 1]], [[2, 0], [3, 1], [3, 1]]])
    lab = labels(seq, TOY_GRID)
    assert lab.shape == (2, 2)
    assert lab[0].tolist() == [9, 9]
    assert lab[1].tolist() == [5, 5]


def test_shuffle_k1_identity(rng):
    seq = Sequence([3], [[[0, 0], [1, 1]]])
    assert shuffle_agents(seq, rng) == seq


def test_shuffle_swap_frequency():
    r = np.random.default_rng(77)
    seq = _two_agent_seq()
    n = 10_000
    swaps = sum(shuffle_agents(seq, r).agent_ids[0] == 1 for _ in range(n))
    sigma = np.sqrt(0.25 / n)
    assert abs(swaps / n - 0.5) < 3 * sigma


def test_permutation_composition(rng):
    seq = generate_toy_dataset(ToyConfig(n_steps=3), 1, 0)[0]
    seq = Sequence([4, 7, 2], np.concatenate([seq.positions, seq.positions[:1] + 5]))
    p1, p2 = rng.permutation(3), rng.permutation(3)
    assert permute_agents(permute_agents(seq, p1), p2) == permute_agents(seq, p1[p2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 4), T=st.integers(1, 5))
def test_shuffle_equivariance(seed, K, T):
    r = np.random.default_rng(seed)
    steps = r.integers(-1, 2, (K, T, 2)).astype(float)
    starts = r.integers(-3, 4, (K, 1, 2)).astype(float)
    seq = Sequence(r.permutation(10)[:K], np.concatenate([starts, starts + np.cumsum(steps, 1)], 1))
    perm = r.permutation(K)
    shuffled = permute_agents(seq, perm)
    assert np.array_equal(labels(shuffled, TOY_GRID), labels(seq, TOY_GRID)[:, perm])
    layout = interleave_rows(K, T)
    base = dict(((row.kind, row.t, row.k), raw) for row, raw in zip(layout, build_raw_rows(seq)))
    for row, raw in zip(layout, build_raw_rows(shuffled)):
        assert raw == base[(row.kind, row.t, int(perm[row.k - 1]) + 1)]


def test_clamp_to_grid():
    seq = Sequence([0], [[[0, 0], [5, 0], [5, -3]]])
    c = clamp_to_grid(seq, TOY_GRID)
    labels(c, TOY_GRID)
    assert c.positions[0, 0].tolist() == [0, 0]
    assert c.positions[0, 1, 0] == pytest.approx(1.5)


def test_jsonl_roundtrip(tmp_path):
    seqs = generate_toy_dataset(ToyConfig(), 100, 11)
    seqs.append(Sequence([5, 6], np.random.default_rng(0).normal(size=(2, 4, 2)),
                         np.random.default_rng(1).normal(size=(2, 4, 3))))
    path = tmp_path / "s.jsonl"
    write_sequences(path, seqs)
    assert read_sequences(path) == seqs


def test_jsonl_empty(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_sequences(p) == []


def test_jsonl_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    good = json.dumps({"agent_ids": [0], "positions": [[[0, 0], [1, 0]]]})
    p.write_text(good + "\n" + json.dumps({"agent_ids": [0]}) + "\n")
    with pytest.raises(SequenceFileError, match=r"bad.jsonl:2: missing 'positions'"):
        read_sequences(p)
    p.write_text(json.dumps({"agent_ids": [0, 1], "positions": [[[0, 0], [1, 0]], [[0, 0]]]}) + "\n")
    with pytest.raises(SequenceFileError, match="inconsistent T"):
        read_sequences(p)
    p.write_text(good + "\n{not json\n")
    with pytest.raises(SequenceFileError, match=":2:"):
        read_sequences(p)
