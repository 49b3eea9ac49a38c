import numpy as np
import pytest

from coordtraj.mask import (
    build_baseline_mask,
    build_lookahead_mask,
    build_mask,
    build_naive_lookahead_mask,
    is_transitively_closed,
    leak_report,
    reachability,
)
from coordtraj.sequence import RowKind


def allowed_names(mask, name):
    names = [str(r) for r in mask.layout]
    i = names.index(name)
    return {names[j] for j in np.nonzero(mask.allowed[i])[0]}


def triangle_oracle(K, T):
    """Lower triangle over the interleaved z/u block, full r block for every non-r query."""
    n = K + 2 * T * K
    a = np.zeros((n, n), dtype=bool)
    a[:, :K] = True
    a[K:, K:] = np.tril(np.ones((n - K, n - K), dtype=bool))
    return a


def bool_power_oracle(a, layers):
    step = a | np.eye(len(a), dtype=bool)
    out = step
    for _ in range(layers - 1):
        out = np.array([[np.any(out[i] & step[:, j]) for j in range(len(a))] for i in range(len(a))])
    return out


def test_lookahead_k2_t1_by_hand():
    m = build_lookahead_mask(2, 1)
    assert [str(r) for r in m.layout] == ["r1", "r2", "z11", "u11", "z12", "u12"]
    assert allowed_names(m, "r1") == {"r1", "r2"}
    assert allowed_names(m, "r2") == {"r1", "r2"}
    assert allowed_names(m, "z11") == {"r1", "r2", "z11"}
    assert allowed_names(m, "u11") == {"r1", "r2", "z11", "u11"}
    assert allowed_names(m, "z12") == {"r1", "r2", "z11", "u11", "z12"}
    assert allowed_names(m, "u12") == {"r1", "r2", "z11", "u11", "z12", "u12"}


@pytest.mark.parametrize("K,T", [(1, 1), (2, 3), (3, 4), (4, 2)])
def test_lookahead_structural_rules(K, T):
    m = build_lookahead_mask(K, T)
    for i, q in enumerate(m.layout):
        if q.kind is RowKind.START:
            assert all(m.layout[j].kind is RowKind.START for j in np.nonzero(m.allowed[i])[0])
        if q.kind is RowKind.LOCATION:
            own_u = i + 1
            assert m.layout[own_u].kind is RowKind.LOOKAHEAD and not m.allowed[i, own_u]


@pytest.mark.parametrize("K,T", [(K, T) for K in range(1, 5) for T in range(1, 7)])
def test_lookahead_closed_under_composition(K, T):
    m = build_lookahead_mask(K, T)
    assert is_transitively_closed(m)
    r1 = reachability(m, 1)
    for layers in (2, 3, 5):
        assert np.array_equal(bool_power_oracle(m.allowed, layers), r1)
        assert np.array_equal(reachability(m, layers), r1)


@pytest.mark.parametrize("K,T", [(2, 3), (3, 4), (1, 5)])
def test_no_label_leak_any_depth(K, T):
    m = build_lookahead_mask(K, T)
    names = [str(r) for r in m.layout]
    for layers in (1, 2, 4, 8):
        reach = reachability(m, layers)
        for t in range(1, T + 1):
            for k in range(1, K + 1):
                z = m.layout.index(next(r for r in m.layout if r.kind is RowKind.LOCATION and (r.t, r.k) == (t, k)))
                assert names[z + 1].startswith("u")
                assert not reach[z, z + 1]
        assert leak_report(m, layers) == []


def test_baseline_k2_t2():
    m = build_baseline_mask(2, 2)
    assert [str(r) for r in m.layout] == ["z11", "z12", "z21", "z22"]
    assert allowed_names(m, "z11") == {"z11", "z12"}
    assert allowed_names(m, "z21") == {"z11", "z12", "z21", "z22"}
    assert np.all(np.diag(m.allowed))
    assert is_transitively_closed(m)
    for layers in (1, 2, 3):
        assert leak_report(m, layers) == []


def test_naive_mask():
    m = build_naive_lookahead_mask(2, 2)
    assert "z21" in allowed_names(m, "z12")
    assert "z22" not in allowed_names(m, "z11") and "z21" not in allowed_names(m, "z11")
    assert np.array_equal(build_naive_lookahead_mask(1, 4).allowed, build_baseline_mask(1, 4).allowed)


def test_naive_mask_leaks_own_future_at_depth_two():
    m = build_naive_lookahead_mask(2, 3)
    names = [str(r) for r in m.layout]
    reach = reachability(m, 2)
    assert reach[names.index("z12"), names.index("z22")]
    assert reach[names.index("z11"), names.index("z21")]
    assert leak_report(m, 1) == []
    leaks = {(str(q), str(s)) for q, s in leak_report(m, 2)}
    assert ("z12", "z22") in leaks
    assert not is_transitively_closed(m)


@pytest.mark.parametrize("K", [2, 3, 4])
def test_naive_leaks_monotone_in_depth(K):
    m = build_naive_lookahead_mask(K, 4)
    counts = [len(leak_report(m, d)) for d in range(1, 6)]
    assert counts[0] == 0 and counts[1] > 0
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_reachability_depth_one_is_mask_plus_identity():
    for m in (build_lookahead_mask(2, 3), build_baseline_mask(3, 2), build_naive_lookahead_mask(2, 2)):
        assert np.array_equal(reachability(m, 1), m.allowed | np.eye(m.size, dtype=bool))
    with pytest.raises(ValueError):
        reachability(build_baseline_mask(1, 1), 0)


def test_every_row_has_a_key():
    for v in ("lookahead", "baseline", "naive"):
        for K, T in [(1, 1), (3, 4)]:
            assert build_mask(v, K, T).allowed.any(axis=1).all()
    with pytest.raises(ValueError):
        build_mask("nope", 1, 1)


def test_prefix_and_text():
    m = build_lookahead_mask(2, 2)
    p = m.prefix(5)
    assert p.size == 5 and np.array_equal(p.allowed, m.allowed[:5, :5])
    assert m.to_text().splitlines()[0] == "1100000000"


def test_mask_matches_triangle_oracle_small():
    for K in range(1, 4):
        for T in range(1, 4):
            assert np.array_equal(build_lookahead_mask(K, T).allowed, triangle_oracle(K, T))
