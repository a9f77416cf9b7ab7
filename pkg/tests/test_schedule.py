import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from c3m.schedule import (axis_steps, c3m_schedule, checkerboard_schedule, make_schedule,
                          schedule_stats, serial_schedule)


def depth(a, b):
    """Refinement steps needed to fill the open interval between a and b."""
    if b - a <= 1:
        return 0
    m = (a + b) // 2
    return 1 + max(depth(a, m), depth(m, b))


def oracle_pass_count(h, w):
    return 1 + max(depth(0, h - 1), depth(0, w - 1))


def simulate_c3m(h, w):
    """Brute-force subdivision on explicit position sets."""
    xs, ys = {0, h - 1}, {0, w - 1}
    decoded = {(r, c) for r in xs for c in ys}
    passes = [sorted(decoded)]
    while len(decoded) < h * w:
        def refine(s):
            s = sorted(s)
            return set(s) | {(a + b) // 2 for a, b in zip(s, s[1:]) if b - a >= 2}
        xs, ys = refine(xs), refine(ys)
        now = {(r, c) for r in xs for c in ys}
        passes.append(sorted(now - decoded))
        decoded = now
    return passes


def check_partition_and_causality(s):
    s.validate()
    seen = np.zeros((s.h, s.w), dtype=bool)
    for t in range(s.pass_count):
        pos = s.pass_coords(t)
        assert len({(int(r), int(c)) for r, c in pos}) == len(pos)
        assert not seen[pos[:, 0], pos[:, 1]].any()
        assert np.array_equal(s.causal_mask(t), seen)
        seen[pos[:, 0], pos[:, 1]] = True
    assert seen.all()


def test_serial_examples():
    assert serial_schedule(1, 1).pass_count == 1
    s = serial_schedule(2, 3)
    assert [p.positions[0] for p in s.passes] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    assert serial_schedule(16, 16).pass_count == 256


def test_checkerboard_examples():
    s = checkerboard_schedule(2, 2)
    assert s.passes[0].positions == ((0, 0), (1, 1))
    assert s.passes[1].positions == ((0, 1), (1, 0))
    assert [len(p) for p in checkerboard_schedule(4, 4).passes] == [8, 8]
    assert [len(p) for p in checkerboard_schedule(3, 3).passes] == [5, 4]
    assert s.backbones == ("none", "conv3x3")
    one = checkerboard_schedule(1, 1)
    assert one.pass_count == 2 and len(one.passes[1]) == 0


def test_c3m_examples():
    assert c3m_schedule(2, 2).pass_count == 1
    s = c3m_schedule(3, 3)
    assert s.passes[0].positions == ((0, 0), (0, 2), (2, 0), (2, 2))
    assert s.passes[1].positions == ((0, 1), (1, 0), (1, 1), (1, 2), (2, 1))
    s16 = c3m_schedule(16, 16)
    assert s16.pass_count == oracle_pass_count(16, 16)
    assert s16.pass_count <= 2 * math.ceil(math.log2(15)) + 2


def test_c3m_backbones():
    s = c3m_schedule(9, 9)
    assert s.backbones[0] == "none"
    assert s.backbones[-1] == "conv3x3"
    assert set(s.backbones[1:-1]) == {"transformer"}


@pytest.mark.parametrize("h,w", [(1, 1), (1, 7), (5, 1), (3, 3), (6, 11), (17, 9), (33, 64)])
def test_c3m_matches_brute_force(h, w):
    s = c3m_schedule(h, w)
    assert [list(p.positions) for p in s.passes] == simulate_c3m(h, w)


@given(st.integers(1, 64), st.integers(1, 64), st.sampled_from(["checkerboard", "c3m"]))
@settings(max_examples=150, deadline=None)
def test_partition_and_causality(h, w, kind):
    check_partition_and_causality(make_schedule(kind, h, w))


@given(st.integers(1, 24), st.integers(1, 24))
@settings(max_examples=40, deadline=None)
def test_serial_partition_and_causality(h, w):
    s = make_schedule("serial", h, w)
    assert s.causal(h * w - 1) == frozenset((r, c) for r in range(h) for c in range(w)) - {(h - 1, w - 1)}
    check_partition_and_causality(s)


@given(st.integers(1, 64), st.integers(1, 64))
@settings(max_examples=150, deadline=None)
def test_c3m_pass_count_oracle(h, w):
    assert c3m_schedule(h, w).pass_count == oracle_pass_count(h, w)


@given(st.integers(2, 64), st.integers(2, 64))
@settings(max_examples=100, deadline=None)
def test_c3m_midpoints_lie_between_decoded(h, w):
    s = c3m_schedule(h, w)
    for t in range(1, s.pass_count):
        causal = s.causal(t)
        rows = sorted({r for r, _ in causal})
        cols = sorted({c for _, c in causal})
        for r, c in s.passes[t].positions:
            assert r in rows or rows[0] < r < rows[-1]
            assert c in cols or cols[0] < c < cols[-1]
            # a new coordinate on an axis sits at the floor midpoint of its decoded neighbours
            if r not in rows:
                lo = max(x for x in rows if x < r)
                hi = min(x for x in rows if x > r)
                assert r == (lo + hi) // 2


def test_c3m_nested_decoded_sets():
    s = c3m_schedule(13, 20)
    prev = set()
    for t in range(s.pass_count + 1):
        cur = s.causal(t) if t < s.pass_count else frozenset(map(tuple, s.coords.tolist()))
        assert prev <= cur
        prev = cur
    assert len(prev) == 13 * 20


@pytest.mark.parametrize("n", [4, 8, 16, 32, 64])
def test_c3m_logarithmic_growth(n):
    assert c3m_schedule(2 * n, 2 * n).pass_count <= c3m_schedule(n, n).pass_count + 2


def test_axis_steps():
    assert axis_steps(1) == [[0]]
    assert axis_steps(5) == [[0, 4], [0, 2, 4], [0, 1, 2, 3, 4]]


def test_stats_examples():
    assert schedule_stats(checkerboard_schedule(4, 4)).zero_context_count == 8
    assert schedule_stats(c3m_schedule(7, 10)).zero_context_count == 4
    st_ = schedule_stats(serial_schedule(4, 4))
    assert st_.causal_counts[3, 3] == 15
    assert st_.zero_context_count == 1


def test_stats_receptive_fields():
    st_ = schedule_stats(checkerboard_schedule(4, 4))
    # interior odd cells see 4 anchors, corners of the odd lattice see 2
    assert (st_.passes[1].receptive_min, st_.passes[1].receptive_max) == (2, 4)
    c = schedule_stats(c3m_schedule(5, 5))
    assert c.passes[1].backbone == "transformer"
    assert c.passes[1].receptive_min == 4


def test_stats_serialization():
    rep = schedule_stats(c3m_schedule(5, 6))
    data = json.loads(rep.to_json(with_grid=True))
    assert data["pass_count"] == rep.pass_count
    assert np.array_equal(np.array(data["causal_counts"]), rep.causal_counts)
    text = rep.to_text().splitlines()
    assert text[0] == "kind: c3m" and f"pass_count: {oracle_pass_count(5, 6)}" in text


def test_invalid_inputs():
    with pytest.raises(ValueError):
        make_schedule("zigzag", 2, 2)
    with pytest.raises(ValueError):
        c3m_schedule(0, 3)
