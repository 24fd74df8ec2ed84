import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctap.core import (
    GroundTruthSegment,
    Interval,
    Proposal,
    Source,
    best_matches,
    group_by_video,
    nms,
    rank_order,
    tiou,
    tiou_matrix,
)

from .oracles import nms_ref, tiou_ref

intervals = st.tuples(st.integers(0, 60), st.integers(1, 30)).map(lambda t: Interval(t[0], t[0] + t[1]))


def P(s, e, score, vid="v"):
    return Proposal(vid, Interval(s, e), score)


@pytest.mark.parametrize(
    "a,b,expected",
    [((0, 10), (0, 10), 1.0), ((0, 10), (20, 30), 0.0), ((0, 10), (5, 15), 5 / 15), ((0, 10), (10, 20), 0.0)],
)
def test_tiou_examples(a, b, expected):
    assert tiou(Interval(*a), Interval(*b)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("s,e", [(3, 3), (5, 2), (-1, 4)])
def test_interval_rejects_invalid(s, e):
    with pytest.raises(ValueError):
        Interval(s, e)


def test_interval_rejects_non_integer():
    with pytest.raises(TypeError):
        Interval(0.5, 3)


def test_proposal_validation():
    with pytest.raises(ValueError):
        P(0, 3, 1.5)
    with pytest.raises(ValueError):
        Proposal("v", Interval(0, 3), 0.5, Source.ACTIONNESS, pate_score=0.2)
    w = Proposal("v", Interval(0, 3), 0.05, Source.SLIDING_WINDOW, pate_score=0.05)
    assert w.with_(score=0.01).pate_score == 0.05


@given(intervals, intervals)
def test_tiou_matches_set_oracle(a, b):
    got = tiou(a, b)
    assert got == pytest.approx(tiou_ref((a.start, a.end), (b.start, b.end)), abs=1e-12)
    assert got == tiou(b, a)
    assert 0.0 <= got <= 1.0


@given(st.lists(intervals, min_size=1, max_size=8), st.lists(intervals, min_size=1, max_size=8))
def test_tiou_matrix_agrees_with_scalar(a, b):
    arr = lambda xs: np.array([[i.start, i.end] for i in xs])
    m = tiou_matrix(arr(a), arr(b))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(tiou(x, y), abs=1e-15)


def test_nms_basic():
    props = [P(0, 10, 0.9), P(1, 10, 0.8), P(20, 30, 0.7)]
    out = nms(props, 0.5)
    assert [p.score for p in out] == [0.9, 0.7]


def test_nms_tie_break_start_then_length_then_input_order():
    a, b, c = P(5, 10, 0.5), P(0, 4, 0.5), P(0, 8, 0.5)
    assert rank_order([a, b, c]) == [2, 1, 0]
    d, e = P(40, 44, 0.5), P(40, 44, 0.5)
    assert rank_order([d, e]) == [0, 1]
    assert nms([d, e], 1.0)[0] is d


def test_nms_threshold_semantics():
    props = [P(0, 10, 0.9), P(0, 10, 0.8)]
    assert len(nms(props, 1.0)) == 1  # tIoU 1.0 >= 1.0 suppresses
    assert len(nms([P(0, 10, 0.9), P(5, 15, 0.8)], 1 / 3)) == 1
    assert len(nms([P(0, 10, 0.9), P(5, 15, 0.8)], 0.34)) == 2


def test_nms_errors_and_empty():
    assert nms([], 0.5) == []
    with pytest.raises(ValueError, match="single video"):
        nms([P(0, 2, 0.1, "a"), P(0, 2, 0.1, "b")], 0.5)
    with pytest.raises(ValueError):
        nms([P(0, 2, 0.1)], 1.5)


proposal_lists = st.lists(
    st.tuples(st.integers(0, 50), st.integers(1, 20), st.sampled_from([0.1, 0.2, 0.5, 0.7, 0.9, 1.0])),
    max_size=30,
)


@given(proposal_lists, st.floats(0, 1))
def test_nms_matches_quadratic_oracle(raw, thr):
    items = [(s, s + n, sc) for s, n, sc in raw]
    props = [P(*it) for it in items]
    out = nms(props, thr)
    assert [id(p) for p in out] == [id(props[i]) for i in nms_ref(items, thr)]


@given(proposal_lists, st.floats(0, 1))
def test_nms_properties(raw, thr):
    props = [P(s, s + n, sc) for s, n, sc in raw]
    out = nms(props, thr)
    scores = [p.score for p in out]
    assert scores == sorted(scores, reverse=True)
    for i, p in enumerate(out):
        for q in out[i + 1:]:
            assert tiou(p.interval, q.interval) < thr
    assert nms(out, thr) == out
    if props:
        assert out[0].score == max(p.score for p in props)


def test_best_matches():
    gts = [GroundTruthSegment("v", Interval(0, 10)), GroundTruthSegment("v", Interval(20, 30))]
    props = [P(0, 10, 0.3), P(25, 35, 0.2)]
    m = best_matches(props, gts)
    assert m.gt_best.tolist() == [1.0, pytest.approx(5 / 15)]
    assert m.proposal_argmax.tolist() == [0, 1]
    empty = best_matches([], gts)
    assert empty.gt_best.tolist() == [0.0, 0.0]
    none = best_matches(props, [])
    assert none.proposal_argmax.tolist() == [-1, -1]


def test_group_by_video_preserves_order():
    items = [P(0, 1, 0.1, "b"), P(0, 2, 0.1, "a"), P(0, 3, 0.1, "b")]
    g = group_by_video(items)
    assert [p.interval.end for p in g["b"]] == [1, 3]
