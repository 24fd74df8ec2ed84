import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctap.core import GroundTruthSegment, Interval, Proposal, Source
from ctap.data_io import Dataset, FeatureSequence, SynthConfig, generate_synthetic_dataset
from ctap.initial_proposals import sliding_windows
from ctap.nn import TrainConfig, check_gradients
from ctap.pate import (
    PateModel,
    build_pate_labels,
    complementary_filter,
    crossfit_tag,
    mean_pool_feature,
    pate_loss,
    pate_score,
    pate_scores,
    train_pate,
)


def gt(s, e):
    return GroundTruthSegment("v", Interval(s, e))


def act(s, e, score=0.5):
    return Proposal("v", Interval(s, e), score, Source.ACTIONNESS)


def test_mean_pool():
    seq = FeatureSequence("v", np.array([[1, 1], [3, 3], [7, 0]], np.float32))
    assert mean_pool_feature(seq, Interval(0, 2)).tolist() == [2.0, 2.0]
    assert mean_pool_feature(seq, Interval(2, 3)).tolist() == [7.0, 0.0]
    const = FeatureSequence("c", np.full((5, 3), 0.25, np.float32))
    assert mean_pool_feature(const, Interval(1, 5)).tolist() == [0.25] * 3
    with pytest.raises(ValueError):
        mean_pool_feature(seq, Interval(1, 4))


def test_pate_score_examples():
    assert pate_score(PateModel.init(3, 4).zero_(), np.ones(3)) == 0.5
    m = PateModel({"dense1.W": np.array([[1.0], [0.0]]), "dense1.b": np.zeros(1), "dense2.W": np.array([[1.0]]), "dense2.b": np.zeros(1)}, {"d_f": 2, "d_m": 1, "theta_a": 0.1, "theta_c": 0.5})
    assert pate_score(m, np.array([math.log(3), 5.0])) == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(ValueError):
        pate_score(m, np.ones(3))


def test_batch_equals_single(rng):
    m = PateModel.init(4, 6, seed=2)
    X = rng.normal(size=(9, 4))
    batch = pate_scores(m, X)
    single = [pate_score(m, x) for x in X]
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-15)
    perm = rng.permutation(9)
    np.testing.assert_allclose(pate_scores(m, X[perm]), batch[perm], rtol=0, atol=1e-15)


def test_thresholds_validated():
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            PateModel.init(2, 2, theta_a=bad)


def test_labels():
    assert build_pate_labels([gt(0, 10)], [act(0, 10)])[0][1] == 1
    assert [y for _, y in build_pate_labels([gt(0, 10), gt(20, 30)], [])] == [0, 0]
    assert build_pate_labels([gt(0, 10)], [act(5, 15)], 0.5)[0][1] == 0
    assert build_pate_labels([], [act(0, 3)]) == []


@pytest.mark.parametrize("seed", range(5))
def test_pate_gradcheck(seed):
    rng = np.random.default_rng(seed)
    d_f, d_m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    m = PateModel.init(d_f, d_m, seed=seed)
    for p in m.params.values():
        p += rng.normal(0, 0.3, p.shape)
    X = rng.normal(size=(6, d_f))
    y = (rng.random(6) > 0.5).astype(float)
    assert check_gradients(lambda _: pate_loss(m, X, y), m.params).max_rel_error < 1e-4


def _windows_and_seq(rng):
    seq = FeatureSequence("v", rng.normal(size=(60, 3)).astype(np.float32))
    return sliding_windows(60, None, "v"), seq


def test_filter_extremes(rng):
    wins, seq = _windows_and_seq(rng)
    m = PateModel.init(3, 4, seed=1)
    acts = [act(0, 5), act(10, 20)]
    assert complementary_filter(wins, acts, m, seq, theta_a=0.0) == acts
    out = complementary_filter(wins, acts, m, seq, theta_a=1.0)
    assert out[:2] == acts and len(out) == len(acts) + len(wins)
    for w in out[2:]:
        assert w.source is Source.SLIDING_WINDOW and w.score == w.pate_score


@given(st.floats(0, 1), st.floats(0, 1))
def test_filter_monotone_and_inclusive(t1, t2):
    rng = np.random.default_rng(0)
    wins, seq = _windows_and_seq(rng)
    m = PateModel.init(3, 4, seed=5)
    acts = [act(3, 9)]
    lo, hi = sorted((t1, t2))
    a = complementary_filter(wins, acts, m, seq, lo)
    b = complementary_filter(wins, acts, m, seq, hi)
    assert a[0] is acts[0] and b[0] is acts[0]
    assert {w.interval for w in a[1:]} <= {w.interval for w in b[1:]}


def _failure_data(seed=0):
    cfg = SynthConfig(n_videos=24, units_range=(100, 140), segments_range=(1, 2), segment_length_range=(12, 30), d_f=6, failure_fraction=0.4, seed=seed)
    return generate_synthetic_dataset(cfg)


def test_train_pate_separates_failures_with_oracle_labels():
    # labels from a perfect-except-failures grouping: every non-failure gt is recovered exactly
    syn = _failure_data()
    ds = syn.dataset
    props = {v: [] for v in ds.features}
    for g in ds.gts:
        if not syn.is_failure(g):
            props[g.video_id].append(Proposal(g.video_id, g.interval, 0.9, Source.ACTIONNESS))
    vids = sorted(ds.features)
    train = Dataset({v: ds.features[v] for v in vids[:16]}, [g for g in ds.gts if g.video_id in vids[:16]])
    model, info = train_pate(train, actionness_proposals=props, d_m=8, train=TrainConfig(batch_size=8, epochs=60, seed=1))
    assert info.n_negative > 0 and info.n_positive > 0
    held = [g for g in ds.gts if g.video_id in vids[16:]]
    s = np.array([pate_score(model, mean_pool_feature(ds.features[g.video_id], g.interval)) for g in held])
    fail = np.array([syn.is_failure(g) for g in held])
    auc = np.mean([[a > b for b in s[fail]] for a in s[~fail]])
    assert auc >= 0.9


def test_single_class_warning():
    syn = _failure_data()
    props = {v: [Proposal(v, g.interval, 0.5, Source.ACTIONNESS) for g in syn.dataset.gts if g.video_id == v] for v in syn.dataset.features}
    _, info = train_pate(syn.dataset, actionness_proposals=props, d_m=2, train=TrainConfig(epochs=1))
    assert info.n_negative == 0 and info.warnings


def test_train_pate_deterministic(tmp_path):
    syn = _failure_data(3)
    props = {v: [] for v in syn.dataset.features}
    a, _ = train_pate(syn.dataset, actionness_proposals=props, d_m=4, train=TrainConfig(epochs=2, seed=4))
    b, _ = train_pate(syn.dataset, actionness_proposals=props, d_m=4, train=TrainConfig(epochs=2, seed=4))
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_crossfit_uses_held_out_models():
    syn = _failure_data()
    seen = []

    def fit(subset, fold):
        seen.append((fold, sorted(subset.features)))
        return "model"

    import ctap.pate as pate_mod

    calls = []
    orig = pate_mod.run_tag
    pate_mod.run_tag = lambda ds, model, cfg: calls.append(sorted(ds.features)) or {v: [] for v in ds.features}
    try:
        out = crossfit_tag(syn.dataset, 3, fit, None)
    finally:
        pate_mod.run_tag = orig
    assert sorted(out) == sorted(syn.dataset.features)
    for (fold, trained), held in zip(seen, calls):
        assert not set(trained) & set(held)
        assert sorted(set(trained) | set(held)) == sorted(syn.dataset.features)
    with pytest.raises(ValueError):
        crossfit_tag(syn.dataset, 1, fit, None)
