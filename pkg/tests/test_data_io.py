import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctap.core import GroundTruthSegment, Interval, Proposal, Source
from ctap.data_io import (
    DecodeError,
    FeatureSequence,
    ParseError,
    SynthConfig,
    generate_synthetic_dataset,
    parse_annotations,
    read_annotations,
    read_features,
    read_manifest,
    read_proposals,
    read_scores,
    write_annotations,
    write_dataset,
    write_features,
    write_proposals,
    write_scores,
)


def test_feature_file_layout(tmp_path):
    path = tmp_path / "x.feat"
    write_features(FeatureSequence("x", np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32)), path)
    raw = path.read_bytes()
    assert len(raw) == 44
    assert raw[:8] == b"CTAPFEAT"
    assert np.frombuffer(raw[20:], "<f4").tolist() == [1, 2, 3, 4, 5, 6]


@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_feature_round_trip_bit_exact(n, d, seed):
    data = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "v.feat"
        write_features(FeatureSequence("v", data), path)
        back = read_features(path)
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == data.tobytes()
    assert back.video_id == "v"


def test_feature_decode_errors(tmp_path):
    good = tmp_path / "g.feat"
    write_features(FeatureSequence("g", np.ones((3, 2), np.float32)), good)
    raw = good.read_bytes()
    bad = tmp_path / "b.feat"
    bad.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DecodeError, match="bad magic"):
        read_features(bad)
    bad.write_bytes(raw[:-4])
    with pytest.raises(DecodeError, match="truncated"):
        read_features(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(DecodeError, match="truncated"):
        read_features(bad)
    bad.write_bytes(raw[:12] + (2**31).to_bytes(4, "little") + (2**31).to_bytes(4, "little"))
    with pytest.raises(DecodeError, match="overflow"):
        read_features(bad)


def test_feature_sequence_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureSequence("v", np.array([[np.nan]], np.float32))


def test_parse_annotations():
    gts = parse_annotations(["# comment", "", "v1\t0\t5", "v2\t3\t9\t7"])
    assert gts == [GroundTruthSegment("v1", Interval(0, 5)), GroundTruthSegment("v2", Interval(3, 9), 7)]


@pytest.mark.parametrize("line", ["v1\t10\t3", "v1\ta\t3", "v1\t3"])
def test_parse_annotations_error_line(line):
    with pytest.raises(ParseError) as exc:
        parse_annotations([line])
    assert exc.value.line == 1


def test_annotation_round_trip(tmp_path):
    gts = [GroundTruthSegment("a", Interval(0, 4)), GroundTruthSegment("b", Interval(2, 9), 3)]
    write_annotations(gts, tmp_path / "a.tsv")
    assert read_annotations(tmp_path / "a.tsv") == gts


def test_proposal_round_trip_100(tmp_path):
    rng = np.random.default_rng(5)
    props = []
    for i in range(100):
        s = int(rng.integers(0, 100))
        iv = Interval(s, s + int(rng.integers(1, 50)))
        if i % 3:
            props.append(Proposal(f"v{i % 4}", iv, float(rng.random()), Source.ACTIONNESS, adjusted=bool(i % 2)))
        else:
            p = float(rng.random())
            props.append(Proposal(f"v{i % 4}", iv, p, Source.SLIDING_WINDOW, pate_score=p))
    write_proposals(props, tmp_path / "p.tsv")
    back = read_proposals(tmp_path / "p.tsv")
    key = lambda p: (p.video_id, p.interval, p.score, p.source.value, p.pate_score, p.adjusted)
    assert sorted(map(key, back)) == sorted(map(key, props))
    write_proposals(back, tmp_path / "q.tsv")
    assert (tmp_path / "p.tsv").read_bytes() == (tmp_path / "q.tsv").read_bytes()


def test_scores_round_trip_exact(tmp_path):
    scores = {"a": np.random.default_rng(0).random(17), "b": np.array([0.1, 1 / 3])}
    write_scores(scores, tmp_path / "s.tsv")
    back = read_scores(tmp_path / "s.tsv")
    assert set(back) == {"a", "b"}
    for k in scores:
        assert back[k].tobytes() == scores[k].tobytes()


def _small_cfg(**kw):
    base = dict(n_videos=6, units_range=(60, 90), segments_range=(1, 3), segment_length_range=(5, 15), d_f=4)
    base.update(kw)
    return SynthConfig(**base)


def test_synthetic_determinism(tmp_path):
    a = generate_synthetic_dataset(_small_cfg(seed=9, failure_fraction=0.4))
    b = generate_synthetic_dataset(_small_cfg(seed=9, failure_fraction=0.4))
    write_dataset(a.dataset, tmp_path / "a", "train")
    write_dataset(b.dataset, tmp_path / "b", "train")
    for f in sorted((tmp_path / "a").rglob("*.feat")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert a.failures == b.failures
    c = generate_synthetic_dataset(_small_cfg(seed=10, failure_fraction=0.4))
    assert any(not np.array_equal(c.dataset.features[v].data, a.dataset.features[v].data) for v in c.dataset.features)


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_synthetic_invariants(seed, ff):
    syn = generate_synthetic_dataset(_small_cfg(seed=seed, failure_fraction=ff))
    ds = syn.dataset
    by = ds.gts_by_video()
    for vid, gts in by.items():
        n = ds.features[vid].n_units
        ivs = sorted(g.interval for g in gts)
        assert all(iv.end <= n for iv in ivs)
        assert all(a.end <= b.start for a, b in zip(ivs, ivs[1:]))
    assert len(syn.failures) == round(ff * len(ds.gts))


def test_synthetic_failure_units_are_background():
    syn = generate_synthetic_dataset(_small_cfg(seed=1, failure_fraction=0.5, separation=50.0, n_videos=10))
    for g in syn.dataset.gts:
        mean = float(np.mean(syn.dataset.features[g.video_id].data[g.interval.start:g.interval.end] @ syn.direction))
        assert (mean < 10) == syn.is_failure(g)


def test_synthetic_zero_failures():
    syn = generate_synthetic_dataset(_small_cfg(seed=2))
    assert not syn.failures


def test_infeasible_packing_names_video():
    with pytest.raises(ValueError, match="video 0"):
        generate_synthetic_dataset(SynthConfig(n_videos=2, units_range=(10, 10), segments_range=(3, 3), segment_length_range=(5, 5)))


def test_manifest_round_trip(tmp_path):
    syn = generate_synthetic_dataset(_small_cfg(seed=3))
    vids = sorted(syn.dataset.features)[:3]
    path = write_dataset(syn.dataset, tmp_path, "train", vids)
    m = read_manifest(path)
    assert m.video_ids() == vids
    feats = m.load_features()
    assert all(np.array_equal(feats[v].data, syn.dataset.features[v].data) for v in vids)
    assert m.load_annotations() == [g for g in syn.dataset.gts if g.video_id in vids]
