"""On-disk formats (features, annotations, proposals, manifests) and the synthetic dataset generator."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GroundTruthSegment, Interval, Proposal, Source

FEATURE_MAGIC = b"CTAPFEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIII")
# keeps n_units * d_f * 4 well inside what a single file should ever hold
_MAX_ELEMENTS = 1 << 31


class DecodeError(ValueError):
    """Malformed binary feature file."""


class ParseError(ValueError):
    """Malformed text record; carries the 1-based line number."""

    def __init__(self, message: str, line: int, path: Optional[str] = None):
        where = f"{path}:" if path else ""
        super().__init__(f"{where}line {line}: {message}")
        self.line = line
        self.path = path


@dataclass
class FeatureSequence:
    video_id: str
    data: np.ndarray  # (n_units, d_f) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"features of {self.video_id} contain non-finite values")

    @property
    def n_units(self) -> int:
        return self.data.shape[0]

    @property
    def d_f(self) -> int:
        return self.data.shape[1]


def write_features(seq: FeatureSequence, path) -> None:
    n, d = seq.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d))
        fh.write(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def read_features(path, video_id: Optional[str] = None) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DecodeError(f"truncated header in {path}")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DecodeError("bad magic")
    if version != FEATURE_VERSION:
        raise DecodeError(f"unsupported feature format version {version}")
    if n * d > _MAX_ELEMENTS:
        raise DecodeError(f"dimension overflow: {n} x {d}")
    expected = _HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise DecodeError(f"truncated file: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(np.float32)
    if video_id is None:
        video_id = Path(path).stem
    return FeatureSequence(video_id, data)


# ---------------------------------------------------------------------------
# Tab-separated records
# ---------------------------------------------------------------------------


def _parse_interval(start: str, end: str, lineno: int, path) -> Interval:
    try:
        s, e = int(start), int(end)
    except ValueError:
        raise ParseError(f"non-integer unit bounds ({start!r}, {end!r})", lineno, path) from None
    if s < 0 or e <= s:
        raise ParseError(f"invalid interval [{s}, {e}): need 0 <= start < end", lineno, path)
    return Interval(s, e)


def parse_annotations(lines: Iterable[str], path=None) -> list[GroundTruthSegment]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise ParseError(f"expected 3 or 4 tab-separated columns, got {len(cols)}", lineno, path)
        label = cols[3] if len(cols) == 4 and cols[3] != "" else None
        if label is not None and label.lstrip("-").isdigit():
            label = int(label)
        out.append(GroundTruthSegment(cols[0], _parse_interval(cols[1], cols[2], lineno, path), label))
    return out


def read_annotations(path) -> list[GroundTruthSegment]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh, path=str(path))


def write_annotations(gts: Sequence[GroundTruthSegment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in gts:
            row = [g.video_id, str(g.interval.start), str(g.interval.end)]
            if g.label is not None:
                row.append(str(g.label))
            fh.write("\t".join(row) + "\n")


def _fmt_float(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def write_proposals(proposals: Sequence[Proposal], path) -> None:
    """Write proposals sorted by (video_id, descending score).

    Columns: video_id, start, end, score, source, pate_score ('-' if unset), adjusted (0/1).
    """
    order = sorted(range(len(proposals)), key=lambda i: (proposals[i].video_id, -proposals[i].score, i))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in order:
            p = proposals[i]
            fh.write(
                "\t".join(
                    [
                        p.video_id,
                        str(p.interval.start),
                        str(p.interval.end),
                        _fmt_float(p.score),
                        p.source.value,
                        "-" if p.pate_score is None else _fmt_float(p.pate_score),
                        "1" if p.adjusted else "0",
                    ]
                )
                + "\n"
            )


def read_proposals(path) -> list[Proposal]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise ParseError(f"expected 7 tab-separated columns, got {len(cols)}", lineno, str(path))
            try:
                source = Source(cols[4])
                score = float(cols[3])
                pate = None if cols[5] == "-" else float(cols[5])
            except ValueError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
            if cols[6] not in ("0", "1"):
                raise ParseError(f"adjusted flag must be 0 or 1, got {cols[6]!r}", lineno, str(path))
            try:
                out.append(
                    Proposal(
                        cols[0],
                        _parse_interval(cols[1], cols[2], lineno, str(path)),
                        score,
                        source,
                        pate,
                        cols[6] == "1",
                    )
                )
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(str(exc), lineno, str(path)) from None
    return out


def write_scores(scores: dict[str, np.ndarray], path) -> None:
    """Per-unit actionness scores as ``video_id, unit, score`` rows (lossless float repr)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid in sorted(scores):
            for u, s in enumerate(scores[vid]):
                fh.write(f"{vid}\t{u}\t{_fmt_float(s)}\n")


def read_scores(path) -> dict[str, np.ndarray]:
    rows: dict[str, list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}", lineno, str(path))
            vid, u = cols[0], int(cols[1])
            seq = rows.setdefault(vid, [])
            if u != len(seq):
                raise ParseError(f"unit index {u} out of order for {vid}", lineno, str(path))
            seq.append(float(cols[2]))
    return {k: np.array(v, dtype=np.float64) for k, v in rows.items()}


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class VideoEntry:
    video_id: str
    features: str
    n_units: int


@dataclass
class DatasetManifest:
    videos: list[VideoEntry]
    annotations: str
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate video_id in manifest")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    def feature_path(self, entry: VideoEntry) -> Path:
        return self.root / entry.features

    def load_features(self) -> dict[str, FeatureSequence]:
        out = {}
        for v in self.videos:
            seq = read_features(self.feature_path(v), v.video_id)
            if seq.n_units != v.n_units:
                raise DecodeError(f"{v.video_id}: manifest says {v.n_units} units, file has {seq.n_units}")
            out[v.video_id] = seq
        return out

    def load_annotations(self) -> list[GroundTruthSegment]:
        gts = read_annotations(self.root / self.annotations)
        known = set(self.video_ids())
        for g in gts:
            if g.video_id not in known:
                raise ValueError(f"annotation references unknown video_id {g.video_id!r}")
        return gts

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "annotations": self.annotations,
            "videos": [{"video_id": v.video_id, "features": v.features, "n_units": v.n_units} for v in self.videos],
        }


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    videos = [VideoEntry(v["video_id"], v["features"], int(v["n_units"])) for v in doc["videos"]]
    return DatasetManifest(videos, doc["annotations"], doc.get("split", "train"), root=path.parent)


@dataclass
class Dataset:
    """In-memory features + annotations for one split."""

    features: dict[str, FeatureSequence]
    gts: list[GroundTruthSegment]

    def video_ids(self) -> list[str]:
        return list(self.features)

    def gts_by_video(self) -> dict[str, list[GroundTruthSegment]]:
        out: dict[str, list[GroundTruthSegment]] = {v: [] for v in self.features}
        for g in self.gts:
            out.setdefault(g.video_id, []).append(g)
        return out

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "Dataset":
        return cls(manifest.load_features(), manifest.load_annotations())


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    n_videos: int = 50
    units_range: tuple[int, int] = (200, 400)
    segments_range: tuple[int, int] = (2, 4)
    segment_length_range: tuple[int, int] = (16, 64)
    d_f: int = 16
    separation: float = 4.0
    failure_fraction: float = 0.0
    seed: int = 0
    min_gap: int = 1

    def validate(self) -> None:
        if self.n_videos < 1:
            raise ValueError("n_videos must be >= 1")
        for name in ("units_range", "segments_range", "segment_length_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.units_range[0] < 1 or self.segment_length_range[0] < 1 or self.segments_range[0] < 0:
            raise ValueError("ranges must be positive")
        if not 0.0 <= self.failure_fraction <= 1.0:
            raise ValueError(f"failure_fraction must be in [0, 1], got {self.failure_fraction}")
        if self.d_f < 1:
            raise ValueError("d_f must be >= 1")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")


@dataclass
class SyntheticDataset:
    dataset: Dataset
    failures: set[tuple[str, Interval]]
    direction: np.ndarray

    def is_failure(self, gt: GroundTruthSegment) -> bool:
        return (gt.video_id, gt.interval) in self.failures


def _pack_segments(rng: np.random.Generator, n_units: int, lengths: list[int], min_gap: int) -> list[Interval]:
    k = len(lengths)
    slack = n_units - sum(lengths) - min_gap * max(k - 1, 0)
    if slack < 0:
        return None
    gaps = rng.multinomial(slack, np.full(k + 1, 1.0 / (k + 1)))
    out, pos = [], int(gaps[0])
    for i, length in enumerate(lengths):
        out.append(Interval(pos, pos + length))
        pos += length + min_gap + int(gaps[i + 1])
    return out


def generate_synthetic_dataset(cfg: SynthConfig) -> SyntheticDataset:
    """Gaussian background/action features with annotated, non-overlapping segments.

    Units inside failure segments are drawn from the background distribution but
    stay annotated as ground truth.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    direction = rng.standard_normal(cfg.d_f)
    direction /= np.linalg.norm(direction)
    action_mean = cfg.separation * direction

    layouts = []
    for i in range(cfg.n_videos):
        n = int(rng.integers(cfg.units_range[0], cfg.units_range[1] + 1))
        k = int(rng.integers(cfg.segments_range[0], cfg.segments_range[1] + 1))
        lengths = [int(x) for x in rng.integers(cfg.segment_length_range[0], cfg.segment_length_range[1] + 1, size=k)]
        segs = _pack_segments(rng, n, lengths, cfg.min_gap)
        if segs is None:
            raise ValueError(f"infeasible segment packing for video {i}: {k} segments of total length {sum(lengths)} in {n} units")
        layouts.append((f"video_{i:04d}", n, segs))

    all_segs = [(vid, s) for vid, _, segs in layouts for s in segs]
    n_fail = int(round(cfg.failure_fraction * len(all_segs)))
    fail_idx = rng.choice(len(all_segs), size=n_fail, replace=False) if n_fail else []
    failures = {all_segs[int(j)] for j in fail_idx}

    features, gts = {}, []
    for vid, n, segs in layouts:
        data = rng.standard_normal((n, cfg.d_f))
        for s in segs:
            gts.append(GroundTruthSegment(vid, s))
            if (vid, s) not in failures:
                data[s.start:s.end] += action_mean
        features[vid] = FeatureSequence(vid, data.astype(np.float32))
    return SyntheticDataset(Dataset(features, gts), failures, direction)


def write_dataset(ds: Dataset, out_dir, split: str, video_ids: Optional[Sequence[str]] = None) -> Path:
    """Write features, annotations and a manifest for ``video_ids``; returns the manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    video_ids = list(ds.features) if video_ids is None else list(video_ids)
    keep = set(video_ids)
    entries = []
    for vid in video_ids:
        seq = ds.features[vid]
        rel = os.path.join("features", f"{vid}.feat")
        write_features(seq, out_dir / rel)
        entries.append(VideoEntry(vid, rel, seq.n_units))
    ann = f"annotations_{split}.tsv"
    write_annotations([g for g in ds.gts if g.video_id in keep], out_dir / ann)
    manifest = DatasetManifest(entries, ann, split, root=out_dir)
    path = out_dir / f"manifest_{split}.json"
    write_manifest(manifest, path)
    return path
