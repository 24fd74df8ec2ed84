"""Interval geometry, temporal IoU, interval NMS and proposal/ground-truth matching.

Everything is expressed in integer unit indices with half-open intervals
``[start, end)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class Source(str, enum.Enum):
    ACTIONNESS = "actionness"
    SLIDING_WINDOW = "window"


@dataclass(frozen=True, order=True)
class Interval:
    start: int
    end: int

    def __post_init__(self):
        if not isinstance(self.start, (int, np.integer)) or not isinstance(self.end, (int, np.integer)):
            raise TypeError(f"interval bounds must be integers, got ({self.start!r}, {self.end!r})")
        if self.start < 0:
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if self.end <= self.start:
            raise ValueError(f"interval end must be > start, got [{self.start}, {self.end})")
        # normalise numpy integers so hashing/equality is plain-int based
        object.__setattr__(self, "start", int(self.start))
        object.__setattr__(self, "end", int(self.end))

    def length(self) -> int:
        return self.end - self.start

    def __repr__(self) -> str:
        return f"[{self.start},{self.end})"


@dataclass(frozen=True)
class Proposal:
    video_id: str
    interval: Interval
    score: float = 0.0
    source: Source = Source.ACTIONNESS
    pate_score: Optional[float] = None
    adjusted: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score must be in [0, 1], got {self.score}")
        if self.pate_score is not None:
            if self.source is not Source.SLIDING_WINDOW:
                raise ValueError("pate_score is only defined for sliding-window proposals")
            if not 0.0 <= self.pate_score <= 1.0:
                raise ValueError(f"pate_score must be in [0, 1], got {self.pate_score}")

    def with_(self, **changes) -> "Proposal":
        return replace(self, **changes)


@dataclass(frozen=True)
class GroundTruthSegment:
    video_id: str
    interval: Interval
    label: Optional[str] = None


def tiou(a: Interval, b: Interval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = a.length() + b.length() - inter
    return inter / union


def tiou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise tIoU between two ``(n, 2)`` arrays of ``[start, end)`` rows."""
    a = np.asarray(a, dtype=np.int64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.int64).reshape(-1, 2)
    inter = np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0])
    inter = np.clip(inter, 0, None)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    return inter / union


def intervals_array(items: Sequence) -> np.ndarray:
    """Stack the intervals of proposals, gts or bare Intervals into an ``(n, 2)`` array."""
    rows = []
    for it in items:
        iv = it if isinstance(it, Interval) else it.interval
        rows.append((iv.start, iv.end))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _single_video(items: Sequence, what: str) -> Optional[str]:
    vids = {it.video_id for it in items}
    if len(vids) > 1:
        raise ValueError(f"{what} requires single video, got {sorted(vids)}")
    return next(iter(vids)) if vids else None


def rank_order(proposals: Sequence[Proposal]) -> list[int]:
    """Indices sorted by descending score, then earlier start, longer length, input order."""
    return sorted(
        range(len(proposals)),
        key=lambda i: (
            -proposals[i].score,
            proposals[i].interval.start,
            -proposals[i].interval.length(),
            i,
        ),
    )


def nms(proposals: Sequence[Proposal], threshold: float) -> list[Proposal]:
    """Greedy interval NMS; a proposal is dropped when tIoU >= threshold with a kept one."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"nms threshold must be in [0, 1], got {threshold}")
    if not proposals:
        return []
    try:
        _single_video(proposals, "nms")
    except ValueError:
        raise ValueError("nms requires single video") from None

    order = rank_order(proposals)
    iv = intervals_array(proposals)[order]
    ious = tiou_matrix(iv, iv)
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for pos in range(len(order)):
        if not alive[pos]:
            continue
        keep.append(order[pos])
        alive[pos + 1:] &= ious[pos, pos + 1:] < threshold
    return [proposals[i] for i in keep]


@dataclass
class MatchResult:
    gt_best: np.ndarray           # per-gt max tIoU over proposals
    proposal_best: np.ndarray     # per-proposal max tIoU over gts
    proposal_argmax: np.ndarray   # index of that gt, -1 if there are no gts
    table: np.ndarray = field(repr=False)  # full (n_proposals, n_gts) tIoU table


def best_matches(proposals: Sequence, gts: Sequence[GroundTruthSegment]) -> MatchResult:
    """Best tIoU for every gt and every proposal, from the full pairwise table."""
    _single_video(list(proposals) + list(gts), "best_matches")
    table = tiou_matrix(intervals_array(proposals), intervals_array(gts))
    n_p, n_g = table.shape
    gt_best = table.max(axis=0) if n_p else np.zeros(n_g)
    if n_g:
        proposal_best = table.max(axis=1)
        proposal_argmax = table.argmax(axis=1)
    else:
        proposal_best = np.zeros(n_p)
        proposal_argmax = np.full(n_p, -1, dtype=np.int64)
    return MatchResult(gt_best, proposal_best, proposal_argmax, table)


def group_by_video(items: Sequence) -> dict[str, list]:
    out: dict[str, list] = {}
    for it in items:
        out.setdefault(it.video_id, []).append(it)
    return out
