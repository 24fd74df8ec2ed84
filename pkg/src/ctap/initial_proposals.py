"""Initial proposals: watershed-style grouping of actionness scores (TAG) and sliding windows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Interval, Proposal, Source, nms

# grid points are rounded so that e.g. 3 * 0.025 compares as 0.075
_GRID_DECIMALS = 12
# absorbs float error in eta * video_len at exact integer spans
_SPAN_EPS = 1e-9


@dataclass
class TagConfig:
    tau_init: float = 0.085
    tau_step: float = 0.085
    tau_max: float = 1.0
    eta_min: float = 0.025
    eta_max: float = 1.0
    eta_step: float = 0.025
    nms_threshold: float = 0.95

    def __post_init__(self):
        if not 0 < self.tau_init <= self.tau_max <= 1:
            raise ValueError("need 0 < tau_init <= tau_max <= 1")
        if not 0 < self.eta_min <= self.eta_max <= 1:
            raise ValueError("need 0 < eta_min <= eta_max <= 1")
        if self.tau_step <= 0 or self.eta_step <= 0:
            raise ValueError("grid steps must be positive")

    def taus(self) -> list[float]:
        """tau_init, tau_init + step, ... strictly below tau_max."""
        out, i = [], 0
        while True:
            t = round(self.tau_init + i * self.tau_step, _GRID_DECIMALS)
            if t >= self.tau_max:
                return out
            out.append(t)
            i += 1

    def etas(self) -> list[float]:
        """eta_min, eta_min + step, ... up to and including eta_max."""
        out, i = [], 0
        while True:
            e = round(self.eta_min + i * self.eta_step, _GRID_DECIMALS)
            if e > self.eta_max:
                return out
            out.append(e)
            i += 1


@dataclass
class WindowConfig:
    lengths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    overlap_tiou: float = 0.75

    def __post_init__(self):
        if not self.lengths or any(L <= 0 for L in self.lengths):
            raise ValueError("window lengths must be positive")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ValueError("window lengths must be strictly increasing")
        if not 0 <= self.overlap_tiou < 1:
            raise ValueError("overlap_tiou must be in [0, 1)")


def threshold_regions(scores, tau: float) -> list[Interval]:
    """Maximal runs of units with score > tau."""
    above = np.asarray(scores) > tau
    if not above.any():
        return []
    edges = np.diff(np.concatenate(([0], above.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [Interval(int(s), int(e)) for s, e in zip(starts, ends)]


def group_regions(raw: list[Interval], eta: float, video_len: int) -> list[Interval]:
    """Greedy left-to-right merge of neighbouring regions while the span stays <= eta * video_len."""
    limit = eta * video_len + _SPAN_EPS
    out = []
    i = 0
    while i < len(raw):
        start, end = raw[i].start, raw[i].end
        j = i + 1
        while j < len(raw) and raw[j].end - start <= limit:
            end = raw[j].end
            j += 1
        out.append(Interval(start, end))
        i = j
    return out


def mean_score(scores: np.ndarray, iv: Interval) -> float:
    return min(1.0, max(0.0, float(np.mean(scores[iv.start:iv.end]))))


def tag_candidates(scores, cfg: TagConfig, video_len: int = None) -> dict[Interval, float]:
    """Distinct grouped candidates over the full (tau, eta) grid, in first-seen order."""
    scores = np.asarray(scores, dtype=np.float64)
    video_len = len(scores) if video_len is None else video_len
    found: dict[Interval, float] = {}
    etas = cfg.etas()
    for tau in cfg.taus():
        raw = threshold_regions(scores, tau)
        if not raw:
            continue
        for eta in etas:
            for iv in group_regions(raw, eta, video_len):
                if iv not in found:
                    found[iv] = mean_score(scores, iv)
    return found


def tag_proposals(scores, cfg: TagConfig = None, video_len: int = None, video_id: str = "") -> list[Proposal]:
    cfg = cfg or TagConfig()
    found = tag_candidates(scores, cfg, video_len)
    cands = [Proposal(video_id, iv, s, Source.ACTIONNESS) for iv, s in found.items()]
    return nms(cands, cfg.nms_threshold)


def window_stride(length: int, overlap_tiou: float) -> int:
    """Stride giving consecutive same-length windows a tIoU of ``overlap_tiou``, floored, at least 1."""
    return max(1, int(math.floor(length * (1 - overlap_tiou) / (1 + overlap_tiou) + _SPAN_EPS)))


def sliding_window_intervals(n_units: int, cfg: WindowConfig = None) -> list[Interval]:
    cfg = cfg or WindowConfig()
    if n_units < 1:
        raise ValueError("n_units must be >= 1")
    out: list[Interval] = []
    seen = set()

    def emit(iv):
        if iv not in seen:
            seen.add(iv)
            out.append(iv)

    for L in cfg.lengths:
        if L >= n_units:
            emit(Interval(0, n_units))
            continue
        s = window_stride(L, cfg.overlap_tiou)
        start = last_end = 0
        while start + L <= n_units:
            emit(Interval(start, start + L))
            last_end = start + L
            start += s
        if last_end < n_units:
            emit(Interval(n_units - L, n_units))
    return out


def sliding_windows(n_units: int, cfg: WindowConfig = None, video_id: str = "") -> list[Proposal]:
    return [Proposal(video_id, iv, 0.0, Source.SLIDING_WINDOW) for iv in sliding_window_intervals(n_units, cfg)]
