"""Proposal recall metrics: recall@(tIoU, AN), AR-AN curves, AUC and recall-vs-tIoU."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import GroundTruthSegment, Proposal, intervals_array, tiou_matrix

PER_VIDEO = "per-video"
GLOBAL = "global"


def tiou_grid(start: float = 0.5, stop: float = 0.95, step: float = 0.05) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


THUMOS_GRID = tiou_grid(0.5, 1.0)
ACTIVITYNET_GRID = tiou_grid(0.5, 0.95)


def _by_score(props: Sequence[Proposal]) -> list[Proposal]:
    # stable: ties keep input order
    return sorted(props, key=lambda p: -p.score)


def _best_at_budget(
    proposals: Mapping[str, Sequence[Proposal]],
    gts: Mapping[str, Sequence[GroundTruthSegment]],
    an_values: Sequence[int],
    mode: str = PER_VIDEO,
) -> np.ndarray:
    """Best tIoU of each gt among the retrieved proposals, shape (n_an, n_gts_total)."""
    vids = sorted(v for v in gts if gts[v])
    n_gt = sum(len(gts[v]) for v in vids)
    if n_gt == 0:
        raise ValueError("recall undefined: no ground-truth segments")
    an_values = np.asarray(an_values, dtype=np.float64)
    out = np.zeros((len(an_values), n_gt))
    col = 0
    if mode == PER_VIDEO:
        for v in vids:
            g = gts[v]
            props = _by_score(proposals.get(v, []))
            if props:
                table = tiou_matrix(intervals_array(props), intervals_array(g))
                prefix = np.maximum.accumulate(table, axis=0)  # (P, G): best among top-(i+1)
                k = np.minimum(np.floor(an_values).astype(np.int64), len(props))
                has = k > 0
                out[has, col:col + len(g)] = prefix[k[has] - 1]
            col += len(g)
    elif mode == GLOBAL:
        pooled = [p for v in sorted(proposals) for p in proposals[v]]
        ranked = _by_score(pooled)
        rank = {id(p): r for r, p in enumerate(ranked)}
        n_videos = len(set(proposals) | set(gts))
        for v in vids:
            g = gts[v]
            props = proposals.get(v, [])
            if props:
                ranks = np.array([rank[id(p)] for p in props])
                table = tiou_matrix(intervals_array(props), intervals_array(g))
                for a, an in enumerate(an_values):
                    taken = ranks < np.floor(an * n_videos)
                    if taken.any():
                        out[a, col:col + len(g)] = table[taken].max(axis=0)
            col += len(g)
    else:
        raise ValueError(f"unknown AN mode {mode!r}")
    return out


def recall_at(proposals, gts, tiou_thresh: float, an: float, mode: str = PER_VIDEO) -> float:
    """Fraction of gts whose best proposal among each video's top-AN has tIoU >= tiou_thresh."""
    best = _best_at_budget(proposals, gts, [an], mode)[0]
    return float(np.mean(best >= tiou_thresh))


@dataclass
class ArAnCurve:
    an_values: list[int]
    tiou_grid: list[float]
    recall: np.ndarray  # (len(tiou_grid), len(an_values))
    ar: np.ndarray      # (len(an_values),)
    auc: float          # percent

    def ar_at(self, an: int) -> float:
        return float(self.ar[self.an_values.index(an)])


def recall_matrix(proposals, gts, grid: Sequence[float], an_values: Sequence[int], mode: str = PER_VIDEO) -> np.ndarray:
    best = _best_at_budget(proposals, gts, an_values, mode)
    thr = np.asarray(grid, dtype=np.float64)
    return (best[None, :, :] >= thr[:, None, None]).mean(axis=2)


def average_recall(proposals, gts, an: float, grid: Sequence[float] = ACTIVITYNET_GRID, mode: str = PER_VIDEO) -> float:
    return float(recall_matrix(proposals, gts, grid, [an], mode)[:, 0].mean())


def ar_an_curve(proposals, gts, grid: Sequence[float] = ACTIVITYNET_GRID, an_max: int = 100, mode: str = PER_VIDEO) -> ArAnCurve:
    an_values = list(range(1, an_max + 1))
    rec = recall_matrix(proposals, gts, grid, an_values, mode)
    ar = rec.mean(axis=0)
    return ArAnCurve(an_values, list(grid), rec, ar, float(ar.mean() * 100.0))


def recall_vs_tiou(proposals, gts, an: float = 100, grid: Sequence[float] = THUMOS_GRID, mode: str = PER_VIDEO) -> np.ndarray:
    return recall_matrix(proposals, gts, grid, [an], mode)[:, 0]


def write_metrics(curve: ArAnCurve, out_dir, extra_an: Sequence[tuple[int, float]] = ()) -> dict[str, Path]:
    """Long-format recall CSV, AR-AN CSV, one-line AUC CSV and a metric/value summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "recall": out_dir / "recall.csv",
        "ar_an": out_dir / "ar_an.csv",
        "auc": out_dir / "auc.csv",
        "summary": out_dir / "summary.csv",
    }
    with open(paths["recall"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tiou", "an", "recall"])
        for i, t in enumerate(curve.tiou_grid):
            for j, an in enumerate(curve.an_values):
                w.writerow([repr(t), an, repr(float(curve.recall[i, j]))])
    with open(paths["ar_an"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["an", "ar"])
        for an, ar in zip(curve.an_values, curve.ar):
            w.writerow([an, repr(float(ar))])
    paths["auc"].write_text(f"auc\n{curve.auc!r}\n")
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["auc", repr(curve.auc)])
        for an in (10, 50, 100):
            if an in curve.an_values:
                w.writerow([f"ar@{an}", repr(curve.ar_at(an))])
        for an, value in extra_an:
            w.writerow([f"ar@{an}", repr(float(value))])
    return paths
