"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np


def tiou_ref(a, b):
    sa = set(range(a[0], a[1]))
    sb = set(range(b[0], b[1]))
    return len(sa & sb) / len(sa | sb)


def nms_ref(items, threshold):
    """items: list of (start, end, score). Returns kept input indices in output order."""
    order = sorted(range(len(items)), key=lambda i: (-items[i][2], items[i][0], -(items[i][1] - items[i][0]), i))
    kept = []
    for i in order:
        if all(tiou_ref(items[i][:2], items[k][:2]) < threshold for k in kept):
            kept.append(i)
    return kept


def recall_ref(props_by_video, gts_by_video, thr, an):
    """props: {vid: [(start, end, score)]}, gts: {vid: [(start, end)]}."""
    hit = total = 0
    for vid, gts in gts_by_video.items():
        ranked = sorted(props_by_video.get(vid, []), key=lambda p: -p[2])[: int(math.floor(an))]
        for g in gts:
            total += 1
            if any(tiou_ref(p[:2], g) >= thr for p in ranked):
                hit += 1
    return hit / total


def tag_ref(scores, taus, etas, nms_thr):
    """Brute force grouping: returns list of (start, end, score) after NMS."""
    n = len(scores)
    cands = {}
    for tau in taus:
        regions = []
        i = 0
        while i < n:
            if scores[i] > tau:
                j = i
                while j < n and scores[j] > tau:
                    j += 1
                regions.append((i, j))
                i = j
            else:
                i += 1
        if not regions:
            continue
        for eta in etas:
            k = 0
            while k < len(regions):
                s, e = regions[k]
                m = k + 1
                while m < len(regions) and regions[m][1] - s <= eta * n + 1e-9:
                    e = regions[m][1]
                    m += 1
                if (s, e) not in cands:
                    # same float reduction as production, so scores compare bit-exact
                    cands[(s, e)] = min(1.0, max(0.0, float(np.mean(np.asarray(scores[s:e], dtype=np.float64)))))
                k = m
    items = [(s, e, v) for (s, e), v in cands.items()]
    return [items[i] for i in nms_ref(items, nms_thr)]
