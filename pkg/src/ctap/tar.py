"""Temporal convolutional adjustment and ranking (TAR).

Three independent two-layer temporal-conv stacks read the units around the start
boundary, inside the proposal, and around the end boundary. The boundary stacks
regress unit offsets; the proposal stack gives an action probability.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import GroundTruthSegment, Interval, Proposal, Source, intervals_array, nms, rank_order, tiou_matrix
from .data_io import Dataset, FeatureSequence
from .initial_proposals import WindowConfig, sliding_window_intervals
from .nn import Adam, Model, TConv2, TrainConfig, bce_loss, l1_loss, sigmoid

log = logging.getLogger(__name__)

SUBNETS = ("start.", "proposal.", "end.")


class TarModel(Model):
    kind = "tar"

    @classmethod
    def init(cls, d_f: int, d_m: int = 1024, n_ctl: int = 4, n_ctx: int = 4, k: int = 3, seed: int = 0) -> "TarModel":
        if n_ctl < 1:
            raise ValueError("n_ctl must be >= 1")
        if n_ctx < 2 or n_ctx % 2:
            raise ValueError("n_ctx must be an even number >= 2")
        rng = np.random.default_rng(seed)
        params = {}
        for prefix in SUBNETS:
            TConv2.init(params, prefix, rng, d_f, d_m, 1, k)
        return cls(params, {"d_f": d_f, "d_m": d_m, "n_ctl": n_ctl, "n_ctx": n_ctx, "k": k})

    def forward(self, x_s: np.ndarray, x_c: np.ndarray, x_e: np.ndarray):
        """Batched forward on (B, T, d_f) inputs; returns (o_s, p_c, o_e) each of shape (B,) and a cache."""
        d_f = self.hyper["d_f"]
        for x in (x_s, x_c, x_e):
            if x.ndim != 3 or x.shape[2] != d_f:
                raise ValueError(f"TAR input shape {x.shape} does not match d_f={d_f}")
        nets = {p: TConv2(self.params, p) for p in SUBNETS}
        o_s = nets["start."].forward(x_s)[..., 0].mean(axis=1)
        z_c = nets["proposal."].forward(x_c)[..., 0].mean(axis=1)
        o_e = nets["end."].forward(x_e)[..., 0].mean(axis=1)
        p_c = sigmoid(z_c)
        cache = (nets, x_s.shape[1], x_c.shape[1], x_e.shape[1], p_c)
        return o_s, p_c, o_e, cache

    @staticmethod
    def backward(cache, g_os: np.ndarray, g_pc: np.ndarray, g_oe: np.ndarray):
        nets, t_s, t_c, t_e, p_c = cache
        grads = {}
        g_zc = g_pc * p_c * (1.0 - p_c)
        for prefix, g, T in (("start.", g_os, t_s), ("proposal.", g_zc, t_c), ("end.", g_oe, t_e)):
            gout = np.repeat((np.asarray(g, dtype=np.float64) / T)[:, None], T, axis=1)[..., None]
            gr, _ = nets[prefix].backward(gout)
            grads.update(gr)
        return grads

    @staticmethod
    def kink_args(cache) -> np.ndarray:
        return np.concatenate([cache[0][p].kink_args for p in SUBNETS])


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def sample_indices(n_units: int, interval: Interval, n_ctl: int, n_ctx: int):
    """Unit indices for the start context, proposal interior and end context."""
    u_s, u_e = interval.start, interval.end
    length = u_e - u_s
    i = np.arange(n_ctl)
    inner = _round_half_up(u_s + (i + 0.5) * length / n_ctl - 0.5)
    inner = np.clip(inner, u_s, u_e - 1)
    inner = np.clip(inner, 0, n_units - 1)
    half = n_ctx // 2
    ctx = np.arange(-half, half)
    start = np.clip(u_s + ctx, 0, n_units - 1)
    end = np.clip(u_e + ctx, 0, n_units - 1)
    return start, inner, end


def sample_units(seq: FeatureSequence, interval: Interval, n_ctl: int, n_ctx: int):
    """(x_s, x_c, x_e) feature blocks of shapes (n_ctx, d_f), (n_ctl, d_f), (n_ctx, d_f)."""
    s, c, e = sample_indices(seq.n_units, interval, n_ctl, n_ctx)
    data = seq.data.astype(np.float64)
    return data[s], data[c], data[e]


def _batch_inputs(seq: FeatureSequence, intervals: Sequence[Interval], n_ctl: int, n_ctx: int):
    idx = [sample_indices(seq.n_units, iv, n_ctl, n_ctx) for iv in intervals]
    data = seq.data.astype(np.float64)
    x_s = data[np.stack([i[0] for i in idx])]
    x_c = data[np.stack([i[1] for i in idx])]
    x_e = data[np.stack([i[2] for i in idx])]
    return x_s, x_c, x_e


def tar_forward(model: TarModel, x_s, x_c, x_e) -> tuple[float, float, float]:
    """Single-proposal convenience wrapper around the batched forward."""
    o_s, p_c, o_e, _ = model.forward(np.asarray(x_s, float)[None], np.asarray(x_c, float)[None], np.asarray(x_e, float)[None])
    return float(o_s[0]), float(p_c[0]), float(o_e[0])


@dataclass(frozen=True)
class TarSample:
    interval: Interval
    label: int
    offset_start: Optional[float] = None
    offset_end: Optional[float] = None
    gt_index: int = -1


def assign_training_samples(windows: Sequence, gts: Sequence[GroundTruthSegment]) -> list[TarSample]:
    """Positive if it is some gt's best window (ties: earliest start) or has tIoU > 0.5 with any gt."""
    ivs = [w if isinstance(w, Interval) else w.interval for w in windows]
    if not ivs:
        return []
    if not gts:
        return [TarSample(iv, 0) for iv in ivs]
    table = tiou_matrix(intervals_array(ivs), intervals_array(gts))
    assigned = np.full(len(ivs), -1, dtype=np.int64)
    for g in range(len(gts)):
        col = table[:, g]
        best = col.max()
        if best <= 0:
            continue
        cands = np.flatnonzero(col == best)
        w = min(cands, key=lambda j: (ivs[j].start, j))
        assigned[w] = g
    arg = table.argmax(axis=1)
    strong = table.max(axis=1) > 0.5
    assigned[strong] = arg[strong]
    out = []
    for j, iv in enumerate(ivs):
        g = assigned[j]
        if g < 0:
            out.append(TarSample(iv, 0))
        else:
            gi = gts[g].interval
            out.append(TarSample(iv, 1, float(gi.start - iv.start), float(gi.end - iv.end), int(g)))
    return out


def tar_loss(model: TarModel, x_s, x_c, x_e, labels, offsets, lambda_reg: float = 1.0):
    """Ranking BCE on p_c plus lambda_reg * L1 offset loss over positives.

    Returns (loss, grads, kink args) where kink args include ReLU pre-activations and L1 residuals.
    """
    o_s, p_c, o_e, cache = model.forward(x_s, x_c, x_e)
    l_rank, g_pc = bce_loss(p_c, labels)
    pred = np.stack([o_s, o_e], axis=1)
    mask = labels > 0.5
    l_reg, g_pred = l1_loss(pred, offsets, mask)
    grads = model.backward(cache, lambda_reg * g_pred[:, 0], g_pc, lambda_reg * g_pred[:, 1])
    residuals = (pred - offsets)[mask].ravel()
    kinks = np.concatenate([TarModel.kink_args(cache), residuals])
    return l_rank + lambda_reg * l_reg, grads, kinks


@dataclass
class TarTrainInfo:
    loss_trace: list[float] = field(default_factory=list)
    n_positive: int = 0
    n_negative: int = 0


def tar_training_set(dataset: Dataset, window_cfg: WindowConfig, n_ctl: int, n_ctx: int):
    by_video = dataset.gts_by_video()
    xs_s, xs_c, xs_e, labels, offsets = [], [], [], [], []
    for vid in sorted(dataset.features):
        seq = dataset.features[vid]
        samples = assign_training_samples(sliding_window_intervals(seq.n_units, window_cfg), by_video.get(vid, []))
        if not samples:
            continue
        x_s, x_c, x_e = _batch_inputs(seq, [s.interval for s in samples], n_ctl, n_ctx)
        xs_s.append(x_s)
        xs_c.append(x_c)
        xs_e.append(x_e)
        labels.extend(s.label for s in samples)
        offsets.extend((s.offset_start or 0.0, s.offset_end or 0.0) for s in samples)
    if not labels:
        raise ValueError("no TAR training samples")
    return (
        np.concatenate(xs_s),
        np.concatenate(xs_c),
        np.concatenate(xs_e),
        np.array(labels, dtype=np.float64),
        np.array(offsets, dtype=np.float64).reshape(-1, 2),
    )


def train_tar(
    dataset: Dataset,
    window_cfg: Optional[WindowConfig] = None,
    d_m: int = 1024,
    n_ctl: int = 4,
    n_ctx: int = 4,
    k: int = 3,
    lambda_reg: float = 1.0,
    neg_ratio: float = 1.0,
    train: Optional[TrainConfig] = None,
) -> tuple[TarModel, TarTrainInfo]:
    """Joint ranking + regression training on dense sliding windows.

    Each epoch keeps every positive and a fresh seeded draw of ``neg_ratio`` negatives per positive.
    """
    train = train or TrainConfig()
    window_cfg = window_cfg or WindowConfig()
    X_s, X_c, X_e, y, off = tar_training_set(dataset, window_cfg, n_ctl, n_ctx)
    pos = np.flatnonzero(y > 0.5)
    neg = np.flatnonzero(y <= 0.5)
    if len(pos) == 0:
        raise ValueError("TAR training needs at least one positive window")
    info = TarTrainInfo(n_positive=len(pos), n_negative=len(neg))
    rng = np.random.default_rng(train.seed)
    model = TarModel.init(X_s.shape[2], d_m, n_ctl, n_ctx, k, seed=int(rng.integers(2**63)))
    opt = Adam(lr=train.lr)
    n_neg = min(len(neg), int(round(neg_ratio * len(pos))))
    for epoch in range(train.epochs):
        chosen = np.concatenate([pos, rng.choice(neg, size=n_neg, replace=False)]) if n_neg else pos
        chosen = chosen[rng.permutation(len(chosen))]
        losses = []
        for i in range(0, len(chosen), train.batch_size):
            b = chosen[i:i + train.batch_size]
            loss, grads, _ = tar_loss(model, X_s[b], X_c[b], X_e[b], y[b], off[b], lambda_reg)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite TAR loss at epoch {epoch}")
            opt.step(model.params, grads)
            losses.append(loss)
        info.loss_trace.append(float(np.mean(losses)))
        log.info("tar epoch %d loss %.4f", epoch, info.loss_trace[-1])
    return model, info


def adjust_interval(iv: Interval, o_s: float, o_e: float, n_units: int) -> Interval:
    """Shift boundaries by rounded offsets, clamp into the video, keep length >= 1."""
    s = int(math.floor(iv.start + o_s + 0.5))
    e = int(math.floor(iv.end + o_e + 0.5))
    s = min(max(s, 0), n_units - 1)
    e = min(max(e, 0), n_units)
    if e <= s:
        e = s + 1
    return Interval(s, e)


def final_score(p: Proposal, p_c: float) -> float:
    if p.source is Source.SLIDING_WINDOW and p.pate_score is not None:
        return p.pate_score * p_c
    return p_c


def apply_tar(
    model: TarModel,
    proposals: Sequence[Proposal],
    seq: FeatureSequence,
    final_nms: Optional[float] = None,
    adjust: bool = True,
) -> list[Proposal]:
    """Score (and by default adjust) proposals; output sorted by descending final score."""
    if not proposals:
        return []
    x_s, x_c, x_e = _batch_inputs(seq, [p.interval for p in proposals], model.hyper["n_ctl"], model.hyper["n_ctx"])
    o_s, p_c, o_e, _ = model.forward(x_s, x_c, x_e)
    out = []
    for p, a, c, b in zip(proposals, o_s, p_c, o_e):
        iv = adjust_interval(p.interval, a, b, seq.n_units) if adjust else p.interval
        out.append(p.with_(interval=iv, score=float(final_score(p, float(c))), adjusted=adjust))
    out = [out[i] for i in rank_order(out)]
    if final_nms is not None:
        out = nms(out, final_nms)
    return out
