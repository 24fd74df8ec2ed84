"""Unit-level actionness scorer: two temporal convolutions followed by a sigmoid."""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .core import GroundTruthSegment
from .data_io import Dataset, FeatureSequence
from .nn import Adam, Model, TConv2, TrainConfig, bce_loss, minibatches

log = logging.getLogger(__name__)


class ActionnessModel(Model):
    kind = "actionness"

    @classmethod
    def init(cls, d_f: int, d_m: int = 1024, k: int = 3, t_a: int = 4, seed: int = 0) -> "ActionnessModel":
        if t_a < 1:
            raise ValueError("t_a must be >= 1")
        params = {}
        TConv2.init(params, "", np.random.default_rng(seed), d_f, d_m, 1, k)
        return cls(params, {"d_f": d_f, "d_m": d_m, "k": k, "t_a": t_a})

    @property
    def net(self) -> TConv2:
        return TConv2(self.params, "")

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, TConv2]:
        """Per-unit probabilities for a (B, T, d_f) batch, plus the net holding the cache."""
        net = self.net
        return net.forward(x, "sigmoid")[..., 0], net


def score_units(model: ActionnessModel, seq: FeatureSequence) -> np.ndarray:
    if seq.d_f != model.hyper["d_f"]:
        raise ValueError(f"feature dim {seq.d_f} does not match model input dim {model.hyper['d_f']}")
    p, _ = model.forward(seq.data[None].astype(np.float64))
    return p[0]


def make_unit_labels(n_units: int, gts: Sequence[GroundTruthSegment]) -> np.ndarray:
    y = np.zeros(n_units, dtype=np.float64)
    for g in gts:
        y[g.interval.start:min(g.interval.end, n_units)] = 1.0
    return y


def _training_windows(dataset: Dataset, t_a: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    by_video = dataset.gts_by_video()
    for vid in sorted(dataset.features):
        seq = dataset.features[vid]
        n_win = seq.n_units // t_a
        if n_win == 0:
            continue
        labels = make_unit_labels(seq.n_units, by_video.get(vid, []))
        cut = n_win * t_a
        xs.append(seq.data[:cut].astype(np.float64).reshape(n_win, t_a, seq.d_f))
        ys.append(labels[:cut].reshape(n_win, t_a))
    if not xs:
        raise ValueError("actionness training needs at least one video with >= t_a units")
    return np.concatenate(xs), np.concatenate(ys)


def actionness_loss(model: ActionnessModel, x: np.ndarray, y: np.ndarray):
    """BCE over a batch of windows; returns (loss, grads, kink args)."""
    p, net = model.forward(x)
    loss, gp = bce_loss(p, y)
    grads, _ = net.backward(gp[..., None])
    return loss, grads, net.kink_args


def train_actionness(
    dataset: Dataset,
    d_m: int = 1024,
    t_a: int = 4,
    k: int = 3,
    train: Optional[TrainConfig] = None,
) -> tuple[ActionnessModel, list[float]]:
    """Fit on consecutive t_a-unit windows (last partial window dropped); returns model and per-epoch mean loss."""
    train = train or TrainConfig()
    if not dataset.features:
        raise ValueError("empty training set")
    d_f = next(iter(dataset.features.values())).d_f
    rng = np.random.default_rng(train.seed)
    model = ActionnessModel.init(d_f, d_m, k, t_a, seed=int(rng.integers(2**63)))
    X, Y = _training_windows(dataset, t_a)
    opt = Adam(lr=train.lr)
    trace = []
    for epoch in range(train.epochs):
        losses = []
        for idx in minibatches(rng, len(X), train.batch_size):
            loss, grads, _ = actionness_loss(model, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite actionness loss at epoch {epoch}")
            opt.step(model.params, grads)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.info("actionness epoch %d loss %.4f", epoch, trace[-1])
    return model, trace
