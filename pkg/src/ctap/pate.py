"""Proposal-level actionness trustworthiness estimator (PATE) and the complementary filter."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .actionness import ActionnessModel, score_units
from .core import GroundTruthSegment, Interval, Proposal, Source, best_matches
from .data_io import Dataset, FeatureSequence
from .initial_proposals import TagConfig, tag_proposals
from .nn import Adam, Dense2, Model, TrainConfig, bce_loss, minibatches

log = logging.getLogger(__name__)


class PateModel(Model):
    kind = "pate"

    @classmethod
    def init(cls, d_f: int, d_m: int = 1024, seed: int = 0, theta_a: float = 0.1, theta_c: float = 0.5) -> "PateModel":
        for name, v in (("theta_a", theta_a), ("theta_c", theta_c)):
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        params = {}
        Dense2.init(params, "", np.random.default_rng(seed), d_f, d_m, 1)
        return cls(params, {"d_f": d_f, "d_m": d_m, "theta_a": theta_a, "theta_c": theta_c})

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, Dense2]:
        net = Dense2(self.params, "")
        return net.forward(X, "sigmoid")[:, 0], net


def mean_pool_feature(seq: FeatureSequence, interval: Interval) -> np.ndarray:
    if interval.end > seq.n_units:
        raise ValueError(f"interval {interval} exceeds {seq.video_id} ({seq.n_units} units)")
    return seq.data[interval.start:interval.end].astype(np.float64).mean(axis=0)


def pate_scores(model: PateModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.hyper["d_f"]:
        raise ValueError(f"feature dim {X.shape[1]} does not match PATE input dim {model.hyper['d_f']}")
    return model.forward(X)[0]


def pate_score(model: PateModel, feature: np.ndarray) -> float:
    return float(pate_scores(model, feature)[0])


def build_pate_labels(
    gts: Sequence[GroundTruthSegment], actionness_proposals: Sequence[Proposal], theta_c: float = 0.5
) -> list[tuple[GroundTruthSegment, int]]:
    """A gt is positive iff some actionness proposal overlaps it with tIoU > theta_c."""
    if not gts:
        return []
    best = best_matches(actionness_proposals, gts).gt_best
    return [(g, int(b > theta_c)) for g, b in zip(gts, best)]


def pate_loss(model: PateModel, X: np.ndarray, y: np.ndarray):
    s, net = model.forward(X)
    loss, gs = bce_loss(s, y)
    grads, _ = net.backward(gs[:, None])
    return loss, grads, net.kink_args


@dataclass
class PateTrainInfo:
    loss_trace: list[float] = field(default_factory=list)
    n_positive: int = 0
    n_negative: int = 0
    warnings: list[str] = field(default_factory=list)


def pate_training_set(
    dataset: Dataset, actionness_proposals: dict[str, list[Proposal]], theta_c: float
) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    by_video = dataset.gts_by_video()
    for vid in sorted(dataset.features):
        seq = dataset.features[vid]
        for g, y in build_pate_labels(by_video.get(vid, []), actionness_proposals.get(vid, []), theta_c):
            xs.append(mean_pool_feature(seq, g.interval))
            ys.append(y)
    if not xs:
        raise ValueError("PATE training needs at least one ground-truth segment")
    return np.array(xs), np.array(ys, dtype=np.float64)


def run_tag(dataset: Dataset, actionness_model: ActionnessModel, tag_cfg: TagConfig) -> dict[str, list[Proposal]]:
    out = {}
    for vid in sorted(dataset.features):
        seq = dataset.features[vid]
        out[vid] = tag_proposals(score_units(actionness_model, seq), tag_cfg, seq.n_units, vid)
    return out


def crossfit_tag(
    dataset: Dataset,
    folds: int,
    fit_actionness: Callable[[Dataset, int], ActionnessModel],
    tag_cfg: TagConfig,
) -> dict[str, list[Proposal]]:
    """TAG proposals for every training video from an actionness model that never saw it.

    Videos are dealt to folds round-robin in sorted order; ``fit_actionness(subset, fold)``
    trains the model used for fold ``fold``.
    """
    if folds < 2:
        raise ValueError("cross-fitting needs at least 2 folds")
    vids = sorted(dataset.features)
    if len(vids) < folds:
        raise ValueError(f"{folds} folds need at least {folds} videos, got {len(vids)}")
    out: dict[str, list[Proposal]] = {}
    for fold in range(folds):
        held = set(vids[fold::folds])
        rest = Dataset(
            {v: dataset.features[v] for v in vids if v not in held},
            [g for g in dataset.gts if g.video_id not in held],
        )
        model = fit_actionness(rest, fold)
        out.update(run_tag(Dataset({v: dataset.features[v] for v in held}, []), model, tag_cfg))
    return {v: out[v] for v in vids}


def train_pate(
    dataset: Dataset,
    actionness_model: Optional[ActionnessModel] = None,
    tag_cfg: Optional[TagConfig] = None,
    actionness_proposals: Optional[dict[str, list[Proposal]]] = None,
    d_m: int = 1024,
    theta_a: float = 0.1,
    theta_c: float = 0.5,
    train: Optional[TrainConfig] = None,
) -> tuple[PateModel, PateTrainInfo]:
    """Label gts by whether TAG recovers them, then fit on their mean-pooled features.

    Pass either an actionness model (TAG is run here) or precomputed TAG proposals.
    """
    train = train or TrainConfig()
    if actionness_proposals is None:
        if actionness_model is None:
            raise ValueError("train_pate needs an actionness model or precomputed actionness proposals")
        actionness_proposals = run_tag(dataset, actionness_model, tag_cfg or TagConfig())
    X, y = pate_training_set(dataset, actionness_proposals, theta_c)
    info = PateTrainInfo(n_positive=int(y.sum()), n_negative=int(len(y) - y.sum()))
    if info.n_positive == 0 or info.n_negative == 0:
        msg = f"PATE labels are single-class ({info.n_positive} positive, {info.n_negative} negative)"
        log.warning(msg)
        info.warnings.append(msg)

    rng = np.random.default_rng(train.seed)
    model = PateModel.init(X.shape[1], d_m, int(rng.integers(2**63)), theta_a, theta_c)
    opt = Adam(lr=train.lr)
    for epoch in range(train.epochs):
        losses = []
        for idx in minibatches(rng, len(X), train.batch_size):
            loss, grads, _ = pate_loss(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite PATE loss at epoch {epoch}")
            opt.step(model.params, grads)
            losses.append(loss)
        info.loss_trace.append(float(np.mean(losses)))
    return model, info


def complementary_filter(
    windows: Sequence[Proposal],
    actionness_proposals: Sequence[Proposal],
    model: PateModel,
    seq: FeatureSequence,
    theta_a: Optional[float] = None,
) -> list[Proposal]:
    """All actionness proposals plus the windows whose trust score is below theta_a.

    Kept windows carry their trust score as both ``pate_score`` and ``score``.
    """
    theta_a = model.hyper["theta_a"] if theta_a is None else theta_a
    kept = []
    if windows:
        X = np.stack([mean_pool_feature(seq, w.interval) for w in windows])
        p_t = pate_scores(model, X)
        for w, p in zip(windows, p_t):
            if p < theta_a:
                kept.append(w.with_(source=Source.SLIDING_WINDOW, pate_score=float(p), score=float(p)))
    return list(actionness_proposals) + kept
