"""File-to-file pipeline stages.

Every stage reads and writes the on-disk formats of :mod:`ctap.data_io` so that
``run_pipeline`` and a manual sequence of CLI subcommands produce the same bytes.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Optional

from .actionness import ActionnessModel, score_units, train_actionness
from .config import RunConfig, save_config
from .core import Proposal, group_by_video, intervals_array, nms, tiou_matrix
from .data_io import (
    Dataset,
    FeatureSequence,
    generate_synthetic_dataset,
    read_annotations,
    read_manifest,
    read_proposals,
    read_scores,
    write_annotations,
    write_dataset,
    write_proposals,
    write_scores,
)
from .evaluation import ar_an_curve, average_recall, write_metrics
from .initial_proposals import sliding_windows, tag_proposals
from .pate import PateModel, complementary_filter, crossfit_tag, train_pate
from .tar import TarModel, apply_tar, train_tar

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class MissingModelError(StageError):
    def __init__(self, stage: str, model: str):
        super().__init__(stage, f"missing model: {model}")
        self.model = model


def _require_model(stage: str, name: str, path) -> Path:
    if path is None or not Path(path).is_file():
        raise MissingModelError(stage, name)
    return Path(path)


def _load_dataset(manifest_path) -> Dataset:
    return Dataset.from_manifest(read_manifest(manifest_path))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def gen_synth(cfg: RunConfig, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    synth = generate_synthetic_dataset(cfg.synth.to_synth(cfg.subseed("gen-synth")))
    vids = sorted(synth.dataset.features)
    n_train = cfg.synth.n_train
    paths = {
        "train": write_dataset(synth.dataset, out_dir, "train", vids[:n_train]),
        "test": write_dataset(synth.dataset, out_dir, "test", vids[n_train:]),
    }
    failures = [g for g in synth.dataset.gts if synth.is_failure(g)]
    write_annotations(failures, out_dir / "failures.tsv")
    paths["failures"] = out_dir / "failures.tsv"
    return paths


def train_actionness_stage(cfg: RunConfig, manifest, out) -> Path:
    ds = _load_dataset(manifest)
    a = cfg.actionness
    model, trace = train_actionness(ds, a.d_m, a.t_a, a.k, a.train.to_train(cfg.subseed("train-actionness")))
    model.save(out)
    log.info("actionness final loss %.4f", trace[-1] if trace else float("nan"))
    return Path(out)


def score_actionness_stage(cfg: RunConfig, manifest, model_path, out) -> Path:
    model = ActionnessModel.load(_require_model("score-actionness", "actionness", model_path))
    ds = _load_dataset(manifest)
    write_scores({vid: score_units(model, seq) for vid, seq in ds.features.items()}, out)
    return Path(out)


def tag_group_stage(cfg: RunConfig, scores_path, out) -> Path:
    scores = read_scores(scores_path)
    tag_cfg = cfg.tag.to_tag()
    props = []
    for vid in sorted(scores):
        props.extend(tag_proposals(scores[vid], tag_cfg, len(scores[vid]), vid))
    write_proposals(props, out)
    return Path(out)


def gen_windows_stage(cfg: RunConfig, manifest, out) -> Path:
    m = read_manifest(manifest)
    win_cfg = cfg.windows.to_windows()
    props = []
    for v in m.videos:
        props.extend(sliding_windows(v.n_units, win_cfg, v.video_id))
    write_proposals(props, out)
    return Path(out)


def train_pate_stage(cfg: RunConfig, manifest, actionness_path, out) -> Path:
    act = ActionnessModel.load(_require_model("train-pate", "actionness", actionness_path))
    ds = _load_dataset(manifest)
    p = cfg.pate
    tag_props = None
    if p.label_folds > 1:
        a = cfg.actionness

        def fit(subset, fold):
            seed = cfg.subseed(f"train-pate/fold-{fold}")
            return train_actionness(subset, a.d_m, a.t_a, a.k, a.train.to_train(seed))[0]

        tag_props = crossfit_tag(ds, p.label_folds, fit, cfg.tag.to_tag())
    model, info = train_pate(
        ds,
        act,
        cfg.tag.to_tag(),
        actionness_proposals=tag_props,
        d_m=p.d_m,
        theta_a=p.theta_a,
        theta_c=p.theta_c,
        train=p.train.to_train(cfg.subseed("train-pate")),
    )
    model.save(out)
    log.info("pate labels: %d positive, %d negative", info.n_positive, info.n_negative)
    return Path(out)


def train_tar_stage(cfg: RunConfig, manifest, out) -> Path:
    ds = _load_dataset(manifest)
    t = cfg.tar
    model, _ = train_tar(
        ds,
        cfg.windows.to_windows(),
        d_m=t.d_m,
        n_ctl=t.n_ctl,
        n_ctx=t.n_ctx,
        k=t.k,
        lambda_reg=t.lambda_reg,
        neg_ratio=t.neg_ratio,
        train=t.train.to_train(cfg.subseed("train-tar")),
    )
    model.save(out)
    return Path(out)


def combine(
    mode: str,
    tag_props: list[Proposal],
    windows: list[Proposal],
    seq: FeatureSequence,
    cfg: RunConfig,
    pate_model: Optional[PateModel] = None,
) -> list[Proposal]:
    """Merge the two initial sources for one video according to ``mode``."""
    if mode == "ctap":
        return complementary_filter(windows, tag_props, pate_model, seq, cfg.pate.theta_a)
    if mode in ("union", "union-nms"):
        return list(tag_props) + list(windows)
    if mode == "tiou-select":
        if not tag_props or not windows:
            return list(tag_props) + list(windows)
        best = tiou_matrix(intervals_array(windows), intervals_array(tag_props)).max(axis=1)
        return list(tag_props) + [w for w, b in zip(windows, best) if b < cfg.tiou_select_threshold]
    if mode == "tag-only":
        return list(tag_props)
    if mode == "sw-only":
        return list(windows)
    raise ValueError(f"unknown mode {mode!r}")


def filter_stage(cfg: RunConfig, manifest, tag_path, windows_path, out, pate_path=None, mode: Optional[str] = None) -> Path:
    mode = mode or cfg.mode
    pate_model = None
    if mode == "ctap":
        pate_model = PateModel.load(_require_model("filter", "pate", pate_path))
    ds = _load_dataset(manifest)
    tag_by = group_by_video(read_proposals(tag_path))
    win_by = group_by_video(read_proposals(windows_path))
    out_props = []
    for vid in sorted(ds.features):
        out_props.extend(combine(mode, tag_by.get(vid, []), win_by.get(vid, []), ds.features[vid], cfg, pate_model))
    write_proposals(out_props, out)
    return Path(out)


def apply_tar_stage(cfg: RunConfig, manifest, candidates_path, tar_path, out, mode: Optional[str] = None) -> Path:
    mode = mode or cfg.mode
    model = TarModel.load(_require_model("infer", "tar", tar_path))
    ds = _load_dataset(manifest)
    by_video = group_by_video(read_proposals(candidates_path))
    out_props = []
    for vid in sorted(ds.features):
        res = apply_tar(model, by_video.get(vid, []), ds.features[vid], final_nms=cfg.final_nms)
        if mode == "union-nms":
            res = nms(res, cfg.union_nms_threshold)
        out_props.extend(res)
    write_proposals(out_props, out)
    return Path(out)


def infer_stage(
    cfg: RunConfig,
    manifest,
    out_dir,
    actionness_path,
    tar_path,
    pate_path=None,
    mode: Optional[str] = None,
) -> Path:
    """Full CTAP inference: actionness -> TAG + windows -> combine -> TAR. Returns the final proposal file."""
    mode = mode or cfg.mode
    _require_model("infer", "actionness", actionness_path)
    _require_model("infer", "tar", tar_path)
    if mode == "ctap":
        _require_model("infer", "pate", pate_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = score_actionness_stage(cfg, manifest, actionness_path, out_dir / "scores.tsv")
    tag = tag_group_stage(cfg, scores, out_dir / "tag.tsv")
    windows = gen_windows_stage(cfg, manifest, out_dir / "windows.tsv")
    cands = filter_stage(cfg, manifest, tag, windows, out_dir / f"candidates_{mode}.tsv", pate_path, mode)
    return apply_tar_stage(cfg, manifest, cands, tar_path, out_dir / f"proposals_{mode}.tsv", mode)


def eval_stage(cfg: RunConfig, proposals_path, annotations_path, out_dir) -> dict:
    props = group_by_video(read_proposals(proposals_path))
    gts = group_by_video(read_annotations(annotations_path))
    e = cfg.eval
    curve = ar_an_curve(props, gts, e.grid(), e.an_max, e.an_mode)
    extra = [(an, average_recall(props, gts, an, e.grid(), e.an_mode)) for an in e.extra_an]
    write_metrics(curve, out_dir, extra)
    summary = {"auc": curve.auc}
    for an in (10, 50, 100):
        if an in curve.an_values:
            summary[f"ar@{an}"] = curve.ar_at(an)
    summary.update({f"ar@{an}": v for an, v in extra})
    return summary


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------


def run_pipeline(cfg: RunConfig, out_dir, data_dir=None, modes: Optional[list[str]] = None) -> dict:
    """gen-synth (unless ``data_dir`` holds manifests) -> train all models -> infer + eval per mode.

    Writes ``run_manifest.json`` with the config hash, seed, stage timings and output paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = modes or [cfg.mode]
    timings: dict[str, float] = {}
    outputs: dict[str, str] = {}

    def timed(stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            res = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        timings[stage] = round(time.perf_counter() - t0, 4)
        return res

    save_config(cfg, out_dir / "config.json")
    if data_dir is None:
        data = timed("gen-synth", gen_synth, cfg, out_dir / "data")
        train_manifest, test_manifest = data["train"], data["test"]
    else:
        train_manifest = Path(data_dir) / "manifest_train.json"
        test_manifest = Path(data_dir) / "manifest_test.json"
    outputs["train_manifest"] = str(train_manifest)
    outputs["test_manifest"] = str(test_manifest)

    models = out_dir / "models"
    models.mkdir(exist_ok=True)
    act = timed("train-actionness", train_actionness_stage, cfg, train_manifest, models / "actionness.ckpt")
    pate = None
    if "ctap" in modes:
        pate = timed("train-pate", train_pate_stage, cfg, train_manifest, act, models / "pate.ckpt")
    tar = timed("train-tar", train_tar_stage, cfg, train_manifest, models / "tar.ckpt")
    outputs.update(actionness=str(act), tar=str(tar))
    if pate is not None:
        outputs["pate"] = str(pate)

    metrics = {}
    test_ann = read_manifest(test_manifest)
    ann_path = test_ann.root / test_ann.annotations
    for mode in modes:
        infer_dir = out_dir / "infer"
        final = timed(f"infer[{mode}]", infer_stage, cfg, test_manifest, infer_dir, act, tar, pate, mode)
        metrics[mode] = timed(f"eval[{mode}]", eval_stage, cfg, final, ann_path, out_dir / "metrics" / mode)
        outputs[f"proposals[{mode}]"] = str(final)

    manifest = {
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "modes": modes,
        "timings_s": timings,
        "outputs": outputs,
        "metrics": metrics,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
