"""``ctap`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pipeline as P
from .config import MODES, ConfigError, load_config
from .data_io import DecodeError, ParseError
from .nn import CheckpointError

log = logging.getLogger("ctap")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DATA = 5
EXIT_STAGE = 6


def _final_nms(text: str):
    if text.lower() in ("off", "none"):
        return "off"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a threshold in [0, 1] or 'off', got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"final-nms threshold must be in [0, 1], got {v}")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--mode", choices=MODES, help="proposal combination mode")
    p.add_argument("--final-nms", type=_final_nms, metavar="T|off", help="NMS threshold after TAR, or 'off'")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctap", description="Temporal action proposal pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        return p

    cmd("gen-synth", "write a synthetic train/test dataset")
    p = cmd("train-actionness", "train the unit-level actionness classifier")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, help="checkpoint path (default: OUT_DIR/actionness.ckpt)")
    p = cmd("score-actionness", "score every unit of every video")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--out", type=Path)
    p = cmd("tag-group", "group actionness scores into proposals")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p = cmd("gen-windows", "generate multi-scale sliding windows")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p = cmd("train-pate", "train the trustworthiness estimator")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--actionness", type=Path)
    p.add_argument("--out", type=Path)
    p = cmd("filter", "combine actionness proposals and windows")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--tag", type=Path, required=True)
    p.add_argument("--windows", type=Path, required=True)
    p.add_argument("--pate", type=Path)
    p.add_argument("--out", type=Path)
    p = cmd("train-tar", "train the adjustment and ranking network")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p = cmd("infer", "run inference from trained checkpoints")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--actionness", type=Path)
    p.add_argument("--tar", type=Path)
    p.add_argument("--pate", type=Path)
    p = cmd("eval", "recall metrics for a proposal file")
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p = cmd("pipeline", "generate data (unless --data-dir), train, infer and evaluate")
    p.add_argument("--data-dir", type=Path, help="directory holding manifest_train.json and manifest_test.json")
    p.add_argument("--modes", nargs="+", choices=MODES, help="evaluate several modes in one run")
    return parser


def _config(args):
    overrides = {"seed": args.seed, "mode": args.mode}
    if args.final_nms is not None:
        overrides["final_nms"] = None if args.final_nms == "off" else args.final_nms
    path = args.config
    if path is not None and not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = load_config(path, **{k: v for k, v in overrides.items() if v is not None})
    if args.final_nms == "off":
        cfg = cfg.model_copy(update={"final_nms": None})
    return cfg


def _require_file(path: Optional[Path], what: str) -> Path:
    if path is None or not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _run(args) -> None:
    cfg = _config(args)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    c = args.command
    if c == "gen-synth":
        paths = P.gen_synth(cfg, out)
        print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
        return
    if c == "pipeline":
        manifest = P.run_pipeline(cfg, out, args.data_dir, args.modes)
        print(json.dumps(manifest["metrics"], indent=2, sort_keys=True))
        return
    if c == "eval":
        summary = P.eval_stage(
            cfg, _require_file(args.proposals, "proposals"), _require_file(args.annotations, "annotations"), out
        )
        print(json.dumps(summary, indent=2, sort_keys=True))
        return
    if c == "tag-group":
        print(P.tag_group_stage(cfg, _require_file(args.scores, "scores"), args.out or out / "tag.tsv"))
        return

    manifest = _require_file(args.manifest, "manifest")
    if c == "train-actionness":
        res = P.train_actionness_stage(cfg, manifest, args.out or out / "actionness.ckpt")
    elif c == "score-actionness":
        res = P.score_actionness_stage(cfg, manifest, args.model or out / "actionness.ckpt", args.out or out / "scores.tsv")
    elif c == "gen-windows":
        res = P.gen_windows_stage(cfg, manifest, args.out or out / "windows.tsv")
    elif c == "train-pate":
        res = P.train_pate_stage(cfg, manifest, args.actionness or out / "actionness.ckpt", args.out or out / "pate.ckpt")
    elif c == "filter":
        res = P.filter_stage(
            cfg,
            manifest,
            _require_file(args.tag, "proposals"),
            _require_file(args.windows, "windows"),
            args.out or out / f"candidates_{cfg.mode}.tsv",
            args.pate or out / "pate.ckpt",
        )
    elif c == "train-tar":
        res = P.train_tar_stage(cfg, manifest, args.out or out / "tar.ckpt")
    elif c == "infer":
        res = P.infer_stage(
            cfg,
            manifest,
            out,
            args.actionness or out / "actionness.ckpt",
            args.tar or out / "tar.ckpt",
            args.pate or out / "pate.ckpt",
        )
    else:  # pragma: no cover - argparse restricts choices
        raise AssertionError(c)
    print(res)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        _run(args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except P.MissingModelError as exc:
        print(f"error [{exc.stage}] {exc.cause}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error [{stage}] missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DecodeError, ParseError, CheckpointError) as exc:
        print(f"error [{stage}] bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except P.StageError as exc:
        print(f"error [{exc.stage}] {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
