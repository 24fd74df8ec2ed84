"""Run configuration: every stage's hyperparameters in one JSON document."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data_io import SynthConfig
from .evaluation import tiou_grid
from .initial_proposals import TagConfig, WindowConfig
from .nn import TrainConfig

Mode = Literal["ctap", "union", "union-nms", "tiou-select", "tag-only", "sw-only"]
MODES = ("ctap", "union", "union-nms", "tiou-select", "tag-only", "sw-only")


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSection(_Section):
    batch_size: int = Field(128, ge=1)
    lr: float = Field(0.005, gt=0)
    epochs: int = Field(10, ge=0)

    def to_train(self, seed: int) -> TrainConfig:
        return TrainConfig(self.batch_size, self.lr, self.epochs, seed)


class SynthSection(_Section):
    n_train: int = Field(40, ge=1)
    n_test: int = Field(10, ge=1)
    units_range: tuple[int, int] = (200, 400)
    segments_range: tuple[int, int] = (2, 4)
    segment_length_range: tuple[int, int] = (16, 64)
    d_f: int = Field(16, ge=1)
    separation: float = Field(4.0, ge=0)
    failure_fraction: float = Field(0.0, ge=0, le=1)

    @field_validator("units_range", "segments_range", "segment_length_range")
    @classmethod
    def _ordered(cls, v):
        if v[0] > v[1] or v[0] < 0:
            raise ValueError("range must be (low, high) with 0 <= low <= high")
        return v

    def to_synth(self, seed: int) -> SynthConfig:
        return SynthConfig(
            n_videos=self.n_train + self.n_test,
            units_range=self.units_range,
            segments_range=self.segments_range,
            segment_length_range=self.segment_length_range,
            d_f=self.d_f,
            separation=self.separation,
            failure_fraction=self.failure_fraction,
            seed=seed,
        )


class TagSection(_Section):
    tau_init: float = Field(0.085, gt=0, le=1)
    tau_step: float = Field(0.085, gt=0)
    tau_max: float = Field(1.0, gt=0, le=1)
    eta_min: float = Field(0.025, gt=0, le=1)
    eta_max: float = Field(1.0, gt=0, le=1)
    eta_step: float = Field(0.025, gt=0)
    nms_threshold: float = Field(0.95, ge=0, le=1)

    @model_validator(mode="after")
    def _bounds(self):
        if self.tau_init > self.tau_max:
            raise ValueError("tau_init must be <= tau_max")
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must be <= eta_max")
        return self

    def to_tag(self) -> TagConfig:
        return TagConfig(**self.model_dump())


class WindowSection(_Section):
    lengths: list[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256, 512])
    overlap_tiou: float = Field(0.75, ge=0, lt=1)

    @field_validator("lengths")
    @classmethod
    def _increasing(cls, v):
        if not v or any(x <= 0 for x in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("lengths must be positive and strictly increasing")
        return v

    def to_windows(self) -> WindowConfig:
        return WindowConfig(list(self.lengths), self.overlap_tiou)


class ActionnessSection(_Section):
    d_m: int = Field(1024, ge=1)
    t_a: int = Field(4, ge=1)
    k: int = Field(3, ge=1)
    train: TrainSection = Field(default_factory=TrainSection)

    @field_validator("k")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("kernel size must be odd")
        return v


class PateSection(_Section):
    d_m: int = Field(1024, ge=1)
    theta_a: float = Field(0.1, gt=0, lt=1)
    theta_c: float = Field(0.5, gt=0, lt=1)
    # 1: label with the actionness model trained on all training videos
    label_folds: int = Field(1, ge=1)
    train: TrainSection = Field(default_factory=TrainSection)


class TarSection(_Section):
    d_m: int = Field(1024, ge=1)
    n_ctl: int = Field(4, ge=1)
    n_ctx: int = Field(4, ge=2)
    k: int = Field(3, ge=1)
    lambda_reg: float = Field(1.0, ge=0)
    neg_ratio: float = Field(1.0, ge=0)
    train: TrainSection = Field(default_factory=TrainSection)

    @field_validator("n_ctx")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("n_ctx must be even")
        return v

    @field_validator("k")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("kernel size must be odd")
        return v


class EvalSection(_Section):
    tiou_start: float = Field(0.5, gt=0, le=1)
    tiou_stop: float = Field(0.95, gt=0, le=1)
    tiou_step: float = Field(0.05, gt=0)
    an_max: int = Field(100, ge=1)
    an_mode: Literal["per-video", "global"] = "per-video"
    extra_an: list[int] = Field(default_factory=lambda: [200])

    def grid(self) -> list[float]:
        return tiou_grid(self.tiou_start, self.tiou_stop, self.tiou_step)


class RunConfig(_Section):
    seed: int = 0
    mode: Mode = "ctap"
    final_nms: Optional[float] = Field(None, ge=0, le=1)
    union_nms_threshold: float = Field(0.7, ge=0, le=1)
    tiou_select_threshold: float = Field(0.5, ge=0, le=1)
    synth: SynthSection = Field(default_factory=SynthSection)
    tag: TagSection = Field(default_factory=TagSection)
    windows: WindowSection = Field(default_factory=WindowSection)
    actionness: ActionnessSection = Field(default_factory=ActionnessSection)
    pate: PateSection = Field(default_factory=PateSection)
    tar: TarSection = Field(default_factory=TarSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def subseed(self, stage: str) -> int:
        return subseed(self.seed, stage)


def subseed(seed: int, stage: str) -> int:
    """Per-stage seed derived from the run seed and the stage label only."""
    h = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
