"""Experiment configuration files (YAML), parsed strictly.

Unknown keys are rejected and every nested invariant is checked before any
work starts, so a bad file fails fast with the offending key in the message.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError

from .data import SplitSpec, synth, load_csv, MultivariateSeries
from .autocorrelation import WEIGHTINGS
from .model import VARIANTS, ModelConfig
from .numeric import ConfigError
from .patching import PatchConfig
from .trainer import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Strict):
    kind: Literal["sinusoid_mix", "ar_process"] = "sinusoid_mix"
    T: int = 2000
    M: int = 2
    seed: Optional[int] = None
    periods: list[float] = [24.0]
    amplitudes: Optional[list[float]] = None
    phases: Optional[list[float]] = None
    trend: float = 0.0
    noise: float = 0.0
    ar_coeffs: list[float] = [0.8]


class DataSection(_Strict):
    source: Literal["synth", "csv"] = "synth"
    csv_path: Optional[str] = None
    synth: SynthSection = SynthSection()
    split: list[float] = [0.7, 0.1, 0.2]
    stride: int = 1
    raw_scale: bool = False


class PatchSection(_Strict):
    L: int = 96
    S: int = 16
    O: int = 16
    D: int = 16


class ModelSection(_Strict):
    horizon: int = 96
    n_heads: int = 2
    J: Optional[int] = None
    G: int = 4
    variant: str = "full"
    weighting: str = "fourier"
    encoder_layers: int = 1
    instance_norm: bool = True
    shared_lags: bool = False
    attn_output_projection: bool = False
    dropout: float = 0.0


class TrainSection(_Strict):
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    max_steps: Optional[int] = None


class AblationSection(_Strict):
    variants: list[str] = ["full", "patch_only", "autocorr_only"]
    weightings: list[str] = ["fourier", "softmax"]


class OverlapSection(_Strict):
    strides: Optional[list[int]] = None  # default [S, S // 2]


class EvalSection(_Strict):
    checkpoint: Optional[str] = None
    split: Literal["train", "val", "test"] = "test"
    sample: int = -1  # which sample of the split goes into the forecast dump


class ExperimentFile(_Strict):
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataSection = DataSection()
    patch: PatchSection = PatchSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    ablation: AblationSection = AblationSection()
    overlap: OverlapSection = OverlapSection()
    eval: EvalSection = EvalSection()


class ExperimentConfig:
    """Validated experiment: the raw file plus the library config objects."""

    def __init__(self, raw: ExperimentFile, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir
        self.seed = raw.seed
        self.output_dir = Path(raw.output_dir)
        self.patch = _section("patch", lambda: PatchConfig(**raw.patch.model_dump()))
        self.model = _section("model", lambda: ModelConfig(patch=self.patch, seed=raw.seed,
                                                            **raw.model.model_dump()))
        self.train = _section("train", lambda: TrainConfig(seed=raw.seed, **raw.train.model_dump()))
        self.split = _section("data.split", lambda: SplitSpec(tuple(raw.data.split)))
        if raw.data.stride < 1:
            raise ConfigError("data.stride: must be >= 1")
        if raw.data.source == "csv" and not raw.data.csv_path:
            raise ConfigError("data.csv_path: required when data.source is 'csv'")
        if raw.data.source == "synth" and raw.data.synth.T < self.patch.L + self.model.horizon:
            raise ConfigError(
                f"data.synth.T: {raw.data.synth.T} is shorter than L+H={self.patch.L + self.model.horizon}"
            )

        ab = raw.ablation
        if not ab.variants:
            raise ConfigError("ablation.variants: must not be empty")
        if not ab.weightings:
            raise ConfigError("ablation.weightings: must not be empty")
        for v in ab.variants:
            if v not in VARIANTS:
                raise ConfigError(f"ablation.variants: unknown variant {v!r}; expected one of {VARIANTS}")
        for w in ab.weightings:
            if w not in WEIGHTINGS:
                raise ConfigError(f"ablation.weightings: unknown weighting {w!r}; expected one of {WEIGHTINGS}")
        if not self.strides:
            raise ConfigError("overlap.strides: must not be empty")
        for O in self.strides:
            if not 1 <= O <= self.patch.S:
                raise ConfigError(f"overlap.strides: stride {O} must lie in [1, S={self.patch.S}]")

    @property
    def strides(self) -> list[int]:
        if self.raw.overlap.strides is not None:
            return list(self.raw.overlap.strides)
        S = self.patch.S
        return [S, S // 2] if S >= 2 else [S]

    def synth_series(self) -> MultivariateSeries:
        s = self.raw.data.synth
        return synth(s.kind, s.T, s.M, self.seed if s.seed is None else s.seed,
                     periods=s.periods, amplitudes=s.amplitudes, phases=s.phases,
                     trend=s.trend, noise=s.noise, ar_coeffs=s.ar_coeffs)

    def load_series(self) -> MultivariateSeries:
        if self.raw.data.source == "csv":
            path = Path(self.raw.data.csv_path)
            if not path.is_absolute():
                path = self.base_dir / path
            return load_csv(path)
        return self.synth_series()

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ExperimentConfig":
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if out is not None:
            updates["output_dir"] = out
        if not updates:
            return self
        return ExperimentConfig(self.raw.model_copy(update=updates), self.base_dir)


def _section(name, make):
    try:
        return make()
    except ConfigError as e:
        raise ConfigError(f"{name}: {e}") from None
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from None


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msg = "unknown key" if e["type"] == "extra_forbidden" else e["msg"]
        lines.append(f"{loc}: {msg}")
    return "; ".join(lines)


def parse_config(data: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    try:
        raw = ExperimentFile.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from None
    return ExperimentConfig(raw, Path(base_dir))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return parse_config(data, path.parent)
