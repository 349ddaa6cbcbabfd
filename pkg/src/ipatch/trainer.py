"""Loss and metrics, the training loop, and the ablation / overlap drivers."""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .autocorrelation import WEIGHTINGS
from .data import ForecastSample, MultivariateSeries, SplitSpec, Standardizer, stack, standardize, window
from .model import VARIANTS, IPatchModel, ModelConfig, build, parameters
from .numeric import AdamState, ConfigError, adam_step
from .patching import patch_count

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    max_steps: int | None = None
    loss: str = "mse"

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience={self.patience} exceeds max_epochs={self.max_epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be positive, got {self.max_steps}")
        if self.loss != "mse":
            raise ConfigError(f"only the 'mse' loss is supported, got {self.loss!r}")


def config_hash(*parts) -> str:
    """Short sha256 over the canonical JSON of the given config objects."""
    payload = [dataclasses.asdict(p) if dataclasses.is_dataclass(p) else p for p in parts]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    return y, y_hat


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


@dataclass
class MetricsReport:
    split: str
    mse: float
    mae: float
    n_samples: int
    wall_clock: float
    config_hash: str
    seed: int
    scale: str = "standardized"
    labels: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def predict(model: IPatchModel, inputs: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Forecasts for a stacked (n, L, M) input array, evaluated in eval mode."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(inputs), chunk):
            out.append(model(torch.from_numpy(np.ascontiguousarray(inputs[i:i + chunk]))).numpy())
    model.train(was_training)
    return np.concatenate(out)


def evaluate(model: IPatchModel, samples: Sequence[ForecastSample], *, split: str = "test",
             scaler: Standardizer | None = None, raw_scale: bool = False,
             config_hash: str = "", seed: int = 0, labels: dict | None = None) -> MetricsReport:
    """MSE/MAE over every horizon x variable element of every sample.

    With ``raw_scale`` the forecasts and targets are mapped back through
    ``scaler`` first; the chosen scale is recorded in the report.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty sample set")
    if raw_scale and scaler is None:
        raise ValueError("raw_scale needs the fitted Standardizer")
    start = time.perf_counter()
    inputs, targets = stack(samples)
    preds = predict(model, inputs)
    if raw_scale:
        preds, targets = scaler.invert(preds), scaler.invert(targets)
    return MetricsReport(
        split=split,
        mse=mse(targets, preds),
        mae=mae(targets, preds),
        n_samples=len(samples),
        wall_clock=time.perf_counter() - start,
        config_hash=config_hash,
        seed=seed,
        scale="raw" if raw_scale else "standardized",
        labels=dict(labels or {}),
    )


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    steps: int = 0
    stopped_early: bool = False
    monitor: str = "val_mse"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _val_mse(model, inputs, targets) -> float:
    return mse(targets, predict(model, inputs))


def train(model: IPatchModel, samples: Sequence[ForecastSample], config: TrainConfig,
          val_samples: Sequence[ForecastSample] | None = None):
    """Minimize batch MSE with Adam; keep the parameters of the best epoch.

    Batches come from a seeded permutation per epoch. Early stopping watches
    validation MSE, or the epoch training loss when no validation samples
    are given. Returns ``(model, history)``; ``model`` is updated in place.
    """
    if not samples:
        raise ValueError("training needs at least one sample")
    inputs, targets = stack(samples)
    x_all, y_all = torch.from_numpy(inputs), torch.from_numpy(targets)
    val = stack(val_samples) if val_samples else None
    rng = np.random.default_rng(config.seed)
    params = [p for _, p in parameters(model)]
    state = AdamState()
    history = History(monitor="val_mse" if val else "train_loss")
    best_state = copy.deepcopy(model.state_dict())
    since_best = 0
    n = len(samples)

    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[i:i + config.batch_size])
            xb, yb = x_all[idx], y_all[idx]
            loss = torch.mean((model(xb) - yb) ** 2)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss {loss.item()} at epoch {epoch}, step {history.steps}"
                )
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
            with torch.no_grad():
                new, state = adam_step([p.detach() for p in params], grads, state,
                                       config.lr, config.beta1, config.beta2, config.eps)
                for p, v in zip(params, new):
                    p.copy_(v)
            total += loss.item() * len(idx)
            seen += len(idx)
            history.steps += 1
            if config.max_steps is not None and history.steps >= config.max_steps:
                break
        train_loss = total / seen
        monitored = _val_mse(model, *val) if val else train_loss
        history.epochs.append({"epoch": epoch, "steps": history.steps,
                               "train_loss": train_loss, "val_mse": monitored if val else None})
        log.debug("epoch %d: train %.6g, %s %.6g", epoch, train_loss, history.monitor, monitored)
        if monitored < history.best_val:
            history.best_val, history.best_epoch = monitored, epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
        if config.max_steps is not None and history.steps >= config.max_steps:
            break

    model.load_state_dict(best_state)
    model.eval()
    return model, history


# --------------------------------------------------------------------------
# Experiment drivers
# --------------------------------------------------------------------------


@dataclass
class PreparedData:
    series: MultivariateSeries  # standardized
    scaler: Standardizer
    spec: SplitSpec
    samples: dict  # split name -> list[ForecastSample]

    @property
    def boundaries(self) -> list[int]:
        return list(self.spec.boundaries(self.series.T))


def prepare(series: MultivariateSeries, L: int, H: int, spec: SplitSpec | None = None,
            stride: int = 1) -> PreparedData:
    spec = spec or SplitSpec()
    scaled, scaler = standardize(series, spec)
    samples = {}
    for split in ("train", "val", "test"):
        lo, hi = spec.segment(series.T, split)
        samples[split] = window(scaled, L, H, stride, split, spec) if hi - lo >= L + H else []
    if not samples["train"]:
        raise ValueError(f"train segment is shorter than L+H={L + H}")
    return PreparedData(scaled, scaler, spec, samples)


@dataclass
class RunResult:
    model: IPatchModel
    history: History
    reports: dict  # split -> MetricsReport
    config_hash: str


def run_single(data: PreparedData, model_cfg: ModelConfig, train_cfg: TrainConfig, *,
               raw_scale: bool = False, labels: dict | None = None) -> RunResult:
    """Build, train and evaluate one configuration on prepared data."""
    chash = config_hash(model_cfg, train_cfg, {"split": list(data.spec.fractions),
                                               "boundaries": data.boundaries})
    start = time.perf_counter()
    model = build(model_cfg)
    model, history = train(model, data.samples["train"], train_cfg, data.samples["val"] or None)
    elapsed = time.perf_counter() - start
    labels = dict(labels or {})
    labels.setdefault("boundaries", data.boundaries)
    reports = {}
    for split in ("train", "val", "test"):
        if data.samples[split]:
            rep = evaluate(model, data.samples[split], split=split, scaler=data.scaler,
                           raw_scale=raw_scale, config_hash=chash, seed=train_cfg.seed,
                           labels=labels)
            rep.wall_clock += elapsed
            reports[split] = rep
    return RunResult(model, history, reports, chash)


def _eval_split(result: RunResult) -> MetricsReport:
    return result.reports.get("test") or result.reports.get("val") or result.reports["train"]


def run_ablation(data: PreparedData, base: ModelConfig, train_cfg: TrainConfig, *,
                 variants: Sequence[str] = VARIANTS, weightings: Sequence[str] = WEIGHTINGS,
                 raw_scale: bool = False) -> list[MetricsReport]:
    """Train every variant x weighting cell on the same data and seed."""
    if not variants or not weightings:
        raise ConfigError("ablation needs at least one variant and one weighting")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    for w in weightings:
        if w not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {w!r}")
    reports = []
    for variant in variants:
        for weighting in weightings:
            cfg = base.replace(variant=variant, weighting=weighting)
            res = run_single(data, cfg, train_cfg, raw_scale=raw_scale,
                             labels={"variant": variant, "weighting": weighting})
            reports.append(_eval_split(res))
    return reports


@dataclass
class OverlapRow:
    stride: int
    n_patches: int
    mse: float
    mae: float
    mse_delta_pct: float
    mae_delta_pct: float
    report: MetricsReport


def relative_gain(baseline: float, value: float) -> float:
    """Percent improvement of ``value`` over ``baseline``; positive = lower error."""
    return 0.0 if value == baseline else 100.0 * (baseline - value) / value


def run_overlap_experiment(data: PreparedData, base: ModelConfig, train_cfg: TrainConfig,
                           strides: Sequence[int], *, raw_scale: bool = False) -> list[OverlapRow]:
    """Train the same configuration under each stride O.

    Deltas are relative to the first stride in the list.
    """
    if not strides:
        raise ConfigError("compare-overlap needs at least one stride")
    for O in strides:
        if not 1 <= O <= base.patch.S:
            raise ConfigError(f"stride O={O} must lie in [1, S={base.patch.S}]")
    rows = []
    for O in strides:
        cfg = base.replace(O=int(O))
        res = run_single(data, cfg, train_cfg, raw_scale=raw_scale, labels={"stride": int(O)})
        rep = _eval_split(res)
        rows.append((int(O), patch_count(base.patch.L, base.patch.S, int(O)), rep))
    base_mse, base_mae = rows[0][2].mse, rows[0][2].mae
    return [
        OverlapRow(O, N, rep.mse, rep.mae, relative_gain(base_mse, rep.mse),
                   relative_gain(base_mae, rep.mae), rep)
        for O, N, rep in rows
    ]


def _arrow(delta: float) -> str:
    if delta > 0:
        return "▲"
    if delta < 0:
        return "▼"
    return "►"


def signed_delta(delta: float) -> str:
    return f"{_arrow(delta)} {delta:+.2f}%"


# --------------------------------------------------------------------------
# Report I/O
# --------------------------------------------------------------------------


def write_reports(reports: Sequence[MetricsReport], path) -> None:
    """One JSON object per line."""
    with open(path, "w", encoding="utf-8") as f:
        for r in reports:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_reports(path) -> list[MetricsReport]:
    with open(path, encoding="utf-8") as f:
        return [MetricsReport.from_dict(json.loads(line)) for line in f if line.strip()]


def ablation_table(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "weighting", "split", "mse", "mae", "n_samples", "scale"])
    for r in reports:
        w.writerow([r.labels.get("variant"), r.labels.get("weighting"), r.split,
                    repr(r.mse), repr(r.mae), r.n_samples, r.scale])
    return buf.getvalue()


def overlap_table(rows: Sequence[OverlapRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stride", "n_patches", "mse", "mae", "mse_delta", "mae_delta", "split", "scale"])
    for r in rows:
        w.writerow([r.stride, r.n_patches, repr(r.mse), repr(r.mae), signed_delta(r.mse_delta_pct),
                    signed_delta(r.mae_delta_pct), r.report.split, r.report.scale])
    return buf.getvalue()
