"""Dataset ingestion, synthetic generators, chronological splits, windowing
and train-split standardization."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numeric import ConfigError, make_rng

log = logging.getLogger(__name__)

STD_FLOOR = 1e-5
SPLIT_NAMES = ("train", "val", "test")
SYNTH_KINDS = ("sinusoid_mix", "ar_process")


@dataclass
class MultivariateSeries:
    channels: list[str]
    values: np.ndarray  # (T, M) float64
    timestamps: list[str] | None = None
    rejected_rows: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D (T, M), got shape {self.values.shape}")
        if self.values.shape[1] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel names for {self.values.shape[1]} columns"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("series contains non-finite values")
        if self.timestamps is not None and len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamp count does not match row count")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def load_csv(path) -> MultivariateSeries:
    """Read a comma-separated file with a header row.

    A first column named ``date`` is kept as timestamps. Rows with an empty
    cell are dropped (count kept in ``rejected_rows``); any other
    non-numeric cell is an error.
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_date = header[0].lower() == "date"
    channels = header[1:] if has_date else header
    if not channels:
        raise ValueError(f"{path}: no data columns in header")

    values, stamps, rejected = [], [], 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(
                f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}"
            )
        cells = row[1:] if has_date else row
        if any(c.strip() == "" for c in cells):
            rejected += 1
            continue
        parsed = []
        for name, cell in zip(channels, cells):
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} at line {lineno}, column {name!r}"
                ) from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: non-finite value at line {lineno}, column {name!r}")
            parsed.append(v)
        values.append(parsed)
        if has_date:
            stamps.append(row[0])
    if rejected:
        log.warning("%s: rejected %d rows with missing values", path, rejected)
    if not values:
        raise ValueError(f"{path}: no data rows")
    return MultivariateSeries(channels, np.array(values), stamps if has_date else None, rejected)


def save_csv(series: MultivariateSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        has_date = series.timestamps is not None
        w.writerow((["date"] if has_date else []) + list(series.channels))
        for i, row in enumerate(series.values):
            cells = [repr(float(v)) for v in row]
            w.writerow(([series.timestamps[i]] if has_date else []) + cells)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


def synth(kind: str, T: int, M: int, seed: int = 0, *, periods: Sequence[float] = (24.0,),
          amplitudes: Sequence[float] | None = None, phases: Sequence[float] | None = None,
          trend: float = 0.0, noise: float = 0.0, ar_coeffs: Sequence[float] = (0.8,),
          min_length: int = 1) -> MultivariateSeries:
    """Generate a seeded synthetic series.

    ``sinusoid_mix``: sum_i a_i sin(2 pi t / p_i + phi_i) + trend * t + noise.
    Phases default to seeded random draws per channel and component.
    ``ar_process``: x_t = sum_i c_i x_{t-i} + noise * e_t, e_t ~ N(0, 1).
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    if T < max(1, min_length):
        raise ConfigError(f"T={T} is shorter than the required {min_length}")
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    rng = make_rng(seed)
    t = np.arange(T, dtype=np.float64)

    if kind == "sinusoid_mix":
        periods = [float(p) for p in periods]
        if any(p <= 0 for p in periods):
            raise ConfigError("periods must be positive")
        amps = [1.0] * len(periods) if amplitudes is None else [float(a) for a in amplitudes]
        if len(amps) != len(periods):
            raise ConfigError("amplitudes and periods must have equal length")
        if phases is None:
            ph = rng.uniform(0.0, 2 * np.pi, size=(M, len(periods)))
        else:
            ph = np.broadcast_to(np.asarray(phases, dtype=np.float64), (M, len(periods)))
        values = np.empty((T, M))
        for j in range(M):
            col = trend * t
            for a, p, phi in zip(amps, periods, ph[j]):
                col = col + a * np.sin(2 * np.pi * t / p + phi)
            values[:, j] = col
        if noise > 0:
            values = values + noise * rng.standard_normal((T, M))
    else:
        coeffs = np.asarray(ar_coeffs, dtype=np.float64)
        if coeffs.size == 0 or np.sum(np.abs(coeffs)) >= 1.0:
            raise ConfigError("ar_coeffs must be non-empty with sum |c| < 1 (stationary)")
        if noise <= 0:
            raise ConfigError("ar_process needs noise > 0")
        p = coeffs.size
        burn = 100
        x = np.zeros((T + burn + p, M))
        e = noise * rng.standard_normal((T + burn + p, M))
        for i in range(p, x.shape[0]):
            x[i] = coeffs @ x[i - p:i][::-1] + e[i]
        values = x[-T:] + trend * t[:, None]
    return MultivariateSeries([f"ch{j}" for j in range(M)], values)


# --------------------------------------------------------------------------
# Splits, windows, standardization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ConfigError(f"split fractions must be three non-negative values, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(self.fractions)}")
        if self.fractions[0] <= 0:
            raise ConfigError("train fraction must be positive")

    def boundaries(self, T: int) -> tuple[int, int, int, int]:
        """Indices [0, a, b, T]: train = [0, a), val = [a, b), test = [b, T)."""
        # the epsilon keeps 0.7 + 0.1 from flooring one step short
        a = math.floor(T * self.fractions[0] + 1e-9)
        b = math.floor(T * (self.fractions[0] + self.fractions[1]) + 1e-9)
        return 0, a, b, T

    def segment(self, T: int, split: str) -> tuple[int, int]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        bounds = self.boundaries(T)
        i = SPLIT_NAMES.index(split)
        return bounds[i], bounds[i + 1]


@dataclass
class ForecastSample:
    input: np.ndarray  # (L, M)
    target: np.ndarray  # (H, M)
    origin: int  # index of input[0] in the full series


def window(series, L: int, H: int, stride: int = 1, split: str | None = None,
           spec: SplitSpec | None = None) -> list[ForecastSample]:
    """Cut (L, H) samples from one split segment (or the whole series).

    Samples never cross the segment boundary. ``series`` is a
    MultivariateSeries or a (T, M) array.
    """
    values = series.values if isinstance(series, MultivariateSeries) else np.asarray(series, dtype=np.float64)
    if L < 1 or H < 1 or stride < 1:
        raise ConfigError(f"L, H and stride must be positive (got {L}, {H}, {stride})")
    lo, hi = (0, values.shape[0]) if split is None else (spec or SplitSpec()).segment(values.shape[0], split)
    if hi - lo < L + H:
        raise ValueError(
            f"{split or 'series'} segment has {hi - lo} steps, need at least L+H={L + H}"
        )
    return [
        ForecastSample(values[s:s + L].copy(), values[s + L:s + L + H].copy(), s)
        for s in range(lo, hi - L - H + 1, stride)
    ]


def stack(samples: Sequence[ForecastSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise ValueError("empty sample set")
    return np.stack([s.input for s in samples]), np.stack([s.target for s in samples])


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    floor: float = field(default=STD_FLOOR)

    @classmethod
    def fit(cls, train_values, floor: float = STD_FLOOR) -> "Standardizer":
        x = np.asarray(train_values, dtype=np.float64)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), floor), floor)

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def standardize(series: MultivariateSeries, spec: SplitSpec | None = None):
    """Fit statistics on the train split only and return the scaled series."""
    lo, hi = (spec or SplitSpec()).segment(series.T, "train")
    scaler = Standardizer.fit(series.values[lo:hi])
    scaled = MultivariateSeries(list(series.channels), scaler.apply(series.values),
                                series.timestamps, series.rejected_rows)
    return scaled, scaler
