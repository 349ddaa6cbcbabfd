"""Deterministic SVG line charts of forecasts against ground truth."""
from __future__ import annotations

import json
import re
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 320
MARGIN = dict(left=60, right=20, top=30, bottom=40)
SERIES_STYLE = (
    ("history", "#7f7f7f"),
    ("truth", "#000000"),
    ("prediction", "#1f4fd1"),
)


def load_forecast(path) -> dict:
    with open(path, encoding="utf-8") as f:
        dump = json.load(f)
    for key in ("channels", "history", "truth", "prediction"):
        if key not in dump:
            raise ValueError(f"{path}: forecast dump is missing {key!r}")
    return dump


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def channel_svg(name: str, history, truth, prediction) -> str:
    """One chart: history then truth/prediction over the horizon."""
    history = np.asarray(history, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    L, H = history.size, truth.size
    xs = {
        "history": np.arange(L),
        "truth": np.arange(L - 1, L + H) if L else np.arange(H),
        "prediction": np.arange(L, L + H),
    }
    ys = {
        "history": history,
        "truth": np.concatenate([history[-1:], truth]) if L else truth,
        "prediction": prediction,
    }
    all_y = np.concatenate([history, truth, prediction])
    xmin, xmax = 0.0, float(max(L + H - 1, 1))
    ymin, ymax = float(all_y.min()), float(all_y.max())
    if ymax == ymin:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return MARGIN["top"] + (ymax - y) / (ymax - ymin) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xmin="{xmin!r}" data-xmax="{xmax!r}" '
        f'data-ymin="{ymin!r}" data-ymax="{ymax!r}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(name)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        f'fill="none" stroke="#cccccc"/>',
    ]
    for i in range(5):
        yv = ymin + (ymax - ymin) * i / 4
        out.append(
            f'<text x="{MARGIN["left"] - 6}" y="{_fmt(py(yv) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{yv:.3g}</text>'
        )
    if L:
        out.append(
            f'<line x1="{_fmt(px(L - 0.5))}" y1="{MARGIN["top"]}" x2="{_fmt(px(L - 0.5))}" '
            f'y2="{MARGIN["top"] + ph}" stroke="#bbbbbb" stroke-dasharray="4 3"/>'
        )
    for key, color in SERIES_STYLE:
        if ys[key].size == 0:
            continue
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs[key], ys[key]))
        out.append(f'<polyline id="{key}" fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{pts}"/>')
    for i, (key, color) in enumerate(SERIES_STYLE):
        lx = MARGIN["left"] + 10 + 110 * i
        ly = HEIGHT - 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{key}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def plot_forecast(dump: dict, out_dir, channels=None) -> list[Path]:
    """Write one SVG per requested channel; returns the written paths."""
    available = list(dump["channels"])
    channels = available if not channels else list(channels)
    missing = [c for c in channels if c not in available]
    if missing:
        raise KeyError(f"unknown channel(s) {missing}; available: {available}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history = np.asarray(dump["history"], dtype=np.float64)
    truth = np.asarray(dump["truth"], dtype=np.float64)
    pred = np.asarray(dump["prediction"], dtype=np.float64)
    paths = []
    for c in channels:
        j = available.index(c)
        path = out_dir / f"forecast_{_safe(c)}.svg"
        path.write_text(channel_svg(c, history[:, j], truth[:, j], pred[:, j]), encoding="utf-8")
        paths.append(path)
    return paths
