import hashlib
import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from ipatch.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TRAIN = CONFIGS / "train.yaml"


def strip_wall_clock(obj):
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k != "wall_clock"}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def write_config(path, **changes):
    data = yaml.safe_load(TRAIN.read_text())
    for dotted, value in changes.items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(TRAIN), "--out", str(out), "--quiet"]) == 0
    return out


def test_train_writes_artifacts(trained):
    assert (trained / "checkpoint.ckpt").exists()
    report = json.loads((trained / "train_report.json").read_text())
    assert report["seed"] == 0 and len(report["config_hash"]) == 16
    assert set(report["metrics"]) == {"train", "val", "test"}
    assert report["history"]["best_epoch"] < len(report["history"]["epochs"])


def test_train_rerun_is_identical(trained, tmp_path):
    assert main(["train", "--config", str(TRAIN), "--out", str(tmp_path), "--quiet"]) == 0
    a = json.loads((trained / "train_report.json").read_text())
    b = json.loads((tmp_path / "train_report.json").read_text())
    assert strip_wall_clock(a) == strip_wall_clock(b)
    assert (trained / "checkpoint.ckpt").read_bytes() == (tmp_path / "checkpoint.ckpt").read_bytes()


def test_seed_override_changes_run(trained, tmp_path):
    assert main(["train", "--config", str(TRAIN), "--out", str(tmp_path), "--seed", "5", "--quiet"]) == 0
    assert (trained / "checkpoint.ckpt").read_bytes() != (tmp_path / "checkpoint.ckpt").read_bytes()
    assert json.loads((tmp_path / "train_report.json").read_text())["seed"] == 5


def test_config_file_not_mutated(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", **{"train.max_epochs": 1, "train.patience": 1})
    before = hashlib.sha256(cfg.read_bytes()).hexdigest()
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert hashlib.sha256(cfg.read_bytes()).hexdigest() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.yaml", "out"]


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.yaml", **{"model.bogus": 1})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "model.bogus" in capsys.readouterr().err
    assert not (tmp_path / "o" / "checkpoint.ckpt").exists()


@pytest.mark.parametrize("key,value,needle", [
    ("patch.O", 9, "patch"),
    ("model.n_heads", 3, "model"),
    ("ablation.variants", [], "ablation.variants"),
    ("data.split", [0.5, 0.6, 0.1], "data.split"),
    ("data.synth.T", 10, "data.synth.T"),
    ("train.lr", "fast", "train.lr"),
])
def test_invalid_values_exit_2(tmp_path, capsys, key, value, needle):
    cfg = write_config(tmp_path / "bad.yaml", **{key: value})
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert needle in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_eval_and_plot(trained, capsys):
    assert main(["eval", "--config", str(TRAIN), "--out", str(trained), "--quiet"]) == 0
    report = json.loads((trained / "eval_report.json").read_text())
    assert report["split"] == "test" and np.isfinite(report["mse"])
    dump = json.loads((trained / "forecast.json").read_text())
    assert np.asarray(dump["prediction"]).shape == (8, 2)
    assert np.asarray(dump["history"]).shape == (32, 2)

    assert main(["plot", "--out", str(trained), "--quiet"]) == 0
    svgs = sorted(trained.glob("forecast_*.svg"))
    assert len(svgs) == 2
    first = [p.read_bytes() for p in svgs]
    assert main(["plot", "--out", str(trained), "--quiet"]) == 0
    assert [p.read_bytes() for p in svgs] == first

    for j, path in enumerate(svgs):
        text = path.read_text()
        ymin = float(re.search(r'data-ymin="([^"]+)"', text).group(1))
        ymax = float(re.search(r'data-ymax="([^"]+)"', text).group(1))
        col = np.concatenate([np.asarray(dump[k])[:, j] for k in ("history", "truth", "prediction")])
        assert ymin <= col.min() and ymax >= col.max()
        assert 'id="prediction"' in text and 'id="truth"' in text

    capsys.readouterr()
    assert main(["plot", "--out", str(trained), "--channels", "nope"]) == 2
    err = capsys.readouterr().err
    assert "nope" in err and all(c in err for c in dump["channels"])


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--config", str(TRAIN), "--out", str(tmp_path)]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_ablate_table(tmp_path, capsys):
    cfg = write_config(tmp_path / "a.yaml", **{"train.max_epochs": 1, "train.patience": 1, "data.synth.T": 200})
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 7
    rows = [json.loads(line) for line in (tmp_path / "o" / "ablation.jsonl").read_text().splitlines()]
    assert {(r["labels"]["variant"], r["labels"]["weighting"]) for r in rows} == {
        (v, w) for v in ("full", "patch_only", "autocorr_only") for w in ("fourier", "softmax")}


def test_compare_overlap_table(tmp_path, capsys):
    cfg = write_config(tmp_path / "o.yaml", **{"train.max_epochs": 1, "train.patience": 1, "data.synth.T": 200})
    assert main(["compare-overlap", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    n_col = header.index("n_patches")
    assert [int(l.split(",")[n_col]) for l in lines[1:]] == [4, 7]
    assert (tmp_path / "o" / "overlap.csv").read_text().strip().splitlines() == lines


def test_synth_data(tmp_path):
    assert main(["synth-data", "--config", str(CONFIGS / "synth_data.yaml"),
                 "--out", str(tmp_path), "--quiet"]) == 0
    header = (tmp_path / "series.csv").read_text().splitlines()[0]
    assert header.count(",") >= 1


def test_grad_check_command(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("PASS")


@pytest.mark.parametrize("cmd", ["synth-data", "train", "eval", "ablate", "compare-overlap",
                                 "plot", "grad-check"])
def test_help(cmd):
    res = subprocess.run([sys.executable, "-m", "ipatch.cli", cmd, "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "--seed" in res.stdout
