import json
import subprocess
import sys

import pytest

from csolab.cli import dispatch
from csolab.config import RESOLVED_NAME, RunConfigFile, resolve
from csolab.errors import ConfigError

TINY = ["--sprites", "synthetic", "--d", "4", "--epochs", "1", "--base-width", "2", "--test-size", "2"]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- config --------------------------------------------------------------------

def test_defaults_resolve():
    res = resolve(RunConfigFile())
    assert res.profile == "desk" and res.arch.base_width == 16 and res.scene.regime == "easy"
    assert res.probe.seed == res.seed == 0
    assert resolve(RunConfigFile(profile="paper")).arch.base_width == 64


@pytest.mark.parametrize("raw", [
    {"colour": 1},
    {"scene": {"regime": "hard", "blur": 2}},
    {"arch": {"depth": 5}},
    {"format": "other"},
    {"version": 2},
    {"scene": []},
])
def test_rejects_bad_files(raw):
    with pytest.raises(ConfigError):
        RunConfigFile.from_dict(raw)


@pytest.mark.parametrize("raw", [
    {"profile": "huge"},
    {"seed": -1},
    {"scene": {"regime": "medium"}},
    {"arch": {"levels": 3}},
    {"experiment": {"d": 0}},
    {"experiment": {"learning_rate": 0}},
    {"probe": {"stride": 7}},
])
def test_rejects_bad_values(raw):
    with pytest.raises(ConfigError):
        resolve(RunConfigFile.from_dict(raw))


def test_resolved_roundtrip(tmp_path):
    raw = {"profile": "desk", "seed": 5, "scene": {"regime": "strict", "noise_count": 3},
           "arch": {"base_width": 8}, "experiment": {"d": 1000, "epochs": 7},
           "probe": {"reference_class": "bag", "stride": 40}}
    res = resolve(RunConfigFile.from_dict(raw))
    assert res.scene.noise_count == 3 and res.probe.regime == res.scene and res.experiment.base_width == 8
    path = res.write(tmp_path)
    again = resolve(RunConfigFile.load(path))
    assert again == res


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfigFile.load(p)


# -- cli -----------------------------------------------------------------------

def test_rf_output(capsys):
    assert dispatch(["rf"]) == 0
    out = capsys.readouterr().out
    assert "bottleneck_rf=68 output_rf=96 reference_bottleneck_rf=61 reference_output_rf=101" in out


def test_generate_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert dispatch(["generate", "--regime", "hard", "--seed", "3", "--count", "4", "--sprites",
                         "synthetic", "--out", str(tmp_path / name)]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and RESOLVED_NAME in a and len(a) > 2


@pytest.mark.parametrize("argv", [["frobnicate"], ["rf", "--bogus"], [], ["train", "--d", "x", "--out", "o"]])
def test_usage_errors(argv, capsys):
    assert dispatch(argv) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "csolab: error: kind=UsageError exit=2" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scene": {"regime": "easy", "sparkle": 1}}))
    assert dispatch(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("csolab: error: kind=ConfigError exit=3 msg=")
    assert "sparkle" in err[0]


def test_flag_beats_file_beats_default(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 9, "scene": {"regime": "strict"}, "experiment": {"epochs": 3}}))
    out = tmp_path / "o"
    assert dispatch(["generate", "--config", str(cfg), "--regime", "hard", "--count", "0",
                     "--sprites", "synthetic", "--out", str(out)]) == 0
    resolved = json.loads((out / RESOLVED_NAME).read_text())
    assert resolved["scene"]["regime"] == "hard"          # flag
    assert resolved["seed"] == 9 and resolved["experiment"]["epochs"] == 3   # file
    assert resolved["arch"]["base_width"] == 16           # default
    # the echoed file reproduces the same resolution
    out2 = tmp_path / "o2"
    assert dispatch(["generate", "--config", str(out / RESOLVED_NAME), "--count", "0",
                     "--out", str(out2)]) == 0
    assert (out2 / RESOLVED_NAME).read_bytes() == (out / RESOLVED_NAME).read_bytes()


def test_missing_checkpoint_is_io_error(tmp_path, capsys):
    assert dispatch(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path)]) == 7


def test_probe_needs_model(tmp_path, capsys):
    assert dispatch(["probe", "--out", str(tmp_path)]) == 2


def test_train_evaluate_probe(tmp_path, capsys):
    out = tmp_path / "runs"
    assert dispatch(["train", "--regime", "hard", *TINY, "--out", str(out)]) == 0
    ckpts = list(out.rglob("*.ckpt"))
    assert len(ckpts) == 1
    run_dir = ckpts[0].parent
    assert (run_dir / RESOLVED_NAME).read_bytes() == (out / RESOLVED_NAME).read_bytes()
    ev = tmp_path / "ev"
    assert dispatch(["evaluate", "--checkpoint", str(ckpts[0]), "--sprites", "synthetic",
                     "--test-size", "2", "--out", str(ev)]) == 0
    assert json.loads((ev / RESOLVED_NAME).read_text())["scene"]["regime"] == "hard"
    assert (ev / "metrics.json").exists()
    pr = tmp_path / "pr"
    assert dispatch(["probe", "--checkpoint", str(ckpts[0]), "--sprites", "synthetic", "--stride", "80",
                     "--images-per-position", "1", "--out", str(pr)]) == 0
    assert {p.name for p in pr.glob("heatmap_*")} == {
        "heatmap_precision_shirt.png", "heatmap_precision_shirt.csv",
        "heatmap_recall_shirt.png", "heatmap_recall_shirt.csv"}
    capsys.readouterr()
    assert dispatch(["probe", "--checkpoint", str(ckpts[0]), "--regime", "strict", "--sprites", "synthetic",
                     "--stride", "80", "--images-per-position", "1", "--out", str(pr)]) == 5


def test_oracle_probe(tmp_path, capsys):
    assert dispatch(["probe", "--oracle", "--regime", "easy", "--reference", "pants", "--measure", "recall",
                     "--stride", "40", "--images-per-position", "1", "--sprites", "synthetic",
                     "--out", str(tmp_path)]) == 0
    assert "recall: mean=" in capsys.readouterr().out
    assert (tmp_path / "heatmap_recall_pants.csv").exists()


def test_gradcheck_ops_only(capsys):
    assert dispatch(["gradcheck", "--seeds", "1", "--no-unet"]) == 0
    assert "all gradients within 0.0001" in capsys.readouterr().out


def test_console_script_module(tmp_path):
    r = subprocess.run([sys.executable, "-m", "csolab", "rf"], capture_output=True, text=True)
    assert r.returncode == 0 and "output_rf=96" in r.stdout


def test_grid_summary(tmp_path, capsys):
    assert dispatch(["grid", "--regime", "strict", *TINY, "--init-seeds", "0,1", "--split-seeds", "0",
                     "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:2] == ["Config.", "D"] and out[1].startswith("T-Strict") and out[1].endswith("/2")
    assert (tmp_path / "summary.csv").exists()
    assert len(list(tmp_path.glob("*/record.json"))) == 2
