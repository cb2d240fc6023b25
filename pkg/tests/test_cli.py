import json
import time
from pathlib import Path

import numpy as np
import pytest

from shefields.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from shefields.io import read_csv

TAILS = """
experiment = tails
paths = 200
sigma.kind = pam
grid.dx = 0.05
grid.dt = 1e-3
"""

CORRELATION = """
experiment = correlation_length
paths = 200
sigma.kind = constant
grid.dx = 0.05
grid.dt = 1e-3
grid.length = 12.8
params.epsilon = 0.1, 0.05
params.delta = 0.05
"""


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _data_files(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir()) if p.name != "manifest.json"}


def test_validate(tmp_path, capsys):
    assert main(["validate", _write(tmp_path, TAILS)]) == EXIT_OK
    assert "experiment=tails" in capsys.readouterr().out
    bad = _write(tmp_path, TAILS + "grid.dt = 1e-2\n", "bad.cfg")
    assert main(["validate", bad]) == EXIT_INVALID


def test_run_is_deterministic_across_worker_counts(tmp_path):
    cfg = _write(tmp_path, TAILS)
    assert main(["run", cfg, "--out", str(tmp_path / "a"), "--workers", "1"]) == EXIT_OK
    assert main(["run", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == EXIT_OK
    assert _data_files(tmp_path / "a") == _data_files(tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("wall_time_s")
    mb.pop("wall_time_s")
    assert ma == mb


def test_manifest_lists_every_output(tmp_path):
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, TAILS), "--out", str(out)]) == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert set(m) >= {"config_hash", "experiment", "code_version", "wall_time_s", "status", "files", "censored"}
    assert m["status"] == "ok" and m["hard_invariant_failures"] == []
    names = {f["name"] for f in m["files"]}
    assert names == set(_data_files(out))
    import hashlib

    for f in m["files"]:
        assert hashlib.sha256((out / f["name"]).read_bytes()).hexdigest() == f["sha256"]
    assert (out / "config.canonical.txt").read_bytes()
    assert m["config_hash"] == hashlib.sha256((out / "config.canonical.txt").read_bytes()).hexdigest()


def test_seed_override_changes_outputs(tmp_path):
    cfg = _write(tmp_path, TAILS)
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--seed-override", "9"])
    assert (tmp_path / "a" / "tails.json").read_bytes() != (tmp_path / "b" / "tails.json").read_bytes()


def test_invalid_config_writes_nothing(tmp_path, capsys):
    text = "experiment = islands\nsigma.kind = pam\nparams.a = 1.0\nparams.b = 2.0\nparams.R = 64\n"
    out = tmp_path / "none"
    assert main(["run", _write(tmp_path, text), "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()
    assert "1 < a < b" in capsys.readouterr().err


def test_failure_leaves_marker(tmp_path):
    text = (
        "experiment = sojourn\npaths = 5\nsigma.kind = constant\ngrid.dx = 0.05\ngrid.dt = 1e-3\n"
        "params.alpha = 0.25\nparams.calibration_paths = 5\n"
    )
    out = tmp_path / "f"
    assert main(["run", _write(tmp_path, text), "--out", str(out)]) == EXIT_FAILED
    assert (out / "FAILED").exists()
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "error" and "QuantileResolutionError" in m["error"]


def test_correlation_length_tiny_scale(tmp_path):
    out = tmp_path / "cl"
    start = time.perf_counter()
    assert main(["run", _write(tmp_path, CORRELATION), "--out", str(out)]) == EXIT_OK
    assert time.perf_counter() - start < 60
    m = json.loads((out / "manifest.json").read_text())
    names = {f["name"] for f in m["files"]}
    assert {"coupling.csv", "witness.json", "correlation_length.csv"} <= names
    witnesses = json.loads((out / "witness.json").read_text())["witnesses"]
    assert all(w["cone_exact"] for w in witnesses if w["result"]["lag"] is not None)
    _, header, rows = read_csv(out / "correlation_length.csv")
    assert header[:3] == ["epsilon", "delta", "lag"]


def test_dump_and_replay(tmp_path, capsys):
    path = tmp_path / "noise.bin"
    assert main(["dump-noise", str(path), "--length", "3", "--dx", "0.05", "--t", "0.1", "--dt", "1e-3", "--seed", "4"]) == 0
    capsys.readouterr()
    assert main(["replay", str(path), "--sigma", "pam", "--out", str(tmp_path / "r")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["matches_seed"] and info["seed"] == 4
    assert info["sample_variance"] == pytest.approx(5e-5, rel=0.1)
    _, _, data = read_csv(tmp_path / "r" / "snapshot.csv")
    assert data[0, 1] == info["value_at_0"]


def test_replay_detects_tampering(tmp_path, capsys):
    from shefields.noise import DUMP_HEADER

    path = tmp_path / "noise.bin"
    main(["dump-noise", str(path), "--length", "1", "--dx", "0.1", "--t", "0.01", "--dt", "0.01"])
    raw = bytearray(path.read_bytes())
    raw[DUMP_HEADER.size] ^= 1
    path.write_bytes(bytes(raw))
    capsys.readouterr()
    main(["replay", str(path)])
    assert json.loads(capsys.readouterr().out)["matches_seed"] is False


@pytest.mark.parametrize(
    "text",
    [
        "experiment = comparison\npaths = 3\nsigma.kind = pam\ngrid.dx = 0.05\ngrid.dt = 1e-3\n",
        "experiment = coupling\npaths = 100\nsigma.kind = pam\ngrid.dx = 0.1\ngrid.dt = 1e-2\nparams.beta = 1, 2\nparams.n = 1, 2\n",
        "experiment = small_ball\nt = 0.3\npaths = 100\nsigma.kind = pam\ngrid.dx = 0.05\ngrid.dt = 1e-3\nparams.eps = 0.5, 0.1\n",
        "experiment = exceedance\npaths = 5\nsigma.kind = constant\ngrid.dx = 0.1\ngrid.dt = 1e-2\nparams.alpha = 0.2\nparams.R = 16, 32\n",
        "experiment = islands\npaths = 5\nsigma.kind = pam\ngrid.dx = 0.1\ngrid.dt = 1e-2\nparams.a = 1.2\nparams.b = 2\nparams.R = 16, 32\n",
        "experiment = good_index\npaths = 5\nsigma.kind = pam\ngrid.dx = 0.1\ngrid.dt = 1e-2\nparams.a = 1.2\nparams.b = 2\nparams.R = 64\n",
        "experiment = sojourn\npaths = 30\nsigma.kind = constant\ngrid.dx = 0.1\ngrid.dt = 1e-2\nparams.alpha = 0.25\nparams.blocks = 4, 8\n",
    ],
)
def test_every_experiment_runs(tmp_path, text):
    out = tmp_path / "o"
    code = main(["run", _write(tmp_path, text), "--out", str(out)])
    m = json.loads((out / "manifest.json").read_text())
    assert code == EXIT_OK, m
    assert len(m["files"]) >= 2
