import csv
import json
import subprocess
import sys
import time

import pytest

from palmsim.cli import main, selftest_checks
from palmsim.io import CSV_BASE_COLUMNS


def _run(*argv):
    return main([str(a) for a in argv])


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_selftest_subprocess_fast():
    t = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "palmsim.cli", "selftest"], capture_output=True, text=True)
    elapsed = time.perf_counter() - t
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert elapsed < 10


def test_selftest_checks_all_pass():
    checks = selftest_checks()
    assert checks and all(ok for _, ok, _ in checks)


def test_generate_writes_one_row_per_sample(tmp_path):
    assert _run("generate", "--kind", "poisson", "--n-samples", 100, "--out", tmp_path) == 0
    rows = _rows(tmp_path / "summary.csv")
    assert rows[0][:4] == CSV_BASE_COLUMNS
    assert len(rows) == 101
    assert (tmp_path / "ensemble.txt").exists()


def test_manifest_echoes_config(tmp_path):
    _run("generate", "--kind", "binomial", "--count", 5, "--n-samples", 10, "--seed", 9, "--out", tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "generate"
    assert man["config"]["seed"] == 9
    assert man["config"]["n_samples"] == 10
    assert man["config"]["spec"]["kind"] == "binomial"
    assert man["config"]["spec"]["count"] == 5
    assert {"numpy", "scipy", "palmsim", "python"} <= set(man["versions"])


def test_manifest_reruns_identically(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _run("generate", "--kind", "poisson", "--dim", 2, "--window", 4, "--n-samples", 20, "--seed", 4, "--out", a)
    cfg = json.loads((a / "manifest.json").read_text())["config"]
    spec = cfg["spec"]
    _run("generate", "--kind", spec["kind"], "--dim", spec["dim"], "--window", spec["window"],
         "--n-samples", cfg["n_samples"], "--seed", cfg["seed"], "--out", b)
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[generator]\nkind = poisson\nintensity = 0.5\n\n[run]\nn_samples = 7\nseed = 3\n")
    out = tmp_path / "out"
    assert _run("generate", "--config", cfg, "--n-samples", 12, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())["config"]
    assert man["n_samples"] == 12
    assert man["spec"]["intensity"] == 0.5
    assert len(_rows(out / "summary.csv")) == 13


def test_negative_intensity_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[generator]\nkind = poisson\nintensity = -1\n")
    assert _run("generate", "--config", cfg, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "intensity" in err and "line 3" in err


def test_negative_intensity_flag_exit_2(tmp_path, capsys):
    assert _run("generate", "--intensity", -2, "--out", tmp_path) == 2
    assert "intensity" in capsys.readouterr().err


@pytest.mark.parametrize("argv, fieldname", [
    (["generate", "--n-samples", 1], "n_samples"),
    (["generate", "--kind", "bogus"], "kind"),
    (["palm", "--kind", "poisson", "--transforms", "density_palm"], "transforms"),
    (["generate", "--transforms", "teleport"], "transforms"),
    (["test-mass-stat", "--level", 1.5], "level"),
])
def test_invalid_configuration_exit_2(tmp_path, capsys, argv, fieldname):
    assert _run(*argv, "--out", tmp_path) == 2
    assert fieldname in capsys.readouterr().err


def test_unknown_key_in_config(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nseed = 1\nflavour = mint\n")
    assert _run("generate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "flavour" in capsys.readouterr().err


def test_same_seed_byte_identical(tmp_path):
    args = ["test-mass-stat", "--n-samples", 120, "--n-list", "1", "--n-perm", 99, "--seed", 5]
    _run(*args, "--out", tmp_path / "a")
    _run(*args, "--out", tmp_path / "b", "--threads", 2)
    for name in ("summary.csv", "report.txt", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mass_stat_palm_poisson_consistent(tmp_path):
    code = _run("test-mass-stat", "--kind", "palm_poisson", "--n-samples", 400, "--n-list", "1,2",
                "--n-perm", 499, "--seed", 1, "--out", tmp_path)
    assert code == 0
    rec = json.loads((tmp_path / "report.json").read_text())
    assert rec["conclusion"] == "consistent with mass-stationarity"
    assert rec["verdict"] == "pass"
    for key in ("statistic", "p_value", "threshold", "verdict", "n", "seed"):
        assert key in rec
    assert "consistent" in (tmp_path / "report.txt").read_text()


def test_mass_stat_control_exit_1(tmp_path):
    code = _run("test-mass-stat", "--kind", "negative_control", "--control", "a", "--grid", 4,
                "--n-samples", 1000, "--seed", 2, "--out", tmp_path)
    assert code == 1


def test_roundtrip_poisson_exit_0(tmp_path):
    assert _run("roundtrip", "--kind", "poisson", "--n-samples", 400, "--n-perm", 499, "--seed", 3,
                "--out", tmp_path) == 0


def test_shift_invariance_example1_extend_runs(tmp_path):
    code = _run("shift-invariance", "--mode", "example1", "--extend", "--grid", 4, "--window", 4,
                "--n-box", 2, "--n-samples", 60, "--r-grid", "0.5", "--n-perm", 99, "--seed", 4, "--out", tmp_path)
    assert code in (0, 1)
    rec = json.loads((tmp_path / "report.json").read_text())
    assert rec["title"] == "shift-invariance (example1)"
    assert any(t["name"].startswith("r=0.5:background_") for t in rec["tests"])


def test_palm_then_invert_from_file(tmp_path):
    gen, palm, inv = tmp_path / "g", tmp_path / "p", tmp_path / "i"
    assert _run("generate", "--kind", "poisson", "--n-samples", 30, "--out", gen) == 0
    assert _run("palm", "--input", gen / "ensemble.txt", "--out", palm) == 0
    assert _run("invert", "--input", palm / "ensemble.txt", "--out", inv) == 0
    weights = [float(r[1]) for r in _rows(palm / "summary.csv")[1:]]
    assert len(weights) == 30 and all(w > 0 for w in weights)


def test_missing_input_exit_2(tmp_path, capsys):
    assert _run("palm", "--input", tmp_path / "nope.txt", "--out", tmp_path) == 2
    assert "input" in capsys.readouterr().err


def test_sparse_window_flagged(tmp_path, capsys):
    assert _run("generate", "--intensity", 0.1, "--n-samples", 20, "--out", tmp_path) == 0
    assert "typical atom spacings" in capsys.readouterr().err
    assert _run("generate", "--intensity", 2, "--n-samples", 20, "--out", tmp_path) == 0
    assert "spacings" not in capsys.readouterr().err
