from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from prescriptor.cli import run


def _run(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_units_check_prints_chain(capsys):
    code, out, _ = _run(capsys, "units", "check", "--channel", "II")
    assert code == 0
    assert "channel II-Spin" in out and "Phi0^2" in out and "-> PASS" in out


def test_units_check_all_channels(capsys):
    code, out, _ = _run(capsys, "units", "check")
    assert code == 0
    assert out.count("-> PASS") == 6


def test_budget_plan_preset(capsys):
    code, out, _ = _run(capsys, "budget", "plan", "--preset", "paper-b1", "--t1", "1ms")
    assert code == 0
    assert "Gamma_total = 1000 s^-1" in out
    for cid, rate in (("I-TLS", 400), ("II-Spin", 200), ("III-Seam", 200), ("IVb-QPEnv", 100), ("V-Phonon", 100)):
        assert any(cid in line and f" {rate} s^-1" in line for line in out.splitlines())


def test_budget_without_allocations_is_a_domain_error(capsys, tmp_path):
    spec = tmp_path / "x.budget"
    spec.write_text("[budget]\nt1 = 1ms\n")
    code, _, err = _run(capsys, "budget", "plan", spec)
    assert code == 1 and "explicitly" in err


def test_budget_feasibility(capsys, fixtures):
    b = fixtures / "budget"
    code, out, _ = _run(capsys, "budget", "feasibility", b / "b1.budget", "--measured", b / "measured.csv")
    assert code == 0
    assert "binding channel: I-TLS" in out and "decision: NO-GO" in out


def test_protocol_predict_then_evaluate(capsys, fixtures, tmp_path):
    p = fixtures / "protocol"
    sealed = tmp_path / "sealed.design"
    code, _, _ = _run(capsys, "protocol", "predict", p / "seam.design", "--committed-at",
                      "2026-03-01T09:00:00+00:00", "-o", sealed)
    assert code == 0
    assert sealed.read_text() == (p / "seam_sealed.design").read_text()
    code, out, _ = _run(capsys, "protocol", "evaluate", sealed, p / "meas_column.csv")
    assert code == 0 and "verdict: Falsified(column)" in out
    code, out, _ = _run(capsys, "protocol", "evaluate", sealed, p / "meas_exact.csv")
    assert "verdict: Supported" in out


@pytest.mark.parametrize("design", ["seam.design", "tampered_sealed.design", "unsealed_with_measurements.design"])
def test_protocol_violations_exit_3(capsys, fixtures, design):
    p = fixtures / "protocol"
    if design == "unsealed_with_measurements.design":
        code, _, err = _run(capsys, "protocol", "predict", p / design)
    else:
        code, _, err = _run(capsys, "protocol", "evaluate", p / design, p / "meas_exact.csv")
    assert code == 3
    assert "protocol violation" in err


@pytest.mark.parametrize("argv", [["nonsense"], ["budget", "frobnicate"], ["stats", "mu2"], []])
def test_usage_errors_exit_2(capsys, argv):
    assert run(argv) == 2


def test_missing_file_exit_1(capsys, tmp_path):
    code, _, err = _run(capsys, "stats", "rms", tmp_path / "nope.csv")
    assert code == 1 and "error" in err


def test_mds_commands(capsys, fixtures, tmp_path):
    golden = fixtures / "mds" / "golden" / "05_multichannel.mds"
    assert _run(capsys, "mds", "validate", golden)[0] == 0
    code, out, _ = _run(capsys, "mds", "validate", fixtures / "mds" / "deficient" / "missing_g.mds")
    assert code == 1 and "Geometry Coupling Functionals absent" in out
    assert _run(capsys, "mds", "validate", fixtures / "mds" / "deficient" / "qp_no_parity.mds",
                "--strictness", "trend")[0] == 0
    bad = tmp_path / "bad.mds"
    bad.write_text("[rho]\nI.mu2 = 1 1\n")
    code, out, _ = _run(capsys, "mds", "parse", bad)
    assert code == 1 and "2:" in out
    messy = tmp_path / "messy.mds"
    messy.write_text(golden.read_text().replace("[o]", "[o]\n\n"))
    assert _run(capsys, "mds", "fmt", messy, "--check")[0] == 1
    assert _run(capsys, "mds", "fmt", messy, "--in-place")[0] == 0
    assert _run(capsys, "mds", "fmt", messy, "--check")[0] == 0


def test_out_dir_manifest_and_csv_units_row(capsys, fixtures, tmp_path):
    f = fixtures / "stats" / "curvature_heavytail.csv"
    code, _, _ = _run(capsys, "stats", "mu2", f, "--resamples", "200", "--out", tmp_path / "o")
    assert code == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["subcommand"] == "stats mu2" and m["seed"] == 0 and m["options"]["resamples"] == 200
    assert list(m["inputs"].values())[0] == __import__("hashlib").sha256(f.read_bytes()).hexdigest()
    assert "report.txt" in m["outputs"]
    for name in m["outputs"]:
        if name.endswith(".csv"):
            lines = (tmp_path / "o" / name).read_text().splitlines()
            assert len(lines[1].split(",")) == len(lines[0].split(","))


def test_outputs_are_byte_identical_across_runs(capsys, fixtures, tmp_path):
    args = ["lab", "sweep", "--shape", "12,12", "--densities", "0.5,2", "--correlations", "0,0.5",
            "--seeds", "0,1"]
    _run(capsys, *args, "--out", tmp_path / "a")
    _run(capsys, *args, "--workers", "2", "--out", tmp_path / "b")
    for name in ("report.txt", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_and_flag_precedence(capsys, fixtures, tmp_path):
    f = fixtures / "stats" / "curvature_heavytail.csv"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"resamples": 150, "seed": 3}))
    _, from_cfg, _ = _run(capsys, "stats", "mu2", f, "--config", cfg)
    assert "150 resamples, seed 3" in from_cfg
    _, flagged, _ = _run(capsys, "stats", "mu2", f, "--config", cfg, "--seed", "4")
    assert "150 resamples, seed 4" in flagged


@pytest.mark.skipif(shutil.which("prescriptor") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["prescriptor", "units", "check", "--channel", "III"], capture_output=True, text=True)
    assert res.returncode == 0 and "III-Seam" in res.stdout
    res = subprocess.run([sys.executable, "-m", "prescriptor.cli", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2
