import json

import numpy as np
import pytest

from curvedks.cli import EXIT_BAD_CONFIG, EXIT_CHECK_FAILED, EXIT_OK, load_config, main


def _write_config(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def _run(tmp_path, command, payload, monkeypatch):
    outdir = tmp_path / "out"
    payload = dict(payload)
    payload["output_dir"] = str(outdir)
    cfg = _write_config(tmp_path, f"{command.replace('-', '_')}.json", payload)
    monkeypatch.delenv("CURVEDKS_OUTPUT_DIR", raising=False)
    rc = main([command, "--config", cfg])
    return rc, outdir


FAST_IDENTITIES = {
    "grid": {"half_width": 60.0, "n": 256},
    "double_grid": {"half_width": 60.0, "n": 128},
    "lambdas": [1.0],
    "tolerance": 5e-2,
}


def test_identities_pass(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "identities", FAST_IDENTITIES, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "identities.json").read_text())
    assert payload["identities"][0]["pass"]
    assert "config_hash" in payload


def test_identities_fail_on_coarse_grid(tmp_path, monkeypatch):
    bad = dict(FAST_IDENTITIES)
    bad["grid"] = {"half_width": 400.0, "n": 64}
    bad["double_grid"] = {"half_width": 400.0, "n": 64}
    bad["tolerance"] = 1e-3
    rc, outdir = _run(tmp_path, "identities", bad, monkeypatch)
    assert rc == EXIT_CHECK_FAILED
    payload = json.loads((outdir / "identities.json").read_text())
    assert not payload["identities"][0]["pass"]


def test_identities_coulomb_value_at_lambda_e(tmp_path, monkeypatch):
    cfg = dict(FAST_IDENTITIES)
    cfg["lambdas"] = [float(np.e)]
    rc, outdir = _run(tmp_path, "identities", cfg, monkeypatch)
    payload = json.loads((outdir / "identities.json").read_text())
    got = payload["identities"][0]["coulomb"]["closed_form"]
    assert got == pytest.approx(-0.238732, abs=1e-6)


def test_unknown_key_rejected(tmp_path, monkeypatch):
    cfg = dict(FAST_IDENTITIES)
    cfg["lambduhs"] = [1.0]
    rc, _ = _run(tmp_path, "identities", cfg, monkeypatch)
    assert rc == EXIT_BAD_CONFIG


def test_invalid_json_rejected(tmp_path, monkeypatch):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["identities", "--config", str(p)]) == EXIT_BAD_CONFIG


def test_residual_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "residual",
                      {"grid": {"half_width": 30.0, "n": 128}}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "residual.json").read_text())
    assert payload["f_constant"] == pytest.approx(np.log(8.0), abs=0.05)


def test_obstruction_verdict(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "obstruction",
                      {"phi": {"kind": "radial_bump", "amplitude": 0.05,
                               "support_radius": 2.0},
                       "n_lat": 64, "n_lon": 128}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "obstruction.json").read_text())
    assert payload["verdict"] == "NONZERO OBSTRUCTION"


def test_obstruction_refuses_flat(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "obstruction", {"phi": {"kind": "zero"}}, monkeypatch)
    assert rc == EXIT_BAD_CONFIG
    payload = json.loads((outdir / "obstruction.json").read_text())
    assert payload["verdict"] == "REFUSED"


def test_envelope_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "envelope",
                      {"grid": {"half_width": 60.0, "n": 256},
                       "annulus_R": 20.0}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "envelope.json").read_text())
    assert payload["tail_slope"] == pytest.approx(-4.0, abs=0.15)


def test_virial_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "virial",
                      {"grid": {"half_width": 40.0, "n": 256},
                       "radii": [5.0, 10.0, 15.0]}, monkeypatch)
    assert rc == EXIT_OK
    lines = (outdir / "virial.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "R,I1,I2,I3,closure"
    assert len(lines) == 5


def test_flow_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "flow",
                      {"grid": {"half_width": 12.0, "n": 96},
                       "t_end": 0.02, "snapshot_every": 2}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "flow.json").read_text())
    assert payload["mass_drift"] <= 1e-10
    diag_lines = (outdir / "flow_diagnostics.csv").read_text().splitlines()
    assert diag_lines[0].startswith("# config_hash=")
    assert (outdir / "flow_snapshot_0000.csv").exists()


def test_flow_virial_rate_reported(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "flow",
                      {"grid": {"half_width": 15.0, "n": 256},
                       "mass": 4 * np.pi, "t_end": 0.05,
                       "snapshot_every": 2}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "flow.json").read_text())
    assert payload["dW_dt_expected"] == pytest.approx(8 * np.pi, rel=1e-12)
    assert payload["dW_dt"] == pytest.approx(8 * np.pi, rel=0.05)


def test_energy_scan_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "energy-scan",
                      {"m": 4 * np.pi,
                       "lambdas": [0.05, 0.2, 0.8, 3.2, 12.8]}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "energy_scan.json").read_text())
    assert payload["slope_fit"] == pytest.approx(-4 * np.pi, rel=0.05)


def test_deficit_subcommand(tmp_path, monkeypatch):
    rc, outdir = _run(tmp_path, "deficit",
                      {"grid": {"half_width": 50.0, "n": 256}}, monkeypatch)
    assert rc == EXIT_OK
    payload = json.loads((outdir / "deficit.json").read_text())
    assert abs(payload["deficit"]) < 2e-2


def test_flow_cfl_failure_exit_code(tmp_path, monkeypatch):
    # a dt far above the stability bound is a numerical failure (exit 3)
    rc, _ = _run(tmp_path, "flow",
                 {"grid": {"half_width": 12.0, "n": 96},
                  "t_end": 0.02, "dt": 1.0}, monkeypatch)
    assert rc == 3


def test_output_dir_env_override(tmp_path, monkeypatch):
    override = tmp_path / "elsewhere"
    monkeypatch.setenv("CURVEDKS_OUTPUT_DIR", str(override))
    cfg = _write_config(tmp_path, "identities.json",
                        {**FAST_IDENTITIES, "output_dir": str(tmp_path / "ignored")})
    rc = main(["identities", "--config", cfg])
    assert rc == EXIT_OK
    assert (override / "identities.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_default_config_loads():
    cfg, h = load_config(None, "identities")
    assert cfg["tolerance"] == 1e-2
    assert len(h) == 16


def test_determinism_byte_identical(tmp_path, monkeypatch):
    outputs = []
    for run in ("a", "b"):
        outdir = tmp_path / run
        cfg = _write_config(tmp_path, f"cfg_{run}.json",
                            {**FAST_IDENTITIES, "output_dir": str(outdir)})
        monkeypatch.delenv("CURVEDKS_OUTPUT_DIR", raising=False)
        assert main(["identities", "--config", cfg]) == EXIT_OK
        outputs.append((outdir / "identities.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_determinism_scan_csv(tmp_path, monkeypatch):
    outputs = []
    payload = {"m": 8 * np.pi, "lambdas": [0.05, 0.5, 5.0]}
    for run in ("a", "b"):
        outdir = tmp_path / run
        cfg = _write_config(tmp_path, f"scan_{run}.json",
                            {**payload, "output_dir": str(outdir)})
        monkeypatch.delenv("CURVEDKS_OUTPUT_DIR", raising=False)
        assert main(["energy-scan", "--config", cfg]) == EXIT_OK
        outputs.append((outdir / "energy_scan.csv").read_bytes())
    assert outputs[0] == outputs[1]
