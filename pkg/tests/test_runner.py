import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from qkdbench import runner
from qkdbench.cli import main as cli_main


def resolve(preset, **kwargs):
    doc = runner.load_presets()
    return runner.resolve_config(doc, preset, **kwargs)


class TestConfigResolution:
    def test_presets_exist(self):
        doc = runner.load_presets()
        assert set(doc["presets"]) == {"fig2", "fig3", "fig4", "fig5",
                                       "fig6", "fig7", "table3"}

    def test_defaults_valid(self):
        for preset in runner.load_presets()["presets"]:
            config, _ = resolve(preset)
            assert runner.validate_config(config) == []

    def test_unknown_preset(self):
        with pytest.raises(runner.ConfigError):
            resolve("fig99")

    def test_override_applies(self):
        config, _ = resolve("fig2", overrides=["signal.mu=0.3"])
        assert config["signal"]["mu"] == 0.3

    def test_override_unknown_path_rejected(self):
        with pytest.raises(runner.ConfigError):
            resolve("fig2", overrides=["signal.muu=0.3"])

    def test_seed_override(self):
        config, _ = resolve("fig2", seed=99)
        assert config["seed"] == 99


class TestValidateConfig:
    def test_duty_cycle_violation(self):
        config, _ = resolve("fig2", overrides=["signal.gate_width_ns=50"])
        diagnostics = runner.validate_config(config)
        assert any("duty cycle" in d for d in diagnostics)

    def test_decoy_probability_sum(self):
        config, _ = resolve("fig2", overrides=["decoy.p3=0.2"])
        diagnostics = runner.validate_config(config)
        assert any("sum" in d for d in diagnostics)

    def test_mu_range(self):
        config, _ = resolve("fig2", overrides=["signal.mu=3.0"])
        diagnostics = runner.validate_config(config)
        assert any("photon number" in d for d in diagnostics)

    def test_table_defaults_pass(self):
        config, _ = resolve("fig2")
        assert runner.validate_config(config) == []


class TestSweep:
    def test_fig2_rows_and_columns(self, tmp_path):
        manifest = runner.run_preset(
            "fig2", tmp_path, overrides=["sim.n_pulses=100000"])
        lines = Path(manifest["csv"]).read_text().splitlines()
        header = lines[0].split(",")
        assert header[0] == "loss_channel_db"
        assert "ana_skr_bps" in header and "sim_qber" in header
        assert len(lines) == 1 + 18
        assert not any(line.endswith(",") and "Error" in line
                       for line in lines[1:])

    def test_point_failure_recorded_not_raised(self):
        config, spec = resolve("fig2")
        spec = {"kind": "sweep",
                "axis": {"path": "loss.channel_db", "values": [10.0, -1e9]}}
        header, rows = runner.run_sweep(config, spec)
        assert rows[0]["error"] == ""
        assert rows[1]["error"] != ""

    def test_series_grid_ordering(self):
        config, spec = resolve("fig3")
        config["sim"]["enabled"] = False
        header, rows = runner.run_sweep(config, spec)
        assert header[0] == "loss_channel_db"
        series = [row["loss_channel_db"] for row in rows]
        assert series == sorted(series) or series[0] == 10.0
        # 3 series x 17 axis points
        assert len(rows) == 51

    def test_fig4_reference_normalisation(self):
        config, spec = resolve("fig4")
        header, rows = runner.run_sweep(config, spec)
        ten = [r for r in rows if r["loss_channel_db"] == 10.0]
        nskr = np.array([r["ana_nskr"] for r in ten])
        gates = np.array([r["signal_gate_width_ns"] for r in ten])
        peak_gate = gates[int(np.argmax(nskr))]
        assert 1.0 < peak_gate < 7.0  # interior peak, not the grid edge

    def test_workers_do_not_change_rows(self):
        config, spec = resolve("fig2", overrides=["sim.n_pulses=50000"])
        h1, rows1 = runner.run_sweep(config, spec, workers=1)
        h3, rows3 = runner.run_sweep(config, spec, workers=3)
        assert h1 == h3

        def cells(rows):
            return [[runner.format_cell(r.get(c)) for c in h1] for r in rows]

        assert cells(rows1) == cells(rows3)


class TestEmission:
    def test_rerun_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            runner.run_preset("fig5", out, overrides=["sim.n_pulses=50000"])
        for name in ("fig5.csv", "fig5.png", "fig5_summary.json"):
            ha = hashlib.md5((a / name).read_bytes()).hexdigest()
            hb = hashlib.md5((b / name).read_bytes()).hexdigest()
            assert ha == hb, name

    def test_summary_schema(self, tmp_path):
        manifest = runner.run_preset("table3", tmp_path)
        doc = json.loads(Path(manifest["summary"]).read_text())
        assert doc["preset"] == "table3"
        assert doc["points"]
        assert "config" in doc and "seed" in doc["config"] or "seed" in doc

    def test_pass_profile_columns(self, tmp_path):
        manifest = runner.run_preset("fig7", tmp_path)
        header = Path(manifest["csv"]).read_text().splitlines()[0]
        assert header == ("t_s,elevation_deg,slant_range_km,"
                          "radial_velocity_km_s,quantum_loss_db,beacon_loss_db")

    def test_projection_columns(self, tmp_path):
        manifest = runner.run_preset("fig6", tmp_path)
        lines = Path(manifest["csv"]).read_text().splitlines()
        assert lines[0].split(",")[:3] == ["loss_channel_db", "ana_qber",
                                           "ana_skr_bps"]
        first = lines[1].split(",")
        assert float(first[3]) == pytest.approx(float(first[0]) + 9.3)


class TestCli:
    def test_run_ok(self, tmp_path, capsys):
        rc = cli_main(["run", "--preset", "table3", "--out", str(tmp_path)])
        assert rc == 0
        assert "table3.csv" in capsys.readouterr().out

    def test_unknown_preset_is_config_error(self, tmp_path):
        rc = cli_main(["run", "--preset", "nope", "--out", str(tmp_path)])
        assert rc == 1

    def test_invalid_override_is_config_error(self, tmp_path):
        rc = cli_main(["run", "--preset", "table3", "--out", str(tmp_path),
                       "--set", "signal.gate_width_ns=50"])
        assert rc == 1

    def test_validate_command(self, tmp_path):
        config_file = tmp_path / "presets.yaml"
        from importlib import resources
        config_file.write_text(
            resources.files("qkdbench").joinpath("presets.yaml").read_text())
        assert cli_main(["validate", "--config", str(config_file)]) == 0
        broken = config_file.read_text().replace("mu: 0.1", "mu: -1.0")
        config_file.write_text(broken)
        assert cli_main(["validate", "--config", str(config_file)]) == 1

    def test_pass_command(self, tmp_path):
        rc = cli_main(["pass", "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "fig7.csv").exists()

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("QKDBENCH_THREADS", "5")
        assert runner.default_workers() == 5
        monkeypatch.setenv("QKDBENCH_THREADS", "zebra")
        with pytest.raises(runner.ConfigError):
            runner.default_workers()
        monkeypatch.delenv("QKDBENCH_THREADS")
        assert runner.default_workers() == 1
