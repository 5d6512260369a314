"""Experiment orchestration: presets, sweeps and figure-dataset emission.

A run resolves a named preset against the shared defaults, expands its
axis (and optional series) grid into per-point configurations, evaluates
the analytic model for every point and optionally the Monte Carlo
pipeline, and writes a CSV, a rendered PNG and a JSON summary per figure.
Identical seeds give byte-identical outputs for any worker count.
"""
from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import distill, orbitlink, photonsim
from .hdbcsync import ClockModel
from .qbermodel import SignalModel

SWEEP_COLUMNS = [
    "ana_signal_per_gate", "ana_noise_per_gate", "ana_esnr", "ana_qber",
    "ana_sifted_gain", "ana_skr_per_pulse", "ana_skr_bps", "ana_nskr",
    "sim_signal_per_gate", "sim_noise_per_gate", "sim_esnr",
    "sim_sifted_count", "sim_qber", "sim_qber_se", "sim_skr_per_pulse",
    "sim_skr_bps", "sim_nskr", "sim_leakage_bits", "error",
]

PASS_COLUMNS = ["t_s", "elevation_deg", "slant_range_km",
                "radial_velocity_km_s", "quantum_loss_db", "beacon_loss_db"]


class ConfigError(ValueError):
    """Invalid experiment configuration or preset reference."""


def load_presets(path: str | os.PathLike | None = None) -> dict:
    """Load the preset document (packaged default or an explicit file)."""
    if path is None:
        text = resources.files("qkdbench").joinpath("presets.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or "defaults" not in doc or "presets" not in doc:
        raise ConfigError("config must contain 'defaults' and 'presets' sections")
    return doc


def apply_override(config: dict, path: str, value) -> None:
    """Set a dotted-path leaf that already exists in the config."""
    parts = path.split(".")
    node = config
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config section {part!r} in path {path!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config parameter {path!r}")
    node[parts[-1]] = value


def resolve_config(doc: dict, preset_name: str, seed: int | None = None,
                   overrides: list[str] | None = None) -> tuple[dict, dict]:
    """Resolved (config, preset_spec) for one preset.

    CLI overrides are `path=value` strings whose values parse as YAML
    scalars.
    """
    if preset_name not in doc["presets"]:
        raise ConfigError(f"unknown preset {preset_name!r}; available: "
                          f"{', '.join(sorted(doc['presets']))}")
    config = copy.deepcopy(doc["defaults"])
    spec = copy.deepcopy(doc["presets"][preset_name])
    for path, value in (spec.get("set") or {}).items():
        apply_override(config, path, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        path, raw = item.split("=", 1)
        apply_override(config, path.strip(), yaml.safe_load(raw))
    if seed is not None:
        config["seed"] = int(seed)
    return config, spec


def axis_values(axis_spec: dict) -> list[float]:
    if "values" in axis_spec:
        return [float(v) for v in axis_spec["values"]]
    if "geomspace" in axis_spec:
        g = axis_spec["geomspace"]
        return [float(v) for v in np.geomspace(g["start"], g["stop"], int(g["num"]))]
    if "linspace" in axis_spec:
        g = axis_spec["linspace"]
        return [float(v) for v in np.linspace(g["start"], g["stop"], int(g["num"]))]
    raise ConfigError("axis needs 'values', 'geomspace' or 'linspace'")


# ---------------------------------------------------------------------------
# Config -> model objects

def build_signal(config: dict) -> SignalModel:
    loss = config["loss"]
    noise = config["noise"]
    sig = config["signal"]
    return SignalModel(
        mu=float(sig["mu"]),
        pulse_fwhm_ns=float(sig["pulse_fwhm_ns"]),
        rep_rate_hz=float(sig["rep_rate_hz"]),
        noise_rate_hz=float(noise["background_hz"]) + float(noise["dark_hz"]),
        total_loss_db=(float(loss["channel_db"]) + float(loss["system_db"])
                       + float(loss["detector_db"])),
        gate_width_ns=float(sig["gate_width_ns"]),
        timing_jitter_ns=float(sig["timing_jitter_ns"]),
    )


def build_sim_config(config: dict, seed: int,
                     n_pulses: int | None = None) -> photonsim.SimConfig:
    q = config["qber"]
    return photonsim.SimConfig(
        n_pulses=int(n_pulses if n_pulses is not None
                     else config["sim"]["n_pulses"]),
        signal=build_signal(config),
        e_sp=float(q["e_sp"]),
        e_pbs=float(q["e_pbs"]),
        e_a=float(q["e_a"]),
        basis_bias_px=float(config["protocol"]["basis_bias_px"]),
        dark_rate_hz=float(config["noise"]["dark_hz"]),
        seed=seed,
    )


def build_channel_models(config: dict) -> tuple[orbitlink.ChannelModel,
                                                orbitlink.ChannelModel]:
    rx = float(config["receiver"]["rx_diameter_m"])

    def channel(section: dict, kind: str) -> orbitlink.ChannelModel:
        beam = orbitlink.BeamConfig(
            wavelength_nm=float(section["wavelength_nm"]),
            divergence_half_angle_urad=float(section["divergence_urad"]),
            divergence_is_full_angle=bool(section["divergence_is_full_angle"]),
        )
        return orbitlink.ChannelModel(
            beam=beam, rx_diameter_m=rx, band=section["band"],
            tx_internal_db=float(section["tx_internal_db"]),
            turbulence_pointing_db=float(section["turbulence_pointing_db"]),
            ogs_internal_db=float(section["ogs_internal_db"]),
            detector_efficiency_db=float(section["detector_efficiency_db"]),
            channel_kind=kind,
        )

    return (channel(config["quantum_channel"], "quantum"),
            channel(config["beacon_channel"], "beacon"))


def build_orbit(config: dict) -> orbitlink.OrbitConfig:
    o = config["orbit"]
    return orbitlink.OrbitConfig(altitude_km=float(o["altitude_km"]),
                                 earth_radius_km=float(o["earth_radius_km"]),
                                 min_elevation_deg=float(o["min_elevation_deg"]))


def validate_config(config: dict) -> list[str]:
    """Invariant checks before any compute; returns human-readable
    diagnostics (empty list means valid)."""
    diagnostics: list[str] = []

    def check(fn, context: str) -> None:
        try:
            fn()
        except (ValueError, KeyError, TypeError) as exc:
            diagnostics.append(f"{context}: {exc}")

    check(lambda: build_signal(config), "signal")
    check(lambda: build_sim_config(config, seed=0, n_pulses=1), "sim")
    check(lambda: build_orbit(config), "orbit")
    check(lambda: build_channel_models(config), "channels")

    try:
        mu = float(config["signal"]["mu"])
        if not 0.0 < mu <= 2.0:
            diagnostics.append(f"signal: mean photon number {mu} outside (0, 2]")
    except (KeyError, TypeError) as exc:
        diagnostics.append(f"signal: {exc}")

    try:
        d = config["decoy"]
        p_sum = float(d["p1"]) + float(d["p2"]) + float(d["p3"])
        if abs(p_sum - 1.0) > 1e-9:
            diagnostics.append(f"decoy: intensity probabilities sum to {p_sum}, not 1")
        if not float(d["mu1"]) > float(d["mu2"]) > float(d["mu3"]) == 0.0:
            diagnostics.append("decoy: intensities must satisfy mu1 > mu2 > mu3 = 0")
    except (KeyError, TypeError) as exc:
        diagnostics.append(f"decoy: {exc}")

    try:
        f_ec = float(config["protocol"]["f_ec"])
        if f_ec < 1.0:
            diagnostics.append(f"protocol: f_ec {f_ec} must be >= 1")
    except (KeyError, TypeError) as exc:
        diagnostics.append(f"protocol: {exc}")
    return diagnostics


# ---------------------------------------------------------------------------
# Point evaluation

def _analytic_row(config: dict) -> tuple[distill.AnalyticPoint, dict]:
    proto = config["protocol"]
    q = config["qber"]
    point = distill.analytic_point(
        build_signal(config),
        e_sp=float(q["e_sp"]), e_pbs=float(q["e_pbs"]), e_a=float(q["e_a"]),
        basis_bias_px=float(proto["basis_bias_px"]),
        f_ec=float(proto["f_ec"]),
        noise_error_fraction=float(proto["noise_error_fraction"]),
    )
    row = {
        "ana_signal_per_gate": point.signal_per_gate,
        "ana_noise_per_gate": point.noise_per_gate,
        "ana_esnr": point.esnr,
        "ana_qber": point.qber,
        "ana_sifted_gain": point.sifted_gain,
        "ana_skr_per_pulse": point.rates.secure_rate_per_pulse,
        "ana_skr_bps": point.rates.skr_bps,
        "ana_nskr": point.rates.nskr,
    }
    return point, row


def _sim_row(config: dict, point_seed: int) -> dict:
    sim_config = build_sim_config(config, seed=point_seed)
    tx, detections = photonsim.simulate_experiment(sim_config)
    matched = distill.gate_and_match(
        detections, tx, ClockModel(offset_ps=0.0, drift=0.0),
        gate_width_ns=sim_config.signal.gate_width_ns,
        rep_rate_hz=sim_config.signal.rep_rate_hz)
    sifted = distill.sift(matched)
    rates, cascade = distill.measured_key_rates(
        sifted, sim_config, f_ec=float(config["protocol"]["f_ec"]),
        cascade_seed=point_seed)
    n = sim_config.n_pulses
    qber = sifted.measured_qber if sifted.sifted_count else float("nan")
    se = (float(np.sqrt(qber * (1.0 - qber) / sifted.sifted_count))
          if sifted.sifted_count and 0.0 <= qber <= 1.0 else float("nan"))
    sim_noise = sifted.gated_noise_clicks / n
    return {
        "sim_signal_per_gate": sifted.gated_signal_clicks / n,
        "sim_noise_per_gate": sim_noise,
        "sim_esnr": (sifted.gated_signal_clicks / sifted.gated_noise_clicks
                     if sifted.gated_noise_clicks else float("inf")),
        "sim_sifted_count": sifted.sifted_count,
        "sim_qber": qber,
        "sim_qber_se": se,
        "sim_skr_per_pulse": rates.secure_rate_per_pulse,
        "sim_skr_bps": rates.skr_bps,
        "sim_nskr": rates.nskr,
        "sim_leakage_bits": rates.leakage_bits,
    }


def _point_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((int(base_seed), index)).generate_state(1)[0])


def _full_period_reference(config: dict) -> float:
    """Sifted gain with the gate widened to the whole pulse period."""
    ref = copy.deepcopy(config)
    period_ns = 1e9 / float(config["signal"]["rep_rate_hz"])
    ref["signal"]["gate_width_ns"] = period_ns
    point, _ = _analytic_row(ref)
    return point.sifted_gain


def run_sweep(config: dict, spec: dict, workers: int = 1) -> tuple[list[str], list[dict]]:
    """Expand and evaluate a sweep/cases preset.

    Returns (header, rows); rows are ordered by series then axis value
    regardless of worker scheduling, and per-point failures are recorded
    in the row's error column.
    """
    kind = spec.get("kind", "sweep")
    jobs: list[tuple[dict, dict]] = []  # (labels, point config)
    header: list[str] = []

    if kind == "cases":
        header = ["case"]
        for case in spec["cases"]:
            cfg = copy.deepcopy(config)
            for path, value in (case.get("set") or {}).items():
                apply_override(cfg, path, value)
            jobs.append(({"case": case["label"]}, cfg))
    else:
        axis_path = spec["axis"]["path"]
        axis_name = axis_path.replace(".", "_")
        series_spec = spec.get("series")
        if series_spec:
            series_name = series_spec["path"].replace(".", "_")
            header = [series_name, axis_name]
            for s_val in [float(v) for v in series_spec["values"]]:
                for a_val in axis_values(spec["axis"]):
                    cfg = copy.deepcopy(config)
                    apply_override(cfg, series_spec["path"], s_val)
                    apply_override(cfg, axis_path, a_val)
                    jobs.append(({series_name: s_val, axis_name: a_val}, cfg))
        else:
            header = [axis_name]
            for a_val in axis_values(spec["axis"]):
                cfg = copy.deepcopy(config)
                apply_override(cfg, axis_path, a_val)
                jobs.append(({axis_name: a_val}, cfg))

    header = header + SWEEP_COLUMNS
    base_seed = int(config["seed"])
    use_ref = spec.get("nskr_reference") == "full_period"

    def evaluate(index_job) -> dict:
        index, (labels, cfg) = index_job
        row = dict(labels)
        for col in SWEEP_COLUMNS:
            row[col] = float("nan")
        row["error"] = ""
        try:
            _, ana = _analytic_row(cfg)
            row.update(ana)
            if use_ref:
                ref_gain = _full_period_reference(cfg)
                if ref_gain > 0:
                    row["ana_nskr"] = row["ana_skr_per_pulse"] / ref_gain
            if cfg["sim"]["enabled"]:
                sim = _sim_row(cfg, _point_seed(base_seed, index))
                row.update(sim)
                if use_ref and ref_gain > 0:
                    row["sim_nskr"] = row["sim_skr_per_pulse"] / ref_gain
        except Exception as exc:  # keep the sweep alive, record the failure
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    indexed = list(enumerate(jobs))
    if workers > 1 and len(indexed) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, indexed))
    else:
        rows = [evaluate(ij) for ij in indexed]
    return header, rows


def run_projection(config: dict, spec: dict, workers: int = 1) -> tuple[list[str], list[dict]]:
    """Base analytic loss sweep plus its mission-shifted overlay."""
    header, rows = run_sweep(config, {"kind": "sweep", "axis": spec["axis"]},
                             workers=workers)
    axis_name = spec["axis"]["path"].replace(".", "_")
    shifts = spec["shifts"]
    curve = [(row[axis_name], row["ana_skr_bps"]) for row in rows]
    projected = distill.mission_projection(curve, float(shifts["right_db"]),
                                           float(shifts["up_db"]))
    out_header = [axis_name, "ana_qber", "ana_skr_bps",
                  "projected_loss_db", "projected_skr_bps"]
    out_rows = []
    for row, (p_loss, p_skr) in zip(rows, projected):
        out_rows.append({
            axis_name: row[axis_name],
            "ana_qber": row["ana_qber"],
            "ana_skr_bps": row["ana_skr_bps"],
            "projected_loss_db": p_loss,
            "projected_skr_bps": p_skr,
        })
    return out_header, out_rows


def run_pass_profile(config: dict) -> tuple[list[str], list[dict]]:
    orbit = build_orbit(config)
    quantum, beacon = build_channel_models(config)
    timestep = float(config["pass_profile"]["timestep_s"])
    rows = orbitlink.pass_loss_rows(orbit, timestep, quantum, beacon)
    return PASS_COLUMNS, rows


def run_table3(config: dict) -> tuple[list[str], list[dict]]:
    """Mission-target parameter gains in dB."""
    improvements = [
        ("quantum_source_repetition_hz", "rate", 25e6, 400e6),
        ("intrinsic_qber", "info", 0.015, 0.005),
        ("dark_count_rate_hz", "rate", 2300.0, 2300.0),
        ("system_loss_db", "loss", 7.4, 3.8),
        ("detector_efficiency_loss_db", "loss", 2.2, 2.2),
        ("mean_photon_number", "mu", 0.1, 0.3744),
    ]
    rows = []
    total = 0.0
    for name, kind, old, new in improvements:
        gain = distill.gain_db(old, new, kind) if kind != "info" else float("nan")
        if kind != "info":
            total += gain
        rows.append({"description": name, "kind": kind, "this_work": old,
                     "mission_target": new, "gain_db": gain})
    rows.append({"description": "total", "kind": "sum", "this_work": float("nan"),
                 "mission_target": float("nan"), "gain_db": total})
    return ["description", "kind", "this_work", "mission_target", "gain_db"], rows


# ---------------------------------------------------------------------------
# Emission

def format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return ""
    return f"{v:.12g}"


def emit_figure_data(header: list[str], rows: list[dict], figure_id: str,
                     out_dir: str | os.PathLike) -> Path:
    """Write one figure's dataset as CSV with a stable column order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{figure_id}.csv"
    try:
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(format_cell(row.get(col)) for col in header) + "\n")
    except OSError as exc:
        raise RuntimeError(f"failed writing {path}: {exc}") from exc
    return path


def emit_summary(config: dict, preset: str, header: list[str], rows: list[dict],
                 artifacts: list[str], out_dir: str | os.PathLike) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{preset}_summary.json"

    def jsonable(value):
        if isinstance(value, (np.integer,)):
            return int(value)
        if isinstance(value, (np.floating, float)):
            v = float(value)
            return None if np.isnan(v) else v
        return value

    doc = {
        "preset": preset,
        "seed": config.get("seed"),
        "config": config,
        "columns": header,
        "points": [{k: jsonable(v) for k, v in row.items()} for row in rows],
        "artifacts": artifacts,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def default_workers() -> int:
    env = os.environ.get("QKDBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"QKDBENCH_THREADS must be an integer: {env!r}") from exc
    return 1


def run_preset(preset: str, out_dir: str | os.PathLike, seed: int | None = None,
               overrides: list[str] | None = None,
               config_path: str | os.PathLike | None = None,
               workers: int | None = None, render: bool = True) -> dict:
    """Execute one preset end to end; returns a manifest of written paths."""
    from . import plotting  # deferred: pulls in matplotlib

    doc = load_presets(config_path)
    config, spec = resolve_config(doc, preset, seed=seed, overrides=overrides)
    diagnostics = validate_config(config)
    if diagnostics:
        raise ConfigError("; ".join(diagnostics))
    workers = default_workers() if workers is None else max(1, int(workers))

    kind = spec.get("kind", "sweep")
    if kind in ("sweep", "cases"):
        header, rows = run_sweep(config, spec, workers=workers)
    elif kind == "projection":
        header, rows = run_projection(config, spec, workers=workers)
    elif kind == "pass":
        header, rows = run_pass_profile(config)
    elif kind == "table3":
        header, rows = run_table3(config)
    else:
        raise ConfigError(f"unknown preset kind {kind!r}")

    csv_path = emit_figure_data(header, rows, preset, out_dir)
    artifacts = [csv_path.name]
    if render:
        png_path = plotting.render_figure(preset, kind, header, rows,
                                          Path(out_dir) / f"{preset}.png")
        artifacts.append(Path(png_path).name)
    summary_path = emit_summary(config, preset, header, rows, artifacts, out_dir)
    return {"csv": str(csv_path), "summary": str(summary_path),
            "artifacts": artifacts, "rows": len(rows)}
