"""Figure rendering for emitted sweep datasets.

Each preset's CSV rows render to a PNG next to the delimited output.
Rendering is deterministic: fixed size, fixed dpi, constant metadata.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KWARGS = {"dpi": 130, "metadata": {"Software": "qkdbench"}}


def _column(rows: list[dict], name: str) -> np.ndarray:
    return np.array([float("nan") if row.get(name) in ("", None) else float(row[name])
                     for row in rows])


def _series_groups(rows: list[dict], key: str) -> list[tuple[float, list[dict]]]:
    order: list[float] = []
    for row in rows:
        if row[key] not in order:
            order.append(row[key])
    return [(val, [r for r in rows if r[key] == val]) for val in order]


def _positive(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = np.isfinite(y) & (y > 0)
    return x[ok], y[ok]


def render_figure(figure_id: str, kind: str, header: list[str],
                  rows: list[dict], out_png: str | Path) -> Path:
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    renderer = {
        "fig2": _render_loss_sweep,
        "fig3": _render_noise_sweep,
        "fig4": _render_gate_sweep,
        "fig5": _render_esnr_scatter,
        "fig6": _render_projection,
        "fig7": _render_pass,
        "table3": _render_gains,
    }.get(figure_id)
    if renderer is None:
        renderer = {"pass": _render_pass, "projection": _render_projection,
                    "table3": _render_gains}.get(kind, _render_loss_sweep)
    fig = renderer(header, rows)
    fig.savefig(out_png, **_SAVE_KWARGS)
    plt.close(fig)
    return out_png


def _render_loss_sweep(header: list[str], rows: list[dict]):
    x = _column(rows, header[0])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    ax1.semilogy(*_positive(x, _column(rows, "ana_skr_bps")), "b-", label="model")
    xs, ys = _positive(x, _column(rows, "sim_skr_bps"))
    if xs.size:
        ax1.semilogy(xs, ys, "ko", mfc="none", label="simulated")
    ax1.set_ylabel("SKR (bit/s)")
    ax1.legend()
    ax2.plot(x, 100 * _column(rows, "ana_qber"), "b-", label="model")
    sim_q = _column(rows, "sim_qber")
    if np.isfinite(sim_q).any():
        ax2.plot(x, 100 * sim_q, "ko", mfc="none", label="simulated")
    ax2.set_ylabel("QBER (%)")
    ax2.set_xlabel(header[0])
    ax2.legend()
    fig.tight_layout()
    return fig


def _render_noise_sweep(header: list[str], rows: list[dict]):
    series_key, axis_key = header[0], header[1]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for val, group in _series_groups(rows, series_key):
        x = _column(group, axis_key)
        ax1.loglog(*_positive(x, _column(group, "ana_skr_bps")),
                   label=f"{series_key}={val:g}")
        ax2.semilogx(x, 100 * _column(group, "ana_qber"),
                     label=f"{series_key}={val:g}")
    ax1.set_ylabel("SKR (bit/s)")
    ax1.legend()
    ax2.set_ylabel("QBER (%)")
    ax2.set_xlabel(axis_key + " (Hz)")
    fig.tight_layout()
    return fig


def _render_gate_sweep(header: list[str], rows: list[dict]):
    series_key, axis_key = header[0], header[1]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for val, group in _series_groups(rows, series_key):
        x = _column(group, axis_key)
        nskr = _column(group, "ana_nskr")
        top = np.nanmax(nskr) if np.isfinite(nskr).any() else 1.0
        scale = top if top > 0 else 1.0
        ax1.plot(x, nskr / scale, label=f"{series_key}={val:g}")
        ax2.plot(x, 100 * _column(group, "ana_qber"), label=f"{series_key}={val:g}")
    ax1.set_ylabel("NSKR (peak-normalised)")
    ax1.legend()
    ax2.set_ylabel("QBER (%)")
    ax2.set_xlabel("gate width (ns)")
    fig.tight_layout()
    return fig


def _render_esnr_scatter(header: list[str], rows: list[dict]):
    fig, ax = plt.subplots(figsize=(7, 5))
    esnr = _column(rows, "ana_esnr")
    ax.semilogx(esnr, 100 * _column(rows, "sim_qber"), "ko", mfc="none",
                label="simulated")
    grid = np.geomspace(max(esnr.min() / 2, 1e-2), esnr.max() * 2, 200)
    qber = _column(rows, "ana_qber")
    # The analytic floor at high ESNR approximates the intrinsic rate.
    e_i = float(np.nanmin(qber)) if np.isfinite(qber).any() else 0.015
    model = [e_i + 0.5 / (g + 1) - 2 * e_i * 0.5 / (g + 1) for g in grid]
    ax.semilogx(grid, 100 * np.array(model), "b-", label="model")
    ax.set_xlabel("ESNR")
    ax.set_ylabel("QBER (%)")
    ax.legend()
    fig.tight_layout()
    return fig


def _render_projection(header: list[str], rows: list[dict]):
    axis_key = header[0]
    fig, ax = plt.subplots(figsize=(7, 5))
    base_x = _column(rows, axis_key)
    ax.semilogy(*_positive(base_x, _column(rows, "ana_skr_bps")), "b-",
                label="testbench")
    ax.semilogy(*_positive(_column(rows, "projected_loss_db"),
                           _column(rows, "projected_skr_bps")), "r--",
                label="mission projection")
    ax.set_xlabel("channel loss (dB)")
    ax.set_ylabel("SKR (bit/s)")
    ax.legend()
    fig.tight_layout()
    return fig


def _render_pass(header: list[str], rows: list[dict]):
    t = _column(rows, "t_s")
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot(t, _column(rows, "elevation_deg"), "o", ms=2, label="elevation (deg)")
    ax.set_xlabel("time from culmination (s)")
    ax.set_ylabel("elevation (deg)")
    ax2 = ax.twinx()
    ax2.plot(t, _column(rows, "slant_range_km"), "b-", label="range (km)")
    ax2.set_ylabel("slant range (km)")
    fig.tight_layout()
    return fig


def _render_gains(header: list[str], rows: list[dict]):
    named = [(row["description"], row["gain_db"]) for row in rows
             if row.get("gain_db") not in ("", None)
             and np.isfinite(float(row["gain_db"]))]
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [n for n, _ in named]
    ax.barh(range(len(named)), [g for _, g in named])
    ax.set_yticks(range(len(named)), labels=labels, fontsize=8)
    ax.set_xlabel("gain (dB)")
    fig.tight_layout()
    return fig
