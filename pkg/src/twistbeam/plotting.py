"""SVG figures rendered from the experiment tables.

Every function takes parsed table rows (as read back from CSV) and writes
one SVG. Output is byte-stable: the SVG id salt is fixed and no date is
embedded.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

matplotlib.rcParams["svg.hashsalt"] = "twistbeam"

STYLE = {
    "font.size": 8,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
MM = 1e3


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "twistbeam", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _col(rows, name, cast=float):
    return [cast(r[name]) if r[name] != "" else math.nan for r in rows]


def orbit_gallery(orbit_rows, key: str, path, summary_rows=None, max_panels: int = 48) -> Path:
    """Grid of steady orbits (Y horizontal, Z vertical, mm), one panel per swept value."""
    groups = defaultdict(list)
    for r in orbit_rows:
        groups[float(r[key])].append((float(r["y[m]"]), float(r["z[m]"])))
    keys = sorted(groups)
    if len(keys) > max_panels:
        step = math.ceil(len(keys) / max_panels)
        keys = keys[::step]
    labels = {}
    for r in summary_rows or ():
        labels[float(r[key])] = r.get("class", "")
    ncol = min(8, max(1, len(keys)))
    nrow = max(1, math.ceil(len(keys) / ncol))
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(1.4 * ncol, 1.5 * nrow))
        for i, k in enumerate(keys):
            ax = fig.add_subplot(nrow, ncol, i + 1)
            pts = groups[k] + groups[k][:1]
            ax.plot([p[0] * MM for p in pts], [p[1] * MM for p in pts], color="C0")
            ax.set_aspect("equal", adjustable="datalim")
            unit = "Hz" if "Hz" in key else "deg"
            ax.set_title(f"{k:g} {unit} {labels.get(k, '')}".strip(), fontsize=6)
            ax.tick_params(labelsize=5)
        fig.supxlabel("Y [mm]")
        fig.supylabel("Z [mm]")
        fig.tight_layout()
        return _save(fig, path)


def axes_vs_twist(rows, path) -> Path:
    """Major and minor orbit axes against twist angle."""
    phi = _col(rows, "twist[deg]")
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.0, 2.8))
        ax = fig.add_subplot()
        ax.plot(phi, [v * MM for v in _col(rows, "major[m]")], "o-", ms=2.5, label="major")
        ax.plot(phi, [v * MM for v in _col(rows, "minor[m]")], "s-", ms=2.5, label="minor")
        ax.set_xlabel("twist [deg]")
        ax.set_ylabel("axis length [mm]")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def sweep_overview(rows, path) -> Path:
    """Orbit axes, area and crossings against drive frequency."""
    f = _col(rows, "f[Hz]")
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.5, 4.0))
        ax1, ax2 = fig.subplots(2, 1, sharex=True)
        ax1.plot(f, [v * MM for v in _col(rows, "major[m]")], label="major")
        ax1.plot(f, [v * MM for v in _col(rows, "minor[m]")], label="minor")
        ax1.set_ylabel("axis length [mm]")
        ax1.legend(frameon=False)
        ax2.plot(f, [abs(v) * 1e6 for v in _col(rows, "area[m2]")], color="C2")
        ax2.set_ylabel("|area| [mm$^2$]")
        ax2.set_xlabel("drive frequency [Hz]")
        cross = [f_ for f_, c in zip(f, _col(rows, "crossings", int)) if c >= 1]
        for x in cross:
            ax2.axvline(x, color="0.8", lw=0.5, zorder=0)
        fig.tight_layout()
        return _save(fig, path)


def contact_staircase(rows, path) -> Path:
    """Contact rate over drive rate, duty cycle and friction sign against frequency."""
    f = _col(rows, "f[Hz]")
    ratio = [cf / fd if fd > 0 else math.nan for cf, fd in zip(_col(rows, "contact_f[Hz]"), f)]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.5, 4.2))
        ax1, ax2, ax3 = fig.subplots(3, 1, sharex=True)
        ax1.step(f, ratio, where="mid")
        for level in (1.0, 0.5, 1.0 / 3.0, 0.25):
            ax1.axhline(level, color="0.85", lw=0.5, zorder=0)
        ax1.set_ylabel("contact / drive")
        ax2.step(f, _col(rows, "duty"), where="mid", color="C1")
        ax2.set_ylabel("duty")
        ax2.set_ylim(-0.05, 1.05)
        ax3.step(f, _col(rows, "tangential_sign", int), where="mid", color="C3")
        ax3.set_yticks([-1, 0, 1])
        ax3.set_ylabel("friction sign")
        ax3.set_xlabel("drive frequency [Hz]")
        fig.tight_layout()
        return _save(fig, path)


def walker_speed(rows, path) -> Path:
    """Mean walking speed against imbalance frequency; flagged runs are marked."""
    f = _col(rows, "f[Hz]")
    v = [s * MM for s in _col(rows, "speed[m/s]")]
    flagged = [(x, 0.0) for x, r in zip(f, rows) if r.get("flag", "") not in ("", "0")]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.5, 2.8))
        ax = fig.add_subplot()
        ax.axhline(0.0, color="0.7", lw=0.5)
        ax.plot(f, v, "o-", ms=2.0)
        if flagged:
            ax.plot(*zip(*flagged), "x", color="C3", label="flagged")
            ax.legend(frameon=False)
        ax.set_xlabel("drive frequency [Hz]")
        ax.set_ylabel("mean speed [mm/s]")
        fig.tight_layout()
        return _save(fig, path)


def fit_convergence(rows, path) -> Path:
    """Best objective per DE generation on a log scale."""
    g = _col(rows, "generation", int)
    best = _col(rows, "best_objective[mm]")
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.0, 2.8))
        ax = fig.add_subplot()
        ax.semilogy(g, best)
        ax.set_xlabel("generation")
        ax.set_ylabel("best RMS marker error [mm]")
        fig.tight_layout()
        return _save(fig, path)
