"""Command-line entry point: ``twistbeam <subcommand> [options]``.

Exit codes: 0 success, 1 simulation failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .analysis import (
    Orbit, Trajectory, contact_frequency, extract_steady_orbit, orbit_orientation, summarize_orbit,
    tangential_direction,
)
from .contact import ContactRecord, detect_contact_events, duty_cycle
from .dynamics import SimulationError
from .experiments import (
    ORBIT_COLUMNS, ConfigError, ExperimentConfig, ExperimentError, read_table, regime_label,
    run_contact_sweep, run_fit, run_free_sweep, run_twist_sweep, run_walker, write_fit, write_sweep,
    write_table, write_walker,
)

EXIT_OK, EXIT_SIM, EXIT_CONFIG = 0, 1, 2
SWEEPS = {
    "free-sweep": run_free_sweep,
    "twist-sweep": run_twist_sweep,
    "contact-sweep": run_contact_sweep,
}


def _load_config(args, kind: str) -> tuple[ExperimentConfig, Path | None]:
    base_dir = None
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        if data.setdefault("kind", kind) != kind:
            raise ConfigError(f"config {path} is a {data['kind']!r} config, not {kind!r}")
        cfg = ExperimentConfig.from_dict(data)
        base_dir = path.parent
    else:
        cfg = ExperimentConfig(kind=kind)
    overrides = {}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset is not None:
        overrides["preset"] = args.preset
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return cfg, base_dir


def _out_dir(args, kind: str) -> Path:
    out = Path(args.out) if args.out else Path("results") / kind
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _save_config(cfg: ExperimentConfig, out: Path) -> Path:
    path = out / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def _cmd_experiment(args) -> list[Path]:
    kind = args.command
    cfg, base_dir = _load_config(args, kind)
    out = _out_dir(args, kind)
    if kind in SWEEPS:
        paths = write_sweep(SWEEPS[kind](cfg), cfg, out)
    elif kind == "walker":
        paths = write_walker(run_walker(cfg), cfg, out)
    else:
        report, problem = run_fit(cfg, base_dir)
        paths = write_fit(report, problem, cfg, out)
    paths.append(_save_config(cfg, out))
    if not args.no_plot:
        paths += render_plots(out)
    return paths


def render_plots(directory) -> list[Path]:
    """Render an SVG next to every recognised table in ``directory``."""
    d = Path(directory)
    made = []

    def table(name):
        p = d / name
        return read_table(p)[1] if p.exists() else None

    for stem, key in (("free_sweep", "f[Hz]"), ("contact_sweep", "f[Hz]"), ("twist_sweep", "twist[deg]")):
        rows = table(f"{stem}.csv")
        orbits = table(f"{stem}_orbits.csv")
        if orbits:
            made.append(plotting.orbit_gallery(orbits, key, d / f"{stem}_orbits.svg", rows))
        if rows and stem == "twist_sweep":
            made.append(plotting.axes_vs_twist(rows, d / "twist_sweep_axes.svg"))
        elif rows:
            made.append(plotting.sweep_overview(rows, d / f"{stem}_overview.svg"))
        if rows and stem == "contact_sweep":
            made.append(plotting.contact_staircase(rows, d / "contact_sweep_regimes.svg"))
    rows = table("walker.csv")
    if rows:
        made.append(plotting.walker_speed(rows, d / "walker_speed.svg"))
    rows = table("fit_convergence.csv")
    if rows:
        made.append(plotting.fit_convergence(rows, d / "fit_convergence.svg"))
    return made


def _cmd_plot(args) -> list[Path]:
    d = Path(args.input or args.out or ".")
    if not d.is_dir():
        raise ConfigError(f"not a results directory: {d}")
    made = render_plots(d)
    if not made:
        raise ConfigError(f"no experiment tables found in {d}")
    return made


def _meta_value(meta, key):
    for line in meta:
        if line.startswith(key + "="):
            return line.split("=", 1)[1]
    return None


def analyze_table(path, frequency: float | None = None, discard: float | None = None):
    """Re-run orbit and contact analytics on a stored orbit table or trace.

    Returns (columns, rows, metadata) of the analysis table.
    """
    columns, rows, meta = read_table(path)
    if not rows:
        raise ConfigError(f"{path}: table is empty")
    if "y[m]" in columns and "z[m]" in columns:
        key = columns[0]
        groups = {}
        for r in rows:
            groups.setdefault(float(r[key]), []).append((float(r["y[m]"]), float(r["z[m]"])))
        out = []
        for k, pts in groups.items():
            f = k if key == "f[Hz]" else (frequency or 1.0)
            orbit = Orbit(np.array(pts), 1.0 / f, f)
            s = summarize_orbit(orbit)
            out.append({key: k, "major[m]": s.major, "minor[m]": s.minor, "tilt[rad]": s.tilt,
                        "area[m2]": s.area, "crossings": s.crossings, "class": s.classification,
                        "orientation": orbit_orientation(orbit),
                        "y_span[m]": float(np.ptp(np.array(pts)[:, 0]))})
        return [key] + ORBIT_COLUMNS[:-1], out, meta
    if "t[s]" in columns and "tip_y[m]" in columns:
        if frequency is None:
            stored = _meta_value(meta, "frequency_Hz")
            if stored is None:
                raise ConfigError(f"{path}: pass --frequency, the trace does not record it")
            frequency = float(stored)
        data = np.array([[float(r[c]) if r[c] != "" else np.nan for c in columns] for r in rows])
        col = {c: i for i, c in enumerate(columns)}
        t = data[:, col["t[s]"]]
        tip = data[:, [col["tip_x[m]"], col["tip_y[m]"], col["tip_z[m]"]]]
        traj = Trajectory(t, tip)
        if discard is None:
            discard = 0.6 * traj.duration
        orbit = extract_steady_orbit(traj, frequency, discard)
        s = summarize_orbit(orbit)
        row = {"f[Hz]": frequency, "major[m]": s.major, "minor[m]": s.minor, "tilt[rad]": s.tilt,
               "area[m2]": s.area, "crossings": s.crossings, "class": s.classification,
               "orientation": orbit_orientation(orbit), "fold_residual[m]": orbit.fold_residual}
        cols = ["f[Hz]"] + ORBIT_COLUMNS[:-2] + ["fold_residual[m]"]
        if "fn[N]" in col:
            rec = ContactRecord(t, data[:, col["gap[m]"]], data[:, col["fn[N]"]], data[:, col["ft[N]"]],
                                data[:, col["contact"]] > 0.5).window(t[0] + discard)
            events = detect_contact_events(rec)
            window = float(rec.times[-1] - rec.times[0])
            cf = contact_frequency(events, window, frequency)
            duty = duty_cycle(rec)
            row.update({"duty": duty, "events": len(events), "contact_f[Hz]": cf.frequency,
                        "ratio": cf.ratio, "tangential_sign": tangential_direction(rec, events)[1],
                        "regime": regime_label(duty, cf)})
            cols += ["duty", "events", "contact_f[Hz]", "ratio", "tangential_sign", "regime"]
        return cols, [row], meta
    raise ConfigError(f"{path}: neither an orbit table nor a tip trace")


def _cmd_analyze(args) -> list[Path]:
    if not args.input:
        raise ConfigError("analyze needs --input <table.csv>")
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"input table not found: {src}")
    cols, rows, meta = analyze_table(src, args.frequency, args.discard)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    meta = [m for m in meta if not m.startswith("analysis of")] + [f"analysis of {src.name}"]
    return [write_table(out / f"{src.stem}_analysis.csv", cols, rows, meta)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twistbeam", description="Twisted-beam vibration experiments.")
    p.add_argument("--version", action="version", version=f"twistbeam {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config (JSON, units in key names)")
        sp.add_argument("--out", help="output directory (default results/<command>)")
        sp.add_argument("--jobs", type=int, help="parallel worker processes")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--preset", help="beam preset (fitted)")

    for name, text in (
        ("free-sweep", "steady orbits across drive frequency, no contact"),
        ("twist-sweep", "orbit axes across twist angle at a fixed frequency"),
        ("contact-sweep", "foot contact regimes across drive frequency"),
        ("walker", "walker displacement and speed across drive frequency"),
        ("fit", "identify k, b and l2 from a drop test"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--no-plot", action="store_true", help="skip SVG rendering")

    sp = sub.add_parser("analyze", help="re-run analytics on a stored orbit table or trace")
    common(sp)
    sp.add_argument("--input", help="orbit table or trace CSV")
    sp.add_argument("--frequency", type=float, help="drive frequency in Hz for traces")
    sp.add_argument("--discard", type=float, help="transient to drop in s (default 60%%)")

    sp = sub.add_parser("plot", help="render SVG figures from stored tables")
    common(sp)
    sp.add_argument("--input", help="results directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            paths = _cmd_analyze(args)
        elif args.command == "plot":
            paths = _cmd_plot(args)
        else:
            paths = _cmd_experiment(args)
    except (ConfigError, OSError) as exc:
        print(f"twistbeam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, SimulationError) as exc:
        print(f"twistbeam: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    except ValueError as exc:
        print(f"twistbeam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
