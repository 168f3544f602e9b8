"""Experiment configurations, sweep runners and table output.

Every runner is a deterministic function of its :class:`ExperimentConfig`.
Sweeps may fan out over processes; rows are always returned in sweep order.
Tables are CSV with ``#`` metadata lines carrying the config hash and dt.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    Trajectory, contact_frequency, extract_steady_orbit, orbit_orientation, summarize_orbit,
    tangential_direction,
)
from .chain import (
    FITTED, PRESETS, BeamChainSpec, BeamGeometry, ChainSpecError, FootSpec, build_twisted_beam,
    chain_from_dict,
)
from .contact import DEFAULT_FN_THRESHOLD, ContactConfig, detect_contact_events, duty_cycle
from .dynamics import DriveSignal, SimConfig, SimulationError, simulate
from .sysid import DEFAULT_BOUNDS, DESettings, DropTest, FitProblem, MarkerSet, fit, synthetic_reference
from .walker import WALKER_CONTACT, WalkerSpec, run_walk

KINDS = ("free-sweep", "twist-sweep", "contact-sweep", "fit", "walker")
CONTINUOUS_DUTY = 0.99
TRANSIENT_TOL = 0.02
MIN_STEADY_PERIODS = 4.0


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration (exit code 2)."""


class ExperimentError(RuntimeError):
    """A simulation inside an experiment failed (exit code 1)."""


# --- configuration ------------------------------------------------------------


_KIND_DEFAULTS = {
    "free-sweep": dict(f_lo_Hz=1.0, f_hi_Hz=45.0, duration_s=4.0, gravity_mps2=[0.0, 0.0, 0.0]),
    "twist-sweep": dict(duration_s=4.0, gravity_mps2=[0.0, 0.0, 0.0]),
    "contact-sweep": dict(f_lo_Hz=1.0, f_hi_Hz=45.0, duration_s=4.0, gravity_mps2=[0.0, -9.81, 0.0]),
    "walker": dict(f_lo_Hz=1.0, f_hi_Hz=80.0, duration_s=5.0, gravity_mps2=[0.0, 0.0, -9.81],
                   record_stride=10),
    "fit": dict(duration_s=0.25, gravity_mps2=[0.0, 0.0, -9.81]),
}


@dataclass
class ExperimentConfig:
    """One experiment, with units spelled out in the field names.

    ``None`` fields take the defaults of the experiment kind.
    """

    kind: str
    preset: str = "fitted"
    beam: dict | None = None  # full chain description, overrides preset
    beam_params: dict = field(default_factory=dict)  # k_Nm_per_rad, b_Nms_per_rad, l2_mm
    twist_deg: float = 90.0
    f_lo_Hz: float | None = None
    f_hi_Hz: float | None = None
    f_step_Hz: float = 1.0
    amplitude_mm: float = 2.0
    duration_s: float | None = None
    discard_fraction: float = 0.6
    dt_s: float = 1e-4
    integrator: str = "semi-implicit-euler"
    record_stride: int | None = None
    gravity_mps2: list | None = None
    twist_lo_deg: float = 0.0
    twist_hi_deg: float = 180.0
    twist_step_deg: float = 5.0
    twist_drive_Hz: float = 15.0
    contact: dict = field(default_factory=dict)
    foot: dict = field(default_factory=dict)
    walker: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    snapshot_Hz: list = field(default_factory=list)
    save_traces: bool = False
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        for key, value in _KIND_DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.record_stride is None:
            self.record_stride = 5
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown beam preset {self.preset!r}")
        if self.f_lo_Hz is not None and self.f_hi_Hz is not None:
            if self.f_lo_Hz > self.f_hi_Hz:
                raise ConfigError("f_lo_Hz must not exceed f_hi_Hz")
            if not self.f_step_Hz > 0:
                raise ConfigError("f_step_Hz must be positive")
            low = 0.0 if self.kind == "walker" else 1e-12
            if self.f_lo_Hz < low or (self.kind != "walker" and self.f_lo_Hz <= 0):
                raise ConfigError("sweep frequencies must be positive")
        if not self.twist_step_deg > 0 or self.twist_lo_deg > self.twist_hi_deg:
            raise ConfigError("twist range needs lo <= hi and a positive step")
        if not 0.0 <= self.discard_fraction < 1.0:
            raise ConfigError("discard_fraction must lie in [0, 1)")
        if not self.dt_s > 0 or self.record_stride < 1:
            raise ConfigError("dt_s must be positive and record_stride at least 1")
        if self.amplitude_mm < 0:
            raise ConfigError("amplitude_mm must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if len(self.gravity_mps2) != 3:
            raise ConfigError("gravity_mps2 needs three components")

    # -- serialisation

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        """Sorted compact JSON of everything that affects results (not ``jobs``)."""
        data = self.to_dict()
        del data["jobs"]
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def metadata(self) -> list[str]:
        return [
            f"twistbeam {__version__}",
            f"kind={self.kind}",
            f"config_sha256={self.config_hash()}",
            f"dt_s={self.dt_s!r}",
        ]

    # -- derived objects

    def frequencies(self) -> list[float]:
        return _grid(self.f_lo_Hz, self.f_hi_Hz, self.f_step_Hz)

    def twist_angles(self) -> list[float]:
        return _grid(self.twist_lo_deg, self.twist_hi_deg, self.twist_step_deg)

    def foot_spec(self) -> FootSpec:
        f = dict(self.foot)
        try:
            return FootSpec(
                length=float(f.pop("length_mm", 66.5)),
                mass=float(f.pop("mass_g", 20.0)),
                corner_offset=tuple(float(v) for v in f.pop("corner_offset_mm", (0.0, 0.0, 0.0))),
            )
        finally:
            if f:
                raise ConfigError(f"unknown foot keys: {', '.join(sorted(f))}")

    def beam_spec(self, twist: float | None = None, foot: FootSpec | None = None) -> BeamChainSpec:
        """Beam from the inline description, or the preset with overrides."""
        if self.beam is not None:
            if twist is not None and twist != self.twist_deg:
                raise ConfigError("an inline beam has a fixed twist; use a preset for twist sweeps")
            try:
                spec = chain_from_dict(self.beam)
            except (ChainSpecError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"invalid inline beam: {exc}") from None
            return replace(spec, foot=foot) if foot is not None else spec
        params = dict(self.beam_params)
        k = float(params.pop("k_Nm_per_rad", FITTED["k"]))
        b = float(params.pop("b_Nms_per_rad", FITTED["b"]))
        l2 = float(params.pop("l2_mm", FITTED["l2"]))
        kt = params.pop("twist_k_Nm_per_rad", None)
        bt = params.pop("twist_b_Nms_per_rad", None)
        if params:
            raise ConfigError(f"unknown beam_params keys: {', '.join(sorted(params))}")
        geometry = BeamGeometry().with_twist(self.twist_deg if twist is None else twist)
        try:
            return build_twisted_beam(geometry, k, b, l2, geometry.length - l2, foot,
                                      twist_stiffness=kt, twist_damping=bt)
        except ChainSpecError as exc:
            raise ConfigError(str(exc)) from None

    def contact_config(self, base: ContactConfig = ContactConfig()) -> ContactConfig:
        c = dict(self.contact)
        mapping = {
            "k_n_N_per_m": ("k_n", 1.0), "c_n_Ns_per_m": ("c_n", 1.0), "mu": ("mu", 1.0),
            "v_reg_m_per_s": ("v_reg", 1.0), "natural_gap_mm": ("natural_gap", 1e-3),
            "stage_height_mm": ("stage_height", 1e-3), "ground_height_mm": ("ground_height", 1e-3),
        }
        kw = {}
        for key, (name, scale) in mapping.items():
            if key in c:
                v = c.pop(key)
                kw[name] = None if v is None else float(v) * scale
        for key in ("normal", "tangent"):
            if key in c:
                kw[key] = tuple(float(v) for v in c.pop(key))
        if c:
            raise ConfigError(f"unknown contact keys: {', '.join(sorted(c))}")
        try:
            return replace(base, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sim_config(self, duration: float) -> SimConfig:
        try:
            return SimConfig(dt=self.dt_s, duration=duration, gravity=tuple(self.gravity_mps2),
                             integrator=self.integrator, record_stride=self.record_stride)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _grid(lo: float, hi: float, step: float) -> list[float]:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(float(lo) + i * float(step), 9) for i in range(n)]


# --- tables -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, Fraction):
        return str(v)
    if v is None:
        return ""
    return str(v)


def write_table(path, columns, rows, metadata=()) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in metadata:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row.get(c)) for c in columns])
    return path


def read_table(path) -> tuple[list[str], list[dict], list[str]]:
    """Columns, rows (strings) and metadata lines of a table written by :func:`write_table`."""
    meta, lines = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                meta.append(line[1:].strip())
            elif line.strip():
                lines.append(line)
    reader = csv.DictReader(lines)
    rows = list(reader)
    return list(reader.fieldnames or []), rows, meta


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# --- orbit sweeps -------------------------------------------------------------------


ORBIT_COLUMNS = ["major[m]", "minor[m]", "tilt[rad]", "area[m2]", "crossings", "class",
                 "orientation", "y_span[m]", "transient_sensitive"]


@dataclass
class SweepResult:
    kind: str
    key: str  # column naming the swept variable
    columns: list
    rows: list
    orbits: dict  # swept value -> (n, 2) orbit points
    regimes: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)


def _run_duration(cfg: ExperimentConfig, f: float) -> float:
    """Configured duration, stretched so the kept part holds enough drive periods."""
    need = MIN_STEADY_PERIODS / (f * (1.0 - cfg.discard_fraction))
    return max(cfg.duration_s, math.ceil(need * 10.0) / 10.0)


def _orbit_row(result, f: float, cfg: ExperimentConfig, duration: float) -> tuple[dict, np.ndarray]:
    traj = Trajectory(result.times, result.tip)
    discard = cfg.discard_fraction * duration
    orbit = extract_steady_orbit(traj, f, discard)
    s = summarize_orbit(orbit)
    # the orbit right after half the discard, to flag slow transients
    early_end = 0.5 * discard + 1.0 / f
    early = Trajectory(result.times[result.times <= early_end + 1e-12],
                       result.tip[result.times <= early_end + 1e-12])
    sensitive = False
    try:
        e = summarize_orbit(extract_steady_orbit(early, f, 0.0))
        scale = max(s.major, 1e-15)
        sensitive = (abs(e.major - s.major) > TRANSIENT_TOL * scale
                     or abs(e.minor - s.minor) > TRANSIENT_TOL * scale)
    except ValueError:
        pass
    y = orbit.points[:, 0]
    row = {
        "major[m]": s.major, "minor[m]": s.minor, "tilt[rad]": s.tilt, "area[m2]": s.area,
        "crossings": s.crossings, "class": s.classification, "orientation": orbit_orientation(orbit),
        "y_span[m]": float(y.max() - y.min()), "transient_sensitive": sensitive,
    }
    return row, orbit.points


def _free_point(args):
    cfg, spec, f = args
    duration = _run_duration(cfg, f)
    drive = DriveSignal(cfg.amplitude_mm * 1e-3, f)
    try:
        res = simulate(spec, drive, None, cfg.sim_config(duration), points=("tip",))
    except SimulationError as exc:
        raise ExperimentError(f"simulation failed at f={f:g} Hz: {exc}") from None
    row, pts = _orbit_row(res, f, cfg, duration)
    trace = np.column_stack([res.times, res.tip]) if cfg.save_traces else None
    return {"f[Hz]": f, **row}, pts, trace


def run_free_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Steady orbits of the stage-driven beam without contact, one per frequency."""
    if cfg.kind != "free-sweep":
        raise ConfigError("run_free_sweep needs a free-sweep config")
    spec = cfg.beam_spec()
    freqs = cfg.frequencies()
    out = _pmap(_free_point, [(cfg, spec, f) for f in freqs], cfg.jobs)
    rows = [o[0] for o in out]
    orbits = {f: o[1] for f, o in zip(freqs, out)}
    traces = {f: o[2] for f, o in zip(freqs, out) if o[2] is not None}
    return SweepResult("free-sweep", "f[Hz]", ["f[Hz]"] + ORBIT_COLUMNS, rows, orbits,
                       traces=traces)


def _twist_point(args):
    cfg, phi = args
    f = cfg.twist_drive_Hz
    spec = cfg.beam_spec(twist=phi)
    duration = _run_duration(cfg, f)
    drive = DriveSignal(cfg.amplitude_mm * 1e-3, f)
    try:
        res = simulate(spec, drive, None, cfg.sim_config(duration), points=("tip",))
    except SimulationError as exc:
        raise ExperimentError(f"simulation failed at twist {phi:g} deg: {exc}") from None
    row, pts = _orbit_row(res, f, cfg, duration)
    return {"twist[deg]": phi, **row}, pts


def run_twist_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Orbit axes against total twist at a fixed drive frequency."""
    if cfg.kind != "twist-sweep":
        raise ConfigError("run_twist_sweep needs a twist-sweep config")
    angles = cfg.twist_angles()
    if any(abs(a) > 180.0 for a in angles):
        raise ConfigError("twist angles must lie within [-180, 180] deg")
    out = _pmap(_twist_point, [(cfg, a) for a in angles], cfg.jobs)
    return SweepResult("twist-sweep", "twist[deg]", ["twist[deg]"] + ORBIT_COLUMNS,
                       [o[0] for o in out], {a: o[1] for a, o in zip(angles, out)})


# --- contact sweep -----------------------------------------------------------------


CONTACT_COLUMNS = ["duty", "events", "contact_f[Hz]", "ratio", "ratio_residual",
                   "tangential_sign", "regime"]


def _contact_window(duration: float, discard: float, f: float) -> float:
    """Longest multiple of 12 drive periods inside the kept span (whole periods if shorter)."""
    periods = math.floor((duration - discard) * f + 1e-9)
    twelve = (periods // 12) * 12
    return (twelve if twelve > 0 else max(periods, 1)) / f


def regime_label(duty: float, cf) -> str:
    if duty >= CONTINUOUS_DUTY:
        return "continuous"
    if cf.frequency == 0.0:
        return "none"
    return str(cf.ratio)


def _contact_point(args):
    cfg, spec, contact, f = args
    duration = _run_duration(cfg, f)
    drive = DriveSignal(cfg.amplitude_mm * 1e-3, f)
    try:
        res = simulate(spec, drive, contact, cfg.sim_config(duration), points=("tip",))
    except SimulationError as exc:
        raise ExperimentError(f"simulation failed at f={f:g} Hz: {exc}") from None
    row, pts = _orbit_row(res, f, cfg, duration)
    window = _contact_window(duration, cfg.discard_fraction * duration, f)
    t_end = float(res.times[-1])
    rec = res.contact.window(t_end - window + 1e-12)
    all_events = detect_contact_events(rec) if len(rec) else []
    # touchdowns only count when they start inside the window
    events = [e for e in all_events if e[0] > rec.times[0] or rec.fn[0] <= DEFAULT_FN_THRESHOLD]
    cf = contact_frequency(events, window, f)
    _, sign = tangential_direction(rec, all_events)
    duty = duty_cycle(rec)
    row.update({
        "duty": duty, "events": len(events), "contact_f[Hz]": cf.frequency,
        "ratio": cf.ratio, "ratio_residual": cf.residual, "tangential_sign": sign,
        "regime": regime_label(duty, cf),
    })
    trace = None
    if cfg.save_traces:
        c = res.contact
        trace = np.column_stack([res.times, res.tip, c.fn, c.ft, c.gap, c.in_contact])
    return {"f[Hz]": f, **row}, pts, trace


def segment_regimes(rows, key="f[Hz]") -> list[dict]:
    """Maximal runs of consecutive rows sharing (regime, tangential sign)."""
    bands = []
    for row in rows:
        label = (row["regime"], row["tangential_sign"])
        if bands and bands[-1]["_label"] == label:
            bands[-1]["f_hi[Hz]"] = row[key]
            bands[-1]["count"] += 1
        else:
            bands.append({"_label": label, "f_lo[Hz]": row[key], "f_hi[Hz]": row[key],
                          "regime": label[0], "tangential_sign": label[1], "count": 1})
    for b in bands:
        del b["_label"]
    return bands


def run_contact_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Foot-ground contact sweep: orbit shape, contact rate and friction direction."""
    if cfg.kind != "contact-sweep":
        raise ConfigError("run_contact_sweep needs a contact-sweep config")
    spec = cfg.beam_spec(foot=cfg.foot_spec())
    contact = cfg.contact_config()
    freqs = cfg.frequencies()
    out = _pmap(_contact_point, [(cfg, spec, contact, f) for f in freqs], cfg.jobs)
    rows = [o[0] for o in out]
    traces = {f: o[2] for f, o in zip(freqs, out) if o[2] is not None}
    return SweepResult("contact-sweep", "f[Hz]", ["f[Hz]"] + ORBIT_COLUMNS + CONTACT_COLUMNS,
                       rows, {f: o[1] for f, o in zip(freqs, out)}, segment_regimes(rows),
                       traces)


# --- walker -------------------------------------------------------------------------


WALKER_COLUMNS = ["f[Hz]", "net_dx[m]", "speed[m/s]", "direction", "min_clearance[m]",
                  "imbalance_force[N]", "flag"]
DIRECTION_EPS = 1e-6  # m


@dataclass
class WalkerResult:
    rows: list
    sign_changes: list  # (f_before, f_after) pairs
    snapshots: dict  # f -> (n, 7): t, x, z, pitch, foot x/y/z


def walker_spec(cfg: ExperimentConfig) -> WalkerSpec:
    w = dict(cfg.walker)
    mapping = {
        "plate_mass_g": "plate_mass", "cart_mass_g": "cart_mass", "length_mm": "length",
        "front_mm": "front", "hip_half_width_mm": "hip_half_width", "motor_x_mm": "motor_x",
        "imbalance_mass_g": "imbalance_mass", "eccentricity_mm": "eccentricity",
        "tail_mu": "tail_mu",
    }
    kw = {name: float(w.pop(key)) for key, name in mapping.items() if key in w}
    mirrored = bool(w.pop("mirrored", False))
    if w:
        raise ConfigError(f"unknown walker keys: {', '.join(sorted(w))}")
    leg = cfg.beam_spec(foot=cfg.foot_spec())
    try:
        spec = WalkerSpec(leg=leg, contact=cfg.contact_config(WALKER_CONTACT), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec.mirrored() if mirrored else spec


def _walker_point(args):
    cfg, spec, f = args
    run = run_walk(spec, f, duration=cfg.duration_s, dt=cfg.dt_s, stride=cfg.record_stride,
                   integrator=cfg.integrator, gravity=tuple(cfg.gravity_mps2))
    if run.failed:
        direction = 0
    else:
        direction = 0 if abs(run.net_displacement) < DIRECTION_EPS else int(np.sign(run.net_displacement))
    row = {
        "f[Hz]": f, "net_dx[m]": run.net_displacement, "speed[m/s]": run.mean_speed,
        "direction": direction, "min_clearance[m]": run.min_clearance,
        "imbalance_force[N]": spec.imbalance_force(f), "flag": run.failed,
    }
    snap = None
    if f in cfg.snapshot_Hz and not run.failed:
        snap = np.column_stack([run.times, run.body, run.foot])
    return row, snap


def direction_changes(rows) -> list[tuple[float, float]]:
    """Consecutive nonzero-direction rows whose directions differ."""
    changes = []
    prev = None
    for row in rows:
        d = row["direction"]
        if d == 0:
            continue
        if prev is not None and d != prev[1]:
            changes.append((prev[0], row["f[Hz]"]))
        prev = (row["f[Hz]"], d)
    return changes


def run_walker(cfg: ExperimentConfig) -> WalkerResult:
    """Net body displacement and speed of the walker across drive frequency."""
    if cfg.kind != "walker":
        raise ConfigError("run_walker needs a walker config")
    spec = walker_spec(cfg)
    freqs = cfg.frequencies()
    out = _pmap(_walker_point, [(cfg, spec, f) for f in freqs], cfg.jobs)
    rows = [o[0] for o in out]
    snaps = {f: o[1] for f, o in zip(freqs, out) if o[1] is not None}
    return WalkerResult(rows, direction_changes(rows), snaps)


# --- fitting ------------------------------------------------------------------------


def fit_problem(cfg: ExperimentConfig, base_dir=None) -> FitProblem:
    """Reference (file or synthetic) plus bounds, protocol and DE settings."""
    p = dict(cfg.fit)
    protocol = DropTest(
        load=float(p.pop("load_g", 200.0)),
        settle=str(p.pop("settle", "newton")),
        duration=float(p.pop("record_s", 0.25)),
        sample_rate=float(p.pop("sample_rate_Hz", 1000.0)),
        dt=cfg.dt_s,
    )
    bounds = dict(DEFAULT_BOUNDS)
    for key, name in (("k_bounds_Nm_per_rad", "k"), ("b_bounds_Nms_per_rad", "b"),
                      ("l2_bounds_mm", "l2")):
        if key in p:
            lo, hi = p.pop(key)
            bounds[name] = (float(lo), float(hi))
    settings = DESettings(
        population=p.pop("population", None),
        F=float(p.pop("F", 0.8)),
        CR=float(p.pop("CR", 0.9)),
        max_generations=int(p.pop("max_generations", 300)),
        stall_generations=p.pop("stall_generations", 50),
        stall_tolerance=float(p.pop("stall_tolerance_mm", 1e-3)),
        seed=cfg.seed,
    )
    ref_path = p.pop("reference_csv", None)
    truth = {
        "k": float(p.pop("true_k_Nm_per_rad", FITTED["k"])),
        "b": float(p.pop("true_b_Nms_per_rad", FITTED["b"])),
        "l2": float(p.pop("true_l2_mm", FITTED["l2"])),
    }
    noise = float(p.pop("noise_mm", 0.0))
    if p:
        raise ConfigError(f"unknown fit keys: {', '.join(sorted(p))}")
    geometry = BeamGeometry().with_twist(cfg.twist_deg)
    if ref_path is not None:
        path = Path(ref_path)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"reference file not found: {path}")
        try:
            reference = MarkerSet.from_csv(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        reference = synthetic_reference(truth["k"], truth["b"], truth["l2"], geometry, protocol)
        if noise > 0:
            reference = reference.with_noise(noise * 1e-3, cfg.seed)
    try:
        return FitProblem(reference, bounds, geometry, protocol, settings)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_fit(cfg: ExperimentConfig, base_dir=None):
    if cfg.kind != "fit":
        raise ConfigError("run_fit needs a fit config")
    problem = fit_problem(cfg, base_dir)
    try:
        if cfg.jobs <= 1:
            return fit(problem), problem
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return fit(problem, evaluate=lambda fn, xs: list(pool.map(fn, xs))), problem
    except SimulationError as exc:
        raise ExperimentError(f"fit failed: {exc}") from None


# --- output -------------------------------------------------------------------------


def write_sweep(result: SweepResult, cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.metadata()
    stem = result.kind.replace("-", "_")
    paths = [write_table(out / f"{stem}.csv", result.columns, result.rows, meta)]
    orbit_rows = []
    for key, pts in result.orbits.items():
        for i, (y, z) in enumerate(pts):
            orbit_rows.append({result.key: key, "sample": i, "y[m]": y, "z[m]": z})
    paths.append(write_table(out / f"{stem}_orbits.csv", [result.key, "sample", "y[m]", "z[m]"],
                             orbit_rows, meta))
    if result.regimes:
        paths.append(write_table(
            out / f"{stem}_regimes.csv",
            ["f_lo[Hz]", "f_hi[Hz]", "regime", "tangential_sign", "count"], result.regimes, meta,
        ))
    if result.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for f, arr in result.traces.items():
            cols = ["t[s]", "tip_x[m]", "tip_y[m]", "tip_z[m]"]
            if arr.shape[1] > 4:
                cols += ["fn[N]", "ft[N]", "gap[m]", "contact"]
            rows = [dict(zip(cols, r)) for r in arr]
            for r in rows:
                if "contact" in r:
                    r["contact"] = int(r["contact"])
            paths.append(write_table(tdir / f"trace_{f:g}Hz.csv", cols, rows,
                                     meta + [f"frequency_Hz={f!r}"]))
    return paths


def write_walker(result: WalkerResult, cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.metadata() + ["planar model: body x/z/pitch, mirrored legs in lockstep"]
    changes = "; ".join(f"{a:g}->{b:g} Hz" for a, b in result.sign_changes) or "none"
    meta.append(f"direction_changes={changes}")
    paths = [write_table(out / "walker.csv", WALKER_COLUMNS, result.rows, meta)]
    if result.snapshots:
        cols = ["f[Hz]", "t[s]", "x[m]", "z[m]", "pitch[rad]", "foot_x[m]", "foot_y[m]", "foot_z[m]"]
        rows = []
        for f, arr in result.snapshots.items():
            for r in arr:
                rows.append({"f[Hz]": f, **dict(zip(cols[1:], r))})
        paths.append(write_table(out / "walker_snapshots.csv", cols, rows, meta))
    return paths


def write_fit(report, problem: FitProblem, cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.metadata()
    json_path = out / "fit_report.json"
    report.to_json(json_path, metadata={
        "tool": f"twistbeam {__version__}", "config_sha256": cfg.config_hash(), "dt_s": cfg.dt_s,
    })
    trace_path = out / "fit_convergence.csv"
    report.trace_to_csv(trace_path, meta)
    ref_path = out / "fit_reference.csv"
    problem.reference.to_csv(ref_path, meta)
    return [json_path, trace_path, ref_path]


def default_out_dir(kind: str) -> Path:
    return Path(os.getcwd()) / "results" / kind
