"""Forward dynamics and fixed-step simulation of a beam chain.

The beam is mounted on a stage that moves along a prescribed axis
(infinite inertia). Joint springs and dampers act on the deflection from the
natural shape, gravity acts on the links and the foot mass, and contact
forces come from :mod:`twistbeam.contact`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .chain import BeamChainSpec
from .contact import ContactConfig, ContactRecord

log = logging.getLogger(__name__)

INTEGRATORS = {"semi-implicit-euler": K.SEMI_IMPLICIT_EULER, "rk4": K.RK4}

# Marker triad on the distal link: tip centre and +-5 mm across the width.
MARKER_HALF_SPACING = 5.0  # mm


class SimulationError(RuntimeError):
    """Raised when a run produces a non-finite state or a singular system."""

    def __init__(self, message, time=None, joint=None):
        super().__init__(message)
        self.time = time
        self.joint = joint


@dataclass(frozen=True)
class DriveSignal:
    amplitude: float = 0.002  # m
    frequency: float = 0.0  # Hz
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or self.frequency < 0:
            raise ValueError("drive amplitude and frequency must be non-negative")
        if not math.isclose(float(np.linalg.norm(self.axis)), 1.0, abs_tol=1e-12):
            raise ValueError("drive axis must be a unit vector")

    def params(self, joint: int = 0) -> np.ndarray:
        return np.array([joint, self.amplitude, self.frequency, self.phase], dtype=float)


def drive_position(signal: DriveSignal, t: float) -> float:
    return signal.amplitude * math.sin(2.0 * math.pi * signal.frequency * t + signal.phase)


def drive_velocity(signal: DriveSignal, t: float) -> float:
    om = 2.0 * math.pi * signal.frequency
    return signal.amplitude * om * math.cos(om * t + signal.phase)


def drive_acceleration(signal: DriveSignal, t: float) -> float:
    om = 2.0 * math.pi * signal.frequency
    return -signal.amplitude * om * om * math.sin(om * t + signal.phase)


def joint_torque(k: float, b: float, theta: float, theta_dot: float, rest: float = 0.0) -> float:
    """Restoring spring-damper torque about a joint."""
    return -(k * (theta - rest) + b * theta_dot)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    duration: float = 10.0
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    integrator: str = "semi-implicit-euler"
    record_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must cover at least one step")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class ChainState:
    """Beam joint deflections from the natural shape plus the stage position."""

    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    base_x: float = 0.0
    base_v: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.theta_dot = np.asarray(self.theta_dot, dtype=float)
        if self.theta.shape != self.theta_dot.shape:
            raise ValueError("theta and theta_dot differ in length")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.theta_dot))):
            raise ValueError("state has non-finite entries")

    @classmethod
    def rest(cls, n: int, t: float = 0.0) -> ChainState:
        return cls(t, np.zeros(n), np.zeros(n))

    def q(self) -> np.ndarray:
        return np.concatenate(([self.base_x], self.theta))

    def qd(self) -> np.ndarray:
        return np.concatenate(([self.base_v], self.theta_dot))


# --- compiled model ---------------------------------------------------------


@dataclass
class ChainModel:
    """Flat arrays describing a serial chain for the kernels (SI units)."""

    jtype: np.ndarray
    R0: np.ndarray
    p0: np.ndarray
    axis: np.ndarray
    rest: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    Ic: np.ndarray
    k: np.ndarray
    b: np.ndarray
    armature: np.ndarray
    names: list = field(default_factory=list)
    points: dict = field(default_factory=dict)  # name -> (body, offset in body frame)

    @property
    def n(self) -> int:
        return len(self.jtype)

    def kin_args(self):
        return self.jtype, self.R0, self.p0, self.axis, self.rest

    def dyn_args(self):
        return (*self.kin_args(), self.mass, self.com, self.Ic, self.k, self.b, self.armature)


class ModelBuilder:
    """Appends joint/body pairs to a serial chain."""

    def __init__(self):
        self._rows = []
        self.points = {}

    def add(self, kind, axis, *, R0=None, p0=(0.0, 0.0, 0.0), rest=0.0, k=0.0, b=0.0,
            armature=0.0, mass=0.0, com=(0.0, 0.0, 0.0), inertia=None, name=""):
        self._rows.append(dict(
            jtype=K.REVOLUTE if kind == "revolute" else K.PRISMATIC,
            R0=np.eye(3) if R0 is None else np.asarray(R0, dtype=float),
            p0=np.asarray(p0, dtype=float),
            axis=np.asarray(axis, dtype=float),
            rest=float(rest), k=float(k), b=float(b), armature=float(armature),
            mass=float(mass), com=np.asarray(com, dtype=float),
            Ic=np.zeros((3, 3)) if inertia is None else np.asarray(inertia, dtype=float),
            name=name,
        ))
        return len(self._rows) - 1

    def add_point_mass(self, body, mass, offset):
        """Lump a point mass into ``body`` (parallel-axis update)."""
        row = self._rows[body]
        m0, c0 = row["mass"], row["com"]
        d = np.asarray(offset, dtype=float)
        m = m0 + mass
        if m == 0:
            return
        c = (m0 * c0 + mass * d) / m
        I = row["Ic"].copy()
        for mi, ci in ((m0, c0), (mass, d)):
            r = ci - c
            I += mi * (np.dot(r, r) * np.eye(3) - np.outer(r, r))
        row.update(mass=m, com=c, Ic=I)

    def build(self) -> ChainModel:
        rows = self._rows
        stack = lambda key, dtype=float: np.ascontiguousarray(
            np.array([r[key] for r in rows], dtype=dtype)
        )
        return ChainModel(
            jtype=stack("jtype", np.int64), R0=stack("R0"), p0=stack("p0"), axis=stack("axis"),
            rest=stack("rest"), mass=stack("mass"), com=stack("com"), Ic=stack("Ic"),
            k=stack("k"), b=stack("b"), armature=stack("armature"),
            names=[r["name"] for r in rows], points=dict(self.points),
        )


def add_beam(builder: ModelBuilder, spec: BeamChainSpec, parent_R0=None, parent_p0=(0, 0, 0),
             scale: float = 1.0) -> int:
    """Append the beam joints of ``spec``; returns the index of the distal body.

    ``scale`` multiplies masses, inertias, stiffness and damping (a stand-in
    for several identical legs moving in mirror-symmetric lockstep).
    Registers the points ``tip``, ``m1``..``m3`` and, with a foot, ``foot``.
    """
    prev_station = spec.joints[0].position
    first = None
    for i, (joint, link) in enumerate(zip(spec.joints, spec.links)):
        offset = (joint.position - prev_station) * 1e-3
        prev_station = joint.position
        idx = builder.add(
            "revolute", joint.axis,
            R0=parent_R0 if i == 0 else None,
            p0=np.asarray(parent_p0, dtype=float) if i == 0 else (offset, 0.0, 0.0),
            rest=joint.rest_angle, k=scale * joint.stiffness, b=scale * joint.damping,
            armature=scale * joint.armature, mass=scale * link.mass * 1e-3,
            com=(link.com_offset * 1e-3, 0.0, 0.0),
            inertia=scale * np.asarray(link.inertia, dtype=float), name=joint.name,
        )
        if first is None:
            first = idx
    last = idx
    tip = np.array([spec.links[-1].length * 1e-3, 0.0, 0.0])
    h = MARKER_HALF_SPACING * 1e-3
    builder.points.update({
        "tip": (last, tip),
        "m1": (last, tip),
        "m2": (last, tip + np.array([0.0, h, 0.0])),
        "m3": (last, tip - np.array([0.0, h, 0.0])),
    })
    if spec.foot is not None:
        r_last = spec.natural_rotations()[-1]
        corner = tip + r_last.T @ (spec.foot.corner() * 1e-3)
        builder.add_point_mass(last, scale * spec.foot.mass * 1e-3, corner)
        builder.points["foot"] = (last, corner)
    return last


@lru_cache(maxsize=64)
def compile_chain(spec: BeamChainSpec, drive_axis=(0.0, 0.0, 1.0)) -> ChainModel:
    """Stage (prescribed prismatic joint along ``drive_axis``) followed by the beam."""
    builder = ModelBuilder()
    builder.add("prismatic", drive_axis, name="stage")
    add_beam(builder, spec)
    return builder.build()


def contact_point_name(spec: BeamChainSpec) -> str:
    return "foot" if spec.foot is not None else "tip"


# --- loads ------------------------------------------------------------------


@dataclass
class Loads:
    """Kernel-ready arrays for contact, constant point forces and a rotating force."""

    cbody: np.ndarray
    coff: np.ndarray
    cground: np.ndarray
    cnormal: np.ndarray
    ctangent: np.ndarray
    cparams: np.ndarray
    fbody: np.ndarray
    foff: np.ndarray
    fvec: np.ndarray
    rparams: np.ndarray
    wext: np.ndarray | None = None  # n x 6 world wrenches (force, moment about body origin)

    @classmethod
    def none(cls) -> Loads:
        return cls(
            np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0), np.array([0.0, 0.0, 1.0]),
            np.array([1.0, 0.0, 0.0]), np.zeros((0, 5)),
            np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(12),
        )

    def args(self):
        return (self.cbody, self.coff, self.cground, self.cnormal, self.ctangent, self.cparams,
                self.fbody, self.foff, self.fvec, self.rparams)

    def with_contacts(self, contact: ContactConfig, bodies, offsets, grounds, multiplicity=1.0,
                      mu=None):
        """Append contact points sharing the plane orientation of ``contact``.

        ``multiplicity`` and ``mu`` may be scalars or one value per point.
        """
        n = len(bodies)
        mult = np.broadcast_to(np.asarray(multiplicity, dtype=float), (n,))
        mus = np.broadcast_to(np.asarray(contact.mu if mu is None else mu, dtype=float), (n,))
        rows = np.array([[contact.k_n, contact.c_n, mus[i], contact.v_reg, mult[i]] for i in range(n)])
        return replace(
            self,
            cbody=np.concatenate([self.cbody, np.asarray(bodies, dtype=np.int64)]),
            coff=np.vstack([self.coff, np.asarray(offsets, dtype=float).reshape(-1, 3)]),
            cground=np.concatenate([self.cground, np.asarray(grounds, dtype=float)]),
            cnormal=np.asarray(contact.normal, dtype=float),
            ctangent=np.asarray(contact.tangent, dtype=float),
            cparams=np.vstack([self.cparams, rows.reshape(-1, 5)]),
        )

    def with_point_forces(self, bodies, offsets, vectors):
        return replace(
            self,
            fbody=np.asarray(bodies, dtype=np.int64),
            foff=np.asarray(offsets, dtype=float).reshape(-1, 3),
            fvec=np.asarray(vectors, dtype=float).reshape(-1, 3),
        )

    def with_rotating_force(self, body, offset, magnitude, omega, e1, e2):
        return replace(self, rparams=np.array([body, magnitude, omega, *e1, *e2, *offset], dtype=float))


# --- evaluations at a single state -----------------------------------------


def _kinematics(model: ChainModel, q, qd):
    n = model.n
    R = np.empty((n, 3, 3))
    x = np.empty((n, 3))
    z = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    K.forward_kinematics(*model.kin_args(), np.ascontiguousarray(q, dtype=float),
                         np.ascontiguousarray(qd, dtype=float), R, x, z, w, v)
    return R, x, z, w, v


def full_mass_matrix(model: ChainModel, q) -> np.ndarray:
    R, x, z, _, _ = _kinematics(model, q, np.zeros(model.n))
    M = np.empty((model.n, model.n))
    K.mass_matrix(model.jtype, model.mass, model.com, model.Ic, model.armature, R, x, z, M)
    return M


def inverse_dynamics(model: ChainModel, q, qd, qdd, gravity=(0.0, 0.0, 0.0), fext=None, next_=None):
    """Generalized forces M qdd + C + g - J^T f_ext, armature excluded."""
    n = model.n
    R, x, z, w, v = _kinematics(model, q, qd)
    tau = np.empty(n)
    fext = np.zeros((n, 3)) if fext is None else np.ascontiguousarray(fext, dtype=float)
    next_ = np.zeros((n, 3)) if next_ is None else np.ascontiguousarray(next_, dtype=float)
    K.rnea(model.jtype, model.mass, model.com, model.Ic, R, x, z, w,
           np.ascontiguousarray(qd, dtype=float), np.ascontiguousarray(qdd, dtype=float),
           np.asarray(gravity, dtype=float), fext, next_, tau)
    return tau


def mass_matrix(spec: BeamChainSpec, state: ChainState) -> np.ndarray:
    """Joint-space inertia of the beam joints (stage excluded), kg m^2."""
    model = compile_chain(spec)
    return full_mass_matrix(model, state.q())[1:, 1:]


def _wrench_arrays(model, external_forces):
    n = model.n
    fext = np.zeros((n, 3))
    next_ = np.zeros((n, 3))
    if external_forces is not None:
        w = np.asarray(external_forces, dtype=float)
        if w.shape != (n - 1, 6):
            raise ValueError(f"expected one wrench per link, shape {(n - 1, 6)}, got {w.shape}")
        fext[1:] = w[:, :3]
        next_[1:] = w[:, 3:]
    return fext, next_


def forward_dynamics(spec: BeamChainSpec, state: ChainState, drive: DriveSignal | None = None,
                     external_forces=None, gravity=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Joint accelerations of the beam under springs, dampers, gravity and wrenches.

    ``external_forces`` holds one world-frame wrench per link (force, moment
    about the link's joint origin). The stage follows ``drive`` exactly.
    """
    model = compile_chain(spec, tuple(drive.axis) if drive else (0.0, 0.0, 1.0))
    drive = drive or DriveSignal(amplitude=0.0)
    t = state.t
    q = np.concatenate(([drive_position(drive, t)], state.theta))
    qd = np.concatenate(([drive_velocity(drive, t)], state.theta_dot))
    qdd = np.zeros(model.n)
    qdd[0] = drive_acceleration(drive, t)
    fext, next_ = _wrench_arrays(model, external_forces)
    bias = inverse_dynamics(model, q, qd, qdd, gravity, fext, next_)
    M = full_mass_matrix(model, q)
    rhs = -model.k[1:] * q[1:] - model.b[1:] * qd[1:] - bias[1:]
    L = np.linalg.cholesky(M[1:, 1:])
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def mechanical_energy(spec: BeamChainSpec, state: ChainState, gravity=(0.0, 0.0, 0.0)) -> float:
    """Kinetic + gravitational + joint spring energy (J)."""
    model = compile_chain(spec)
    ke, pe = K.energy(state.q(), state.qd(), *model.kin_args(), model.mass, model.com, model.Ic,
                      model.k, model.armature, np.asarray(gravity, dtype=float))
    return ke + pe


def model_energy(model: ChainModel, q, qd, gravity) -> float:
    ke, pe = K.energy(np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(qd, dtype=float),
                      *model.kin_args(), model.mass, model.com, model.Ic, model.k,
                      model.armature, np.asarray(gravity, dtype=float))
    return ke + pe


# --- time stepping ---------------------------------------------------------


@dataclass
class RawRun:
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    points: np.ndarray
    contacts: np.ndarray
    q_final: np.ndarray
    qd_final: np.ndarray


def run_model(model: ChainModel, q0, qd0, *, t0=0.0, dt, n_steps, stride=1,
              integrator="semi-implicit-euler", gravity=(0.0, 0.0, 0.0), drive_params=None,
              loads: Loads | None = None, points=()) -> RawRun:
    """Integrate a compiled model; raises :class:`SimulationError` on failure."""
    loads = loads or Loads.none()
    dparams = np.array([-1.0, 0.0, 0.0, 0.0]) if drive_params is None else drive_params
    tbody = np.array([model.points[p][0] for p in points], dtype=np.int64)
    toff = np.array([model.points[p][1] for p in points], dtype=float).reshape(-1, 3)
    res = K.simulate(
        np.ascontiguousarray(q0, dtype=float), np.ascontiguousarray(qd0, dtype=float),
        float(t0), float(dt), int(n_steps), int(stride), INTEGRATORS[integrator],
        *model.dyn_args(), np.asarray(gravity, dtype=float), dparams, *loads.args(),
        np.zeros((model.n, 6)) if loads.wext is None else np.ascontiguousarray(loads.wext),
        tbody, toff,
    )
    status, fail_step, fail_joint = res[0], res[1], res[2]
    if status != K.STATUS_OK:
        t_fail = t0 + fail_step * dt
        name = model.names[fail_joint] if fail_joint >= 0 else "?"
        what = "non-finite state" if status == K.STATUS_NONFINITE else "singular mass matrix"
        raise SimulationError(
            f"{what} at t={t_fail:.6g} s (joint {fail_joint} {name})", t_fail, fail_joint
        )
    return RawRun(*res[3:])


def step(spec: BeamChainSpec, state: ChainState, drive: DriveSignal, contact_forces=None,
         dt: float = 1e-4, integrator: str = "semi-implicit-euler",
         gravity=(0.0, 0.0, 0.0)) -> ChainState:
    """Advance one fixed step. ``contact_forces``: one world wrench per link."""
    model = compile_chain(spec, tuple(drive.axis))
    fext, next_ = _wrench_arrays(model, contact_forces)
    loads = replace(Loads.none(), wext=np.hstack([fext, next_]))
    raw = run_model(model, state.q(), state.qd(), t0=state.t, dt=dt, n_steps=1, stride=1,
                    integrator=integrator, gravity=gravity, drive_params=drive.params(0),
                    loads=loads)
    q, qd = raw.q_final, raw.qd_final
    return ChainState(state.t + dt, q[1:].copy(), qd[1:].copy(), float(q[0]), float(qd[0]))


@dataclass
class SimResult:
    """Sampled output of :func:`simulate`. Points are world coordinates in m."""

    times: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    base: np.ndarray
    points: dict
    contact: ContactRecord | None
    dt: float
    meta: dict = field(default_factory=dict)

    @property
    def tip(self) -> np.ndarray:
        return self.points["tip"]

    def to_csv(self, path, point_names=None, header_lines=()):
        """Write ``t[s]`` plus x/y/z columns per point and contact columns."""
        names = list(point_names or self.points)
        cols = ["t[s]"]
        for nm in names:
            cols += [f"{nm}_x[m]", f"{nm}_y[m]", f"{nm}_z[m]"]
        if self.contact is not None:
            cols += ["fn[N]", "ft[N]", "gap[m]", "contact"]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# dt={self.dt!r}\n")
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                for nm in names:
                    row += [repr(float(c)) for c in self.points[nm][i]]
                if self.contact is not None:
                    c = self.contact
                    row += [repr(float(c.fn[i])), repr(float(c.ft[i])), repr(float(c.gap[i])),
                            str(int(c.in_contact[i]))]
                wr.writerow(row)


def natural_point(spec: BeamChainSpec, name: str, drive_axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World position of a registered point with the beam at its natural shape."""
    model = compile_chain(spec, tuple(drive_axis))
    R, x, _, _, _ = _kinematics(model, np.zeros(model.n), np.zeros(model.n))
    body, off = model.points[name]
    return x[body] + R[body] @ off


def simulate(spec: BeamChainSpec, drive: DriveSignal, contact: ContactConfig | None = None,
             sim: SimConfig = SimConfig(), *, initial: ChainState | None = None,
             points=("tip", "m1", "m2", "m3")) -> SimResult:
    """Run the stage-driven beam for ``sim.duration`` seconds.

    With a foot the reported ``tip`` is the foot's contact corner.
    """
    model = compile_chain(spec, tuple(drive.axis))
    n = model.n
    initial = initial or ChainState.rest(n - 1)
    loads = Loads.none()
    cname = contact_point_name(spec)
    if contact is not None:
        body, off = model.points[cname]
        p_nat = natural_point(spec, cname, tuple(drive.axis))
        ground = float(np.dot(contact.normal, p_nat)) - contact.natural_gap
        if contact.ground_height is not None:
            ground = contact.ground_height
        loads = loads.with_contacts(contact, [body], [off], [ground])
    names = list(points)
    if spec.foot is not None:
        names = ["foot" if p == "tip" else p for p in names]
    raw = run_model(model, initial.q(), initial.qd(), t0=initial.t, dt=sim.dt,
                    n_steps=sim.n_steps, stride=sim.record_stride, integrator=sim.integrator,
                    gravity=sim.gravity, drive_params=drive.params(0), loads=loads, points=names)
    pts = {("tip" if nm == "foot" else nm): raw.points[:, i, :].copy() for i, nm in enumerate(names)}
    record = None
    if contact is not None:
        c = raw.contacts[:, 0, :]
        record = ContactRecord(raw.times.copy(), c[:, 0].copy(), c[:, 1].copy(), c[:, 2].copy(),
                               c[:, 3] > 0.5)
    return SimResult(
        times=raw.times, theta=raw.q[:, 1:], theta_dot=raw.qd[:, 1:], base=raw.q[:, 0],
        points=pts, contact=record, dt=sim.dt,
        meta={"dt": sim.dt, "integrator": sim.integrator, "frequency": drive.frequency,
              "amplitude": drive.amplitude},
    )
