"""Planar two-leg walker driven by a rotating imbalance.

The body moves in the sagittal X-Z plane with pitch. Two legs are mounted
as mirror images across that plane (one per side, opposite chirality).
Because the body cannot roll or move sideways, both legs follow the same
X-Z motion, so a single representative leg with doubled mass, stiffness,
damping and contact carries the pair exactly. The tail cart is a point
contact under the tail with its own (low) friction.

Coordinates: X forward, Z up, legs stick out along +Y / -Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chain import BeamChainSpec, FootSpec, mirror_chirality, fitted_beam
from .contact import ContactConfig
from .dynamics import (
    DriveSignal, Loads, ModelBuilder, SimulationError, _kinematics, add_beam, inverse_dynamics,
    run_model,
)

G = 9.81
WALKER_CONTACT = ContactConfig(normal=(0.0, 0.0, 1.0), tangent=(1.0, 0.0, 0.0), natural_gap=0.0)

# leg root frame -> body frame: beam axis along +Y, root y up, root z forward
_MOUNT = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
_REFLECT_Y = np.diag([1.0, -1.0, 1.0])
_REFLECT_Z = np.diag([1.0, 1.0, -1.0])
# The opposite-side leg is the world Y-reflection of the first. In its own
# root frame that is a z-reflection, i.e. the opposite chirality with the
# foot still hanging down.
_MOUNT_MIRRORED = _REFLECT_Y @ _MOUNT @ _REFLECT_Z


@dataclass(frozen=True)
class WalkerSpec:
    """Walker layout in mm, g and degrees.

    The body frame origin sits midway between the hips. The plate spans
    ``front`` mm ahead of it to ``length - front`` mm behind it, where the
    tail cart rests.
    """

    leg: BeamChainSpec = field(default_factory=lambda: fitted_beam(90.0, foot=FootSpec()))
    plate_mass: float = 150.0  # plate + motor, without the imbalance
    cart_mass: float = 100.0
    length: float = 295.0
    front: float = 20.0
    hip_half_width: float = 30.0
    motor_x: float = -20.0
    imbalance_mass: float = 40.0
    eccentricity: float = 1.0
    tail_mu: float = 0.05
    contact: ContactConfig = WALKER_CONTACT
    side: int = 1  # side of the representative leg: +1 -> +Y, -1 -> -Y

    def __post_init__(self):
        if self.imbalance_mass < 0 or self.eccentricity < 0:
            raise ValueError("imbalance mass and eccentricity must be non-negative")
        if self.plate_mass <= 0 or self.cart_mass < 0 or self.length <= self.front:
            raise ValueError("invalid body mass or length")
        if self.leg.foot is None:
            raise ValueError("walker legs need a foot")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")

    @property
    def tail_x(self) -> float:
        return self.front - self.length

    def mirrored(self) -> WalkerSpec:
        """Use the opposite-side leg as the representative one."""
        leg = mirror_chirality(self.leg)
        x, y, z = leg.foot.corner_offset
        leg = replace(leg, foot=replace(leg.foot, corner_offset=(x, y, -z)))
        return replace(self, leg=leg, side=-self.side)

    def imbalance_force(self, frequency: float) -> float:
        om = 2.0 * math.pi * frequency
        return self.imbalance_mass * 1e-3 * self.eccentricity * 1e-3 * om * om


@dataclass
class WalkerModel:
    model: object
    body: int
    ground: float
    contact_points: tuple
    spec: WalkerSpec

    def loads(self, frequency: float = 0.0) -> Loads:
        s = self.spec
        bodies, offsets, mult, mu = [], [], [], []
        for name, m, friction in self.contact_points:
            b, off = self.model.points[name]
            bodies.append(b)
            offsets.append(off)
            mult.append(m)
            mu.append(friction)
        loads = Loads.none().with_contacts(s.contact, bodies, offsets, [self.ground] * len(bodies),
                                           multiplicity=mult, mu=mu)
        if frequency > 0.0 and s.imbalance_force(frequency) > 0.0:
            loads = loads.with_rotating_force(
                self.body, (s.motor_x * 1e-3, 0.0, 0.0), s.imbalance_force(frequency),
                2.0 * math.pi * frequency, (1.0, 0.0, 0.0), (0.0, 0.0, 1.0),
            )
        return loads


def build_walker(spec: WalkerSpec) -> WalkerModel:
    """Compile the planar body (x, z, pitch) plus one doubled leg."""
    b = ModelBuilder()
    b.add("prismatic", (1.0, 0.0, 0.0), name="body_x")
    b.add("prismatic", (0.0, 0.0, 1.0), name="body_z")
    L = spec.length * 1e-3
    mp = spec.plate_mass * 1e-3
    xc = (spec.front - spec.length / 2.0) * 1e-3
    Iyy = mp * L * L / 12.0
    body = b.add("revolute", (0.0, 1.0, 0.0), mass=mp, com=(xc, 0.0, 0.0),
                 inertia=np.diag([Iyy * 0.1, Iyy, Iyy]), name="body_pitch")
    leg = spec.leg
    mount = _MOUNT if spec.side > 0 else _MOUNT_MIRRORED
    hip = np.array([0.0, spec.side * spec.hip_half_width * 1e-3, 0.0])
    add_beam(b, leg, parent_R0=mount, parent_p0=hip, scale=2.0)
    foot_local = leg.foot.corner() * 1e-3  # in the leg root frame at the natural shape
    foot_nat = hip + mount @ (np.array([leg.total_length * 1e-3, 0.0, 0.0]) + foot_local)
    ground = float(foot_nat[2])
    tail = np.array([spec.tail_x * 1e-3, 0.0, ground])
    b.add_point_mass(body, spec.cart_mass * 1e-3, tail)
    b.add_point_mass(body, spec.imbalance_mass * 1e-3, (spec.motor_x * 1e-3, 0.0, 0.0))
    b.points["tail"] = (body, tail)
    b.points["hip"] = (body, hip)
    b.points["motor"] = (body, np.array([spec.motor_x * 1e-3, 0.0, 0.0]))
    model = b.build()
    cps = (("foot", 2.0, spec.contact.mu), ("tail", 1.0, spec.tail_mu))
    return WalkerModel(model, body, ground, cps, spec)


class StanceError(RuntimeError):
    """No static stance found for the walker."""


def _stance_residual(wm: WalkerModel, q, gravity):
    m = wm.model
    R, x, _, _, _ = _kinematics(m, q, np.zeros(m.n))
    fext = np.zeros((m.n, 3))
    next_ = np.zeros((m.n, 3))
    normal = np.asarray(wm.spec.contact.normal, dtype=float)
    for name, mult, _ in wm.contact_points:
        b, off = m.points[name]
        r = R[b] @ off
        gap = float(normal @ (x[b] + r)) - wm.ground
        f = mult * max(0.0, -wm.spec.contact.k_n * gap) * normal
        fext[b] += f
        next_[b] += np.cross(r, f)
    tau = inverse_dynamics(m, q, np.zeros(m.n), np.zeros(m.n), gravity, fext, next_)
    return tau + m.k * q


def static_stance(wm: WalkerModel, gravity=(0.0, 0.0, -G), tol=1e-12, max_iter=400):
    """Resting pose on feet and tail with no friction load.

    Horizontal position is fixed at zero; with vertical gravity and
    frictionless contact its residual vanishes identically, so the pose
    is an exact rest state of the frictional model as well. Newton steps
    are capped (0.5 mm, 0.02 rad) because the contact is far stiffer than
    the legs.
    """
    m = wm.model
    gravity = np.asarray(gravity, dtype=float)
    free = np.arange(1, m.n)
    cap = np.where(m.jtype[free] == 1, 5e-4, 0.02)  # prismatic joints in m
    q = np.zeros(m.n)
    q[1] = -1e-4
    r = _stance_residual(wm, q, gravity)[free]
    h = 1e-8
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return q
        J = np.empty((len(free), len(free)))
        for c, j in enumerate(free):
            e = np.zeros(m.n)
            e[j] = h
            J[:, c] = (_stance_residual(wm, q + e, gravity)[free]
                       - _stance_residual(wm, q - e, gravity)[free]) / (2 * h)
        dq = np.linalg.lstsq(J, -r, rcond=None)[0]
        dq *= min(1.0, float(np.min(cap / np.maximum(np.abs(dq), 1e-300))))
        step = 1.0
        while step > 1e-8:
            trial = q.copy()
            trial[free] += step * dq
            r_new = _stance_residual(wm, trial, gravity)[free]
            if np.linalg.norm(r_new) < np.linalg.norm(r):
                break
            step *= 0.5
        else:
            break
        q, r = trial, r_new
    if np.max(np.abs(r)) < tol:
        return q
    raise StanceError(f"stance solve did not converge: residual {np.max(np.abs(r)):.3e}")


@dataclass
class WalkerRun:
    frequency: float
    times: np.ndarray
    body: np.ndarray  # (n, 3): x, z, pitch
    foot: np.ndarray  # (n, 3) world m
    contacts: np.ndarray  # (n, n_points, 4)
    net_displacement: float
    mean_speed: float
    min_clearance: float
    failed: str = ""


def _net_advance(times, x, frequency: float) -> tuple[float, float]:
    """Body advance over the last half of a run and the time it spans.

    With a drive, positions are averaged over one drive period at each end of a
    whole number of periods, so the in-cycle sway does not leak into the result.
    """
    t_end = float(times[-1])
    half = len(times) // 2
    period = 1.0 / frequency if frequency > 0 else 0.0
    n = int(math.floor((t_end - times[half]) / period + 1e-9)) - 1 if period else 0
    if n < 1:
        return float(x[-1] - x[half]), float(t_end - times[half])
    late = times >= t_end - period - 1e-12
    early = (times >= t_end - (n + 1) * period - 1e-12) & (times < t_end - n * period - 1e-12)
    return float(x[late].mean() - x[early].mean()), n * period


def run_walk(spec: WalkerSpec, frequency: float, duration: float = 5.0, dt: float = 1e-4,
             stride: int = 10, integrator: str = "semi-implicit-euler",
             gravity=(0.0, 0.0, -G)) -> WalkerRun:
    """Start from the static stance and run the imbalance at ``frequency``.

    Displacement and speed are measured over whole drive periods in the last half of the run.
    """
    wm = build_walker(spec)
    m = wm.model
    n = m.n
    idle = DriveSignal(0.0, 0.0).params(-1)
    try:
        q, qd = static_stance(wm, gravity), np.zeros(n)
        raw = run_model(m, q, qd, dt=dt, n_steps=int(round(duration / dt)), stride=stride,
                        integrator=integrator, gravity=gravity, drive_params=idle,
                        loads=wm.loads(frequency), points=("foot", "hip", "tail"))
    except (SimulationError, StanceError) as exc:
        empty = np.zeros((0, 3))
        return WalkerRun(frequency, np.zeros(0), empty, empty, np.zeros((0, 2, 4)),
                         math.nan, math.nan, math.nan, failed=str(exc))
    body = raw.q[:, :3].copy()
    dx, span = _net_advance(raw.times, body[:, 0], frequency)
    hip_z = raw.points[:, 1, 2]
    clearance = float(np.min(hip_z - wm.ground))
    failed = ""
    if clearance <= 0.0:
        failed = f"body below ground plane (clearance {clearance:.3e} m)"
    return WalkerRun(frequency, raw.times.copy(), body, raw.points[:, 0, :].copy(),
                     raw.contacts.copy(), dx, dx / span if span > 0 else 0.0, clearance, failed)


def leg_kinematics(spec: WalkerSpec, q) -> dict:
    """World positions of the registered walker points for one state."""
    wm = build_walker(spec)
    R, x, _, _, _ = _kinematics(wm.model, q, np.zeros(wm.model.n))
    return {name: x[b] + R[b] @ off for name, (b, off) in wm.model.points.items()}
