"""Pseudo-rigid-body description of a twisted beam.

A beam is represented as a serial chain of revolute joints separated by
rigid links. Bending joints rotate about the link's width direction (local
y), twist joints about the beam axis (local x). The twist of the beam lives
in the rest angles of the twist joints, so joint coordinates measure the
deflection from the natural (unloaded) shape.

Dataclass fields use the configuration units of the design table (mm, g,
degrees); stiffness and damping are already SI (N*m/rad, N*m*s/rad).
Conversion to SI happens when a chain is compiled for simulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SCHEMA_NAME = "twistbeam.chain"
SCHEMA_VERSION = 1

BENDING = "bending"
TWIST = "twist"

# Rotor inertia added on every joint of a built beam. Keeps the mass matrix
# regular when two coincident bending joints become coaxial (phi = 0).
DEFAULT_ARMATURE = 1e-8  # kg m^2

_LENGTH_TOL = 1e-9  # mm


class ChainSpecError(ValueError):
    """Raised for an inconsistent beam or chain description."""


@dataclass(frozen=True)
class BeamGeometry:
    """Beam dimensions (mm, g, deg).

    ``twist`` is the signed total twist; ``segment_twist`` is the signed
    twist carried by each of the two twist joints. Width, thickness and
    density only enter the link cross-section inertia.
    """

    length: float = 50.0
    width: float = 20.0
    thickness: float = 3.0
    twist: float = 90.0
    segment_twist: float = 45.0
    density: float = 1210.0
    mass: float = 5.17

    def __post_init__(self):
        if self.length <= 0 or self.mass <= 0 or self.density <= 0:
            raise ChainSpecError("beam length, mass and density must be positive")
        if self.width < 0 or self.thickness < 0:
            raise ChainSpecError("beam width and thickness must be non-negative")
        if abs(self.twist) > 180.0:
            raise ChainSpecError(f"|twist| must not exceed 180 deg, got {self.twist}")
        if not math.isclose(2.0 * self.segment_twist, self.twist, rel_tol=0.0, abs_tol=1e-9):
            raise ChainSpecError(
                f"segment twists (2 x {self.segment_twist} deg) must add up to the total twist "
                f"{self.twist} deg"
            )

    def with_twist(self, twist: float) -> BeamGeometry:
        return replace(self, twist=twist, segment_twist=twist / 2.0)


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: tuple[float, float, float]
    stiffness: float
    damping: float
    rest_angle: float = 0.0  # rad
    position: float = 0.0  # mm along the beam axis
    armature: float = 0.0  # kg m^2
    name: str = ""

    def __post_init__(self):
        if self.kind not in (BENDING, TWIST):
            raise ChainSpecError(f"unknown joint kind {self.kind!r}")
        if self.stiffness < 0 or self.damping < 0:
            raise ChainSpecError(
                f"joint {self.name or self.kind}: stiffness and damping must be non-negative"
            )
        if self.armature < 0:
            raise ChainSpecError("joint armature must be non-negative")
        if not math.isclose(float(np.linalg.norm(self.axis)), 1.0, abs_tol=1e-12):
            raise ChainSpecError(f"joint axis {self.axis} is not a unit vector")
        along = abs(self.axis[0])
        if self.kind == TWIST and not math.isclose(along, 1.0, abs_tol=1e-12):
            raise ChainSpecError("twist joints must be aligned with the beam axis")
        if self.kind == BENDING and along > 1e-12:
            raise ChainSpecError("bending joints must be perpendicular to the beam axis")


@dataclass(frozen=True)
class LinkSpec:
    """Rigid segment following a joint.

    ``inertia`` is the 3x3 tensor about the centre of mass, in kg m^2 and in
    the link frame (x along the beam, y across the width).
    """

    length: float  # mm
    mass: float  # g
    inertia: tuple[tuple[float, float, float], ...] = ((0.0,) * 3,) * 3
    com_offset: float = 0.0  # mm along local x


@dataclass(frozen=True)
class FootSpec:
    """Rigid foot hanging from the beam tip.

    The foot extends ``length`` mm from the tip along -y of the root frame;
    ``corner_offset`` (mm, root frame) shifts the contact corner, which also
    carries the point mass.
    """

    length: float = 66.5
    mass: float = 20.0
    corner_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.length < 0 or self.mass < 0:
            raise ChainSpecError("foot length and mass must be non-negative")

    def corner(self) -> np.ndarray:
        """Contact corner relative to the beam tip, root frame, mm."""
        return np.array([0.0, -self.length, 0.0]) + np.asarray(self.corner_offset, dtype=float)


@dataclass(frozen=True)
class BeamChainSpec:
    geometry: BeamGeometry
    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    foot: FootSpec | None = None

    def __post_init__(self):
        if len(self.joints) != len(self.links):
            raise ChainSpecError("every joint must be followed by exactly one link")
        if not self.joints:
            raise ChainSpecError("chain has no joints")
        stations = [j.position for j in self.joints]
        if any(b < a for a, b in zip(stations, stations[1:])):
            raise ChainSpecError("joint stations must be non-decreasing along the beam")
        if stations[0] < 0:
            raise ChainSpecError("first joint must not lie before the beam root")
        for i, (joint, link) in enumerate(zip(self.joints, self.links)):
            end = self.joints[i + 1].position if i + 1 < len(self.joints) else stations[0] + sum(
                lk.length for lk in self.links
            )
            if not math.isclose(joint.position + link.length, end, abs_tol=1e-6):
                raise ChainSpecError(f"link {i} length does not reach the next joint")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def total_length(self) -> float:
        return sum(lk.length for lk in self.links)

    @property
    def total_mass(self) -> float:
        return sum(lk.mass for lk in self.links)

    def natural_rotations(self) -> list[np.ndarray]:
        """Rotation of every link frame relative to the root at the natural shape."""
        rots = []
        r = np.eye(3)
        for joint in self.joints:
            r = r @ axis_rotation(joint.axis, joint.rest_angle)
            rots.append(r)
        return rots


def axis_rotation(axis, angle: float) -> np.ndarray:
    """Rotation matrix about a unit axis (Rodrigues)."""
    a = np.asarray(axis, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = a
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def distribute_mass(mass: float, length: float, segment_lengths) -> list[float]:
    """Split ``mass`` over segments in proportion to their lengths.

    The last segment absorbs the rounding remainder so the masses add up to
    ``mass``.
    """
    seg = [float(s) for s in segment_lengths]
    if not seg:
        raise ChainSpecError("no segments to distribute mass over")
    if any(s < 0 for s in seg):
        raise ChainSpecError("segment lengths must be non-negative")
    if not math.isclose(sum(seg), length, rel_tol=0.0, abs_tol=_LENGTH_TOL):
        raise ChainSpecError(f"segment lengths add up to {sum(seg)} mm, expected {length} mm")
    density = mass / length
    masses = [density * s for s in seg[:-1]]
    masses.append(mass - math.fsum(masses))
    return masses


def bar_inertia(mass_g: float, length_mm: float, width_mm: float, thickness_mm: float):
    """Uniform rectangular bar about its centre (kg m^2), x along the bar, y across the width."""
    m = mass_g * 1e-3
    l, w, t = length_mm * 1e-3, width_mm * 1e-3, thickness_mm * 1e-3
    ixx = m * (w * w + t * t) / 12.0
    iyy = m * (l * l + t * t) / 12.0
    izz = m * (l * l + w * w) / 12.0
    return ((ixx, 0.0, 0.0), (0.0, iyy, 0.0), (0.0, 0.0, izz))


_Y = (0.0, 1.0, 0.0)
_X = (1.0, 0.0, 0.0)


def build_twisted_beam(
    geometry: BeamGeometry,
    k: float,
    b: float,
    l2: float,
    l3: float,
    foot: FootSpec | None = None,
    *,
    twist_stiffness: float | None = None,
    twist_damping: float | None = None,
    armature: float = DEFAULT_ARMATURE,
) -> BeamChainSpec:
    """Simplified five-joint beam with the first segment collapsed (l1 = 0).

    Layout from root to tip: R1 (bend) -> R4 (twist) -> R2 (bend) at the
    root, link of length ``l2``, then R5 (twist) -> R3 (bend) and the distal
    link of length ``l3``. Twist joints default to the bending ``k`` and ``b``.
    """
    if k < 0 or b < 0:
        raise ChainSpecError("stiffness k and damping b must be non-negative")
    if l2 < 0 or l3 < 0:
        raise ChainSpecError("segment lengths must be non-negative")
    if not math.isclose(l2 + l3, geometry.length, rel_tol=0.0, abs_tol=_LENGTH_TOL):
        relation = "exceed" if l2 + l3 > geometry.length else "fall short of"
        raise ChainSpecError(
            f"segment lengths l2 + l3 = {l2 + l3} mm {relation} the beam length {geometry.length} mm"
        )
    kt = k if twist_stiffness is None else twist_stiffness
    bt = b if twist_damping is None else twist_damping
    rest = math.radians(geometry.segment_twist)

    joints = (
        JointSpec(BENDING, _Y, k, b, 0.0, 0.0, armature, "R1"),
        JointSpec(TWIST, _X, kt, bt, rest, 0.0, armature, "R4"),
        JointSpec(BENDING, _Y, k, b, 0.0, 0.0, armature, "R2"),
        JointSpec(TWIST, _X, kt, bt, rest, l2, armature, "R5"),
        JointSpec(BENDING, _Y, k, b, 0.0, l2, armature, "R3"),
    )
    lengths = [0.0, 0.0, l2, 0.0, l3]
    masses = distribute_mass(geometry.mass, geometry.length, lengths)
    links = tuple(
        LinkSpec(
            length=ln,
            mass=m,
            inertia=bar_inertia(m, ln, geometry.width, geometry.thickness),
            com_offset=ln / 2.0,
        )
        for ln, m in zip(lengths, masses)
    )
    return BeamChainSpec(geometry, joints, links, foot)


def mirror_chirality(spec: BeamChainSpec) -> BeamChainSpec:
    """Opposite handedness: twist and twist rest angles change sign.

    Everything else, including a foot, is kept as is.
    """
    g = spec.geometry
    geometry = replace(g, twist=-g.twist, segment_twist=-g.segment_twist)
    joints = tuple(
        replace(j, rest_angle=-j.rest_angle) if j.kind == TWIST else j for j in spec.joints
    )
    return BeamChainSpec(geometry, joints, spec.links, spec.foot)


# Fitted constants of the simplified model
FITTED = {"k": 0.340, "b": 0.0029, "l2": 23.66, "l3": 26.34}


def fitted_beam(twist: float = 90.0, foot: FootSpec | None = None) -> BeamChainSpec:
    geometry = BeamGeometry().with_twist(twist)
    return build_twisted_beam(geometry, foot=foot, **FITTED)


PRESETS = {"fitted": fitted_beam}


# --- JSON -------------------------------------------------------------------


def chain_to_dict(spec: BeamChainSpec) -> dict:
    g = spec.geometry
    return {
        "schema": SCHEMA_NAME,
        "version": SCHEMA_VERSION,
        "geometry": {
            "length_mm": g.length,
            "width_mm": g.width,
            "thickness_mm": g.thickness,
            "twist_deg": g.twist,
            "segment_twist_deg": g.segment_twist,
            "density_kg_per_m3": g.density,
            "mass_g": g.mass,
        },
        "joints": [
            {
                "name": j.name,
                "kind": j.kind,
                "axis": list(j.axis),
                "k_Nm_per_rad": j.stiffness,
                "b_Nms_per_rad": j.damping,
                "rest_angle_deg": math.degrees(j.rest_angle),
                "position_mm": j.position,
                "armature_kgm2": j.armature,
            }
            for j in spec.joints
        ],
        "links": [
            {
                "length_mm": lk.length,
                "mass_g": lk.mass,
                "inertia_kgm2": [list(r) for r in lk.inertia],
                "com_offset_mm": lk.com_offset,
            }
            for lk in spec.links
        ],
        "foot": None
        if spec.foot is None
        else {
            "length_mm": spec.foot.length,
            "mass_g": spec.foot.mass,
            "corner_offset_mm": list(spec.foot.corner_offset),
        },
    }


def chain_from_dict(data: dict) -> BeamChainSpec:
    if data.get("schema") != SCHEMA_NAME:
        raise ChainSpecError(f"not a chain document (schema={data.get('schema')!r})")
    if data.get("version") != SCHEMA_VERSION:
        raise ChainSpecError(f"unsupported chain document version {data.get('version')!r}")
    g = data["geometry"]
    geometry = BeamGeometry(
        length=g["length_mm"],
        width=g["width_mm"],
        thickness=g["thickness_mm"],
        twist=g["twist_deg"],
        segment_twist=g["segment_twist_deg"],
        density=g["density_kg_per_m3"],
        mass=g["mass_g"],
    )
    joints = tuple(
        JointSpec(
            kind=j["kind"],
            axis=tuple(j["axis"]),
            stiffness=j["k_Nm_per_rad"],
            damping=j["b_Nms_per_rad"],
            rest_angle=math.radians(j["rest_angle_deg"]),
            position=j["position_mm"],
            armature=j.get("armature_kgm2", 0.0),
            name=j.get("name", ""),
        )
        for j in data["joints"]
    )
    links = tuple(
        LinkSpec(
            length=lk["length_mm"],
            mass=lk["mass_g"],
            inertia=tuple(tuple(r) for r in lk["inertia_kgm2"]),
            com_offset=lk["com_offset_mm"],
        )
        for lk in data["links"]
    )
    f = data.get("foot")
    foot = None if f is None else FootSpec(f["length_mm"], f["mass_g"], tuple(f["corner_offset_mm"]))
    return BeamChainSpec(geometry, joints, links, foot)


def save_chain(spec: BeamChainSpec, path) -> None:
    Path(path).write_text(json.dumps(chain_to_dict(spec), indent=2) + "\n")


def load_chain(path) -> BeamChainSpec:
    return chain_from_dict(json.loads(Path(path).read_text()))
