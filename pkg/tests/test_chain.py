from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twistbeam.chain import (
    BENDING, FITTED, TWIST, BeamChainSpec, BeamGeometry, ChainSpecError, FootSpec, JointSpec,
    LinkSpec, build_twisted_beam, chain_from_dict, chain_to_dict, distribute_mass, load_chain,
    mirror_chirality, fitted_beam, save_chain,
)

# 5.17 g * 23.66 mm / 50 mm and the remainder, evaluated once by hand and frozen
M2_ORACLE = 2.446444
M3_ORACLE = 2.723556


def test_distribute_mass_fitted_constants():
    m = distribute_mass(5.17, 50.0, [23.66, 26.34])
    assert m[0] == pytest.approx(M2_ORACLE, abs=1e-12)
    assert m[1] == pytest.approx(M3_ORACLE, abs=1e-12)
    assert round(m[1], 4) == 2.7236


def test_distribute_mass_trivial_cases():
    assert distribute_mass(3.2, 40.0, [40.0]) == [3.2]
    assert distribute_mass(6.0, 60.0, [20.0, 20.0, 20.0]) == pytest.approx([2.0, 2.0, 2.0], abs=1e-15)


def test_distribute_mass_rejects_bad_input():
    with pytest.raises(ChainSpecError):
        distribute_mass(1.0, 10.0, [])
    with pytest.raises(ChainSpecError):
        distribute_mass(1.0, 10.0, [4.0, 4.0])


@given(
    st.floats(0.1, 100.0),
    st.lists(st.floats(0.01, 50.0), min_size=1, max_size=8),
)
def test_distribute_mass_conserves_mass(mass, segments):
    length = math.fsum(segments)
    masses = distribute_mass(mass, length, segments)
    assert math.fsum(masses) == pytest.approx(mass, rel=0.0, abs=math.ulp(mass) * 2)
    density = mass / length
    for m, s in zip(masses[:-1], segments[:-1]):
        assert m == density * s


def test_build_fitted_layout():
    spec = fitted_beam(90.0)
    assert [j.name for j in spec.joints] == ["R1", "R4", "R2", "R5", "R3"]
    assert [j.kind for j in spec.joints] == [BENDING, TWIST, BENDING, TWIST, BENDING]
    assert [j.position for j in spec.joints] == [0.0, 0.0, 0.0, 23.66, 23.66]
    assert [lk.length for lk in spec.links] == [0.0, 0.0, 23.66, 0.0, 26.34]
    assert spec.total_length == pytest.approx(50.0)
    assert spec.total_mass == pytest.approx(5.17, abs=1e-12)
    for j in spec.joints:
        expected = (FITTED["k"], FITTED["b"])
        assert (j.stiffness, j.damping) == expected
        rest = math.radians(45.0) if j.kind == TWIST else 0.0
        assert j.rest_angle == pytest.approx(rest)
    assert spec.links[2].mass == pytest.approx(M2_ORACLE, abs=1e-12)
    assert spec.links[4].mass == pytest.approx(M3_ORACLE, abs=1e-12)


def test_untwisted_beam_has_zero_rest_angles():
    spec = fitted_beam(0.0)
    assert all(j.rest_angle == 0.0 for j in spec.joints)


def test_segment_lengths_must_match_beam_length():
    with pytest.raises(ChainSpecError, match="exceed the beam length"):
        build_twisted_beam(BeamGeometry(), 0.34, 0.0029, 25.0, 30.0)
    with pytest.raises(ChainSpecError, match="fall short"):
        build_twisted_beam(BeamGeometry(), 0.34, 0.0029, 20.0, 20.0)


def test_negative_constants_rejected():
    with pytest.raises(ChainSpecError):
        build_twisted_beam(BeamGeometry(), -0.1, 0.0029, 23.66, 26.34)
    with pytest.raises(ChainSpecError):
        build_twisted_beam(BeamGeometry(), 0.34, -1.0, 23.66, 26.34)


def test_geometry_invariants():
    with pytest.raises(ChainSpecError):
        BeamGeometry(twist=200.0, segment_twist=100.0)
    with pytest.raises(ChainSpecError):
        BeamGeometry(twist=90.0, segment_twist=30.0)
    with pytest.raises(ChainSpecError):
        BeamGeometry(mass=0.0)


def test_joint_axis_invariants():
    with pytest.raises(ChainSpecError):
        JointSpec(TWIST, (0.0, 1.0, 0.0), 1.0, 0.0)
    with pytest.raises(ChainSpecError):
        JointSpec(BENDING, (1.0, 0.0, 0.0), 1.0, 0.0)
    with pytest.raises(ChainSpecError):
        JointSpec(BENDING, (0.0, 2.0, 0.0), 1.0, 0.0)


def test_chain_must_be_well_formed():
    j = JointSpec(BENDING, (0.0, 1.0, 0.0), 1.0, 0.0)
    with pytest.raises(ChainSpecError):
        BeamChainSpec(BeamGeometry(), (j,), ())
    late = JointSpec(BENDING, (0.0, 1.0, 0.0), 1.0, 0.0, position=10.0)
    with pytest.raises(ChainSpecError):
        BeamChainSpec(BeamGeometry(), (late, j), (LinkSpec(5.0, 1.0), LinkSpec(5.0, 1.0)))


def test_mirror_of_positive_twist():
    m = mirror_chirality(fitted_beam(90.0))
    assert m.geometry.twist == -90.0
    rests = [math.degrees(j.rest_angle) for j in m.joints if j.kind == TWIST]
    assert rests == pytest.approx([-45.0, -45.0])


def test_mirror_of_achiral_beam_is_identity():
    spec = fitted_beam(0.0)
    assert mirror_chirality(spec) == spec


@given(st.floats(-180.0, 180.0), st.booleans())
def test_mirror_is_involution(twist, with_foot):
    spec = fitted_beam(twist, foot=FootSpec(corner_offset=(1.0, 2.0, 3.0)) if with_foot else None)
    assert mirror_chirality(mirror_chirality(spec)) == spec


@given(st.floats(-180.0, 180.0))
def test_mirror_matches_opposite_build(twist):
    assert mirror_chirality(fitted_beam(-twist)) == fitted_beam(twist)


def test_mirror_changes_nothing_but_twist():
    spec = fitted_beam(60.0, foot=FootSpec())
    m = mirror_chirality(spec)
    assert m.links == spec.links
    assert m.foot == spec.foot
    for a, b in zip(spec.joints, m.joints):
        assert (a.kind, a.axis, a.stiffness, a.damping, a.position) == (
            b.kind, b.axis, b.stiffness, b.damping, b.position)


def test_json_round_trip(tmp_path):
    spec = fitted_beam(90.0, foot=FootSpec(corner_offset=(0.0, 0.0, -10.0)))
    path = tmp_path / "beam.json"
    save_chain(spec, path)
    back = load_chain(path)
    assert back.links == spec.links
    assert back.foot == spec.foot
    for a, b in zip(spec.joints, back.joints):
        assert a.rest_angle == pytest.approx(b.rest_angle, abs=1e-15)
        assert a.stiffness == b.stiffness


def test_json_rejects_other_documents():
    doc = chain_to_dict(fitted_beam())
    with pytest.raises(ChainSpecError):
        chain_from_dict({**doc, "schema": "other"})
    with pytest.raises(ChainSpecError):
        chain_from_dict({**doc, "version": 99})


def test_foot_corner():
    foot = FootSpec(length=66.5, corner_offset=(0.0, 0.0, 10.0))
    np.testing.assert_allclose(foot.corner(), [0.0, -66.5, 10.0])
