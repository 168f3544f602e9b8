from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pulse_train
from twistbeam.chain import FootSpec, fitted_beam
from twistbeam.contact import (
    ContactConfig, ContactRecord, contact_force, detect_contact_events, duty_cycle,
)
from twistbeam.dynamics import DriveSignal, Loads, ModelBuilder, SimConfig, run_model, simulate


def test_separated_point_feels_nothing():
    assert contact_force(1e-3, -0.5, 0.3, ContactConfig()) == (0.0, 0.0)


def test_linear_spring_normal_force():
    fn, ft = contact_force(-1e-3, 0.0, 0.0, ContactConfig(k_n=1000.0))
    assert fn == pytest.approx(1.0)
    assert ft == 0.0


@pytest.mark.parametrize("v", [1.0, -1.0])
def test_saturated_coulomb_limit(v):
    cfg = ContactConfig(k_n=1000.0, c_n=0.0, mu=0.6)
    fn, ft = contact_force(-1e-3, 0.0, v, cfg)
    assert fn == pytest.approx(1.0)
    assert ft == pytest.approx(-0.6 * math.copysign(1.0, v))


def test_damping_cannot_pull():
    fn, _ = contact_force(-1e-6, 10.0, 0.0, ContactConfig())
    assert fn == 0.0


@given(st.floats(-1e-2, 1e-2), st.floats(-5.0, 5.0), st.floats(-5.0, 5.0),
       st.floats(0.0, 2.0), st.floats(0.0, 50.0))
def test_force_law_invariants(gap, rate, vt, mu, cn):
    cfg = ContactConfig(c_n=cn, mu=mu)
    fn, ft = contact_force(gap, rate, vt, cfg)
    assert fn >= 0.0
    assert fn * max(gap, 0.0) == 0.0
    assert abs(ft) <= mu * fn + 1e-12


@given(st.floats(-1e-3, 1e-3), st.floats(-1.0, 1.0), st.floats(-1e-2, 1e-2))
def test_force_is_lipschitz_away_from_touchdown(gap, rate, vt):
    cfg = ContactConfig()
    h = 1e-9
    if -h <= gap <= 0.0:
        gap -= 2 * h
    f0 = np.array(contact_force(gap, rate, vt, cfg))
    f1 = np.array(contact_force(gap + h, rate, vt, cfg))
    f2 = np.array(contact_force(gap, rate, vt + h, cfg))
    fn = f0[0]
    assert np.all(np.abs(f1 - f0) <= cfg.k_n * h * (1 + cfg.mu) + 1e-12)
    assert np.all(np.abs(f2 - f0) <= cfg.mu * fn * h / cfg.v_reg + 1e-12)


@given(st.floats(-1.0, 1.0))
def test_touchdown_jump_is_the_damping_term(rate):
    cfg = ContactConfig()
    fn_touch, _ = contact_force(0.0, rate, 0.0, cfg)
    fn_open, _ = contact_force(1e-15, rate, 0.0, cfg)
    assert fn_open == 0.0
    assert fn_touch == pytest.approx(max(0.0, -cfg.c_n * rate), abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ContactConfig(k_n=0.0)
    with pytest.raises(ValueError):
        ContactConfig(mu=-0.1)
    with pytest.raises(ValueError):
        ContactConfig(v_reg=0.0)
    with pytest.raises(ValueError):
        ContactConfig(natural_gap=-1.0)
    with pytest.raises(ValueError):
        ContactConfig(normal=(0.0, 1.0, 0.0), tangent=(0.0, 1.0, 0.0))


def test_no_events_without_force():
    t = np.linspace(0, 1, 100)
    rec = ContactRecord(t, np.ones_like(t), np.zeros_like(t), np.zeros_like(t), np.zeros(100, bool))
    assert detect_contact_events(rec) == []
    assert duty_cycle(rec) == 0.0


def test_empty_record_is_an_error():
    rec = ContactRecord(*(np.zeros(0),) * 4, np.zeros(0, bool))
    with pytest.raises(ValueError):
        detect_contact_events(rec)


def test_square_pulses_at_10_hz():
    rec = pulse_train(10.0, 1, duration=2.0)
    events = detect_contact_events(rec)
    assert len(events) / 2.0 == pytest.approx(10.0)


def test_every_other_cycle_at_26_hz():
    rec = pulse_train(26.0, 2, duration=1.0)
    events = detect_contact_events(rec)
    assert len(events) == 13


def test_hysteresis_suppresses_chatter():
    t = np.arange(0.0, 0.01, 1e-4)
    fn = np.full_like(t, 0.02)
    fn[40:60:2] = 0.008  # dips between 0.5 and 1 threshold keep the contact
    rec = ContactRecord(t, -np.ones_like(t), fn, np.zeros_like(t), fn > 0)
    assert len(detect_contact_events(rec)) == 1


def test_record_csv_round_trip(tmp_path):
    rec = pulse_train(20.0, 1, duration=0.1)
    path = tmp_path / "rec.csv"
    rec.to_csv(path, ["meta"])
    back = ContactRecord.from_csv(path)
    np.testing.assert_array_equal(back.fn, rec.fn)
    np.testing.assert_array_equal(back.in_contact, rec.in_contact)


def _drop_point(height, k_n=5000.0, c_n=5.0, dt=1e-5, duration=0.3):
    b = ModelBuilder()
    b.add("prismatic", (0.0, 0.0, 1.0), mass=0.02, name="z")
    b.points["p"] = (0, np.zeros(3))
    model = b.build()
    cfg = ContactConfig(k_n=k_n, c_n=c_n, normal=(0.0, 0.0, 1.0), tangent=(1.0, 0.0, 0.0))
    loads = Loads.none().with_contacts(cfg, [0], [np.zeros(3)], [0.0])
    raw = run_model(model, np.array([height]), np.zeros(1), dt=dt, n_steps=int(duration / dt),
                    stride=1, gravity=(0.0, 0.0, -9.81), loads=loads, points=("p",))
    return model, raw


@pytest.mark.parametrize("c_n", [0.0, 0.5, 5.0])
def test_rebound_never_exceeds_drop_height(c_n):
    h0 = 5e-3
    _, raw = _drop_point(h0, c_n=c_n)
    z = raw.q[:, 0]
    touched = np.nonzero(z <= 0)[0]
    assert len(touched) > 0
    after = z[touched[0]:]
    left = np.nonzero(after > 0)[0]
    assert len(left) > 0
    assert after[left[0]:].max() <= h0 * (1 + 1e-3)


def test_simulated_contact_respects_cone_and_unilaterality():
    spec = fitted_beam(90.0, foot=FootSpec())
    cfg = ContactConfig(natural_gap=0.0)
    res = simulate(spec, DriveSignal(2e-3, 20.0), cfg,
                   SimConfig(duration=1.0, gravity=(0.0, -9.81, 0.0), record_stride=1), points=("tip",))
    c = res.contact
    assert c.fn.min() >= 0.0
    assert np.all(c.fn[c.gap > 0] == 0.0)
    assert np.all(np.abs(c.ft) <= cfg.mu * c.fn + 1e-12)
    assert c.in_contact.any()
