from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_objective
from twistbeam.chain import BeamGeometry, fitted_beam
from twistbeam.dynamics import compile_chain, natural_point
from twistbeam.sysid import (
    DESettings, DropTest, FitProblem, MarkerSet, SettleError, differential_evolution, fit,
    mean_absolute_error, objective, settle_damped, settle_newton, simulate_drop_test,
    synthetic_reference,
)

TRUTH = {"k": 0.340, "b": 0.0029, "l2": 23.66}


def _markers(n, rng):
    return MarkerSet(np.arange(n) * 1e-3, rng.normal(0.0, 1e-2, (3, n, 3)))


# --- objective ------------------------------------------------------------------


def test_objective_of_identical_sets_is_zero():
    m = _markers(20, np.random.default_rng(0))
    assert objective(m, m) == 0.0
    assert mean_absolute_error(m, m) == 0.0


def test_constant_offset_gives_its_norm():
    m = _markers(30, np.random.default_rng(1))
    shift = np.array([3e-4, -4e-4, 12e-4])  # norm 1.3 mm
    other = MarkerSet(m.times, m.markers + shift)
    assert objective(m, other) == pytest.approx(1.3, rel=1e-12)
    assert mean_absolute_error(m, other) == pytest.approx(1.3, rel=1e-12)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_objective_matches_double_sum_and_is_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    a, b = _markers(n, rng), _markers(n, rng)
    assert objective(a, b) == pytest.approx(brute_force_objective(a, b), abs=1e-12)
    assert objective(a, b) == objective(b, a)


def test_objective_rejects_length_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        objective(_markers(10, rng), _markers(11, rng))


def test_marker_set_validation():
    with pytest.raises(ValueError):
        MarkerSet(np.arange(1.0), np.zeros((3, 1, 3)))
    with pytest.raises(ValueError):
        MarkerSet(np.arange(5.0), np.zeros((2, 5, 3)))


def test_marker_csv_round_trip(tmp_path):
    m = _markers(15, np.random.default_rng(3))
    path = tmp_path / "m.csv"
    m.to_csv(path, ["origin: test"])
    back = MarkerSet.from_csv(path)
    np.testing.assert_array_equal(back.markers, m.markers)
    np.testing.assert_array_equal(back.times, m.times)
    assert path.read_text().splitlines()[1].split(",")[:2] == ["t[s]", "m1x[m]"]


def test_noise_is_seeded():
    m = _markers(10, np.random.default_rng(4))
    assert np.array_equal(m.with_noise(1e-4, 7).markers, m.with_noise(1e-4, 7).markers)
    assert not np.array_equal(m.with_noise(1e-4, 7).markers, m.with_noise(1e-4, 8).markers)


# --- drop test ------------------------------------------------------------------


def test_zero_load_keeps_markers_still():
    ms = simulate_drop_test(fitted_beam(90.0), DropTest(load=0.0, duration=0.05))
    assert np.max(np.ptp(ms.markers, axis=1)) < 1e-12


def test_zero_load_without_gravity_stays_at_natural_pose():
    spec = fitted_beam(90.0)
    ms = simulate_drop_test(spec, DropTest(load=0.0, gravity=(0.0, 0.0, 0.0), duration=0.02))
    np.testing.assert_allclose(ms.markers[0, 0], natural_point(spec, "m1"), atol=1e-15)


def test_loaded_release_starts_deflected_and_decays():
    spec = fitted_beam(90.0)
    ms = simulate_drop_test(spec, DropTest(duration=0.5))
    rest = simulate_drop_test(spec, DropTest(load=0.0, duration=0.01)).markers[0, 0]
    z = ms.markers[0, :, 2] - rest[2]
    assert z[0] < -1e-3  # pulled down along the load
    peaks = [np.max(np.abs(z[i:i + 50])) for i in range(0, len(z) - 50, 50)]
    assert all(b <= a + 1e-9 for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] < 0.2 * peaks[0]


def test_drop_test_is_deterministic():
    a = simulate_drop_test(fitted_beam(90.0), DropTest(duration=0.05))
    b = simulate_drop_test(fitted_beam(90.0), DropTest(duration=0.05))
    assert a.markers.tobytes() == b.markers.tobytes()


def test_sample_layout():
    ms = simulate_drop_test(fitted_beam(90.0))
    assert ms.n == 251
    assert ms.sample_rate == pytest.approx(1000.0)


@pytest.mark.slow
def test_damped_settle_agrees_with_newton():
    model = compile_chain(fitted_beam(90.0))
    force = np.array([0.0, 0.0, -0.2 * 9.81])
    g = np.array([0.0, 0.0, -9.81])
    np.testing.assert_allclose(settle_damped(model, g, force), settle_newton(model, g, force), atol=1e-7)


def test_settle_failure_is_reported():
    model = compile_chain(fitted_beam(90.0))
    with pytest.raises(SettleError, match="residual"):
        settle_newton(model, np.zeros(3), np.array([0.0, 0.0, -1.0]), max_iter=0)


def test_protocol_validation():
    with pytest.raises(ValueError):
        DropTest(load=-1.0)
    with pytest.raises(ValueError):
        DropTest(settle="shake")
    with pytest.raises(ValueError):
        DropTest(sample_rate=3000.0)


# --- differential evolution --------------------------------------------------------


def test_de_sphere():
    res = differential_evolution(lambda x: float(np.sum(x * x)), [(-5.0, 5.0)] * 5,
                                 DESettings(population=30, max_generations=200, stall_generations=None))
    assert res.fun < 1e-6
    assert res.generations == 200


def test_de_rosenbrock():
    rosen = lambda x: float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
    res = differential_evolution(rosen, [(-2.0, 2.0), (-2.0, 2.0)],
                                 DESettings(population=30, max_generations=300, stall_generations=None))
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)


@given(st.integers(0, 2**32 - 1))
def test_de_trace_monotone_bounds_respected_and_seeded(seed):
    seen = []
    bounds = [(-1.0, 2.0), (0.5, 0.7), (10.0, 20.0)]

    def f(x):
        seen.append(np.array(x))
        return float(np.sum(np.sin(3 * x) + x * x))

    settings = DESettings(population=8, max_generations=15, seed=seed)
    res = differential_evolution(f, bounds, settings)
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    pts = np.array(seen)
    lo, hi = np.array(bounds).T
    assert np.all(pts >= lo) and np.all(pts <= hi)
    again = differential_evolution(f, bounds, settings)
    assert again.trace == res.trace and np.array_equal(again.x, res.x)
    assert res.evaluations == 8 * (res.generations + 1)


def test_de_early_stop_on_stall():
    res = differential_evolution(lambda x: 1.0, [(0.0, 1.0)] * 2,
                                 DESettings(population=5, stall_generations=3, stall_tolerance=1e-3))
    assert res.stopped_early and res.generations == 3


def test_de_settings_validation():
    with pytest.raises(ValueError):
        DESettings(population=3)
    with pytest.raises(ValueError):
        DESettings(CR=1.5)
    with pytest.raises(ValueError):
        differential_evolution(lambda x: 0.0, [(1.0, 0.0)])


# --- fitting ------------------------------------------------------------------------


def test_fit_problem_validation():
    ref = synthetic_reference(protocol=DropTest(duration=0.02))
    with pytest.raises(ValueError):
        FitProblem(ref, bounds={"k": (1.0, 0.5), "b": (1e-4, 0.05), "l2": (5.0, 45.0)})
    with pytest.raises(ValueError):
        FitProblem(ref, bounds={"k": (0.05, 1.0), "b": (1e-4, 0.05), "l2": (5.0, 60.0)})
    with pytest.raises(ValueError):
        FitProblem(ref, protocol=DropTest(sample_rate=500.0))


def test_cost_is_zero_at_truth_and_rejects_nothing_valid():
    protocol = DropTest(duration=0.05)
    ref = synthetic_reference(protocol=protocol)
    problem = FitProblem(ref, protocol=protocol)
    assert problem.cost([TRUTH["k"], TRUTH["b"], TRUTH["l2"]]) == 0.0
    assert problem.cost([0.5, 0.01, 30.0]) > 0.1


def test_noisy_reference_cost_at_truth():
    """0.5 mm per-axis noise puts the RMS 3-D marker error near 0.5 * sqrt(3) mm."""
    protocol = DropTest()
    clean = synthetic_reference(protocol=protocol)
    for seed in range(5):
        problem = FitProblem(clean.with_noise(0.5e-3, seed), protocol=protocol)
        assert 0.3 <= problem.cost([TRUTH["k"], TRUTH["b"], TRUTH["l2"]]) <= 1.0


@pytest.mark.slow
def test_fit_with_noisy_reference():
    protocol = DropTest()
    ref = synthetic_reference(protocol=protocol).with_noise(0.5e-3, 0)
    report = fit(FitProblem(ref, protocol=protocol, settings=DESettings(seed=0)))
    assert 0.3 <= report.objective_mm <= 1.0
    for name, value in TRUTH.items():
        assert report.parameters[name] == pytest.approx(value, rel=0.10)


@pytest.mark.slow
def test_fit_hits_active_bound():
    protocol = DropTest()
    ref = synthetic_reference(protocol=protocol)
    bounds = {"k": (0.5, 1.0), "b": (1e-4, 0.05), "l2": (5.0, 45.0)}
    settings = DESettings(population=15, max_generations=40, seed=1)
    report = fit(FitProblem(ref, bounds=bounds, protocol=protocol, settings=settings))
    assert report.parameters["k"] == pytest.approx(0.5, abs=2e-3)


def test_report_json_is_reproducible(tmp_path):
    protocol = DropTest(duration=0.02)
    ref = synthetic_reference(protocol=protocol)
    problem = FitProblem(ref, protocol=protocol, settings=DESettings(population=5, max_generations=2))
    paths = []
    for i in range(2):
        report = fit(problem)
        p = tmp_path / f"r{i}.json"
        report.to_json(p, metadata={"note": "x"})
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    data = json.loads(paths[0].read_text())
    assert set(data["parameters"]) == {"k_Nm_per_rad", "b_Nms_per_rad", "l2_mm", "l3_mm"}
    assert "wall_time_s" not in data
    assert data["parameters"]["l3_mm"] == pytest.approx(50.0 - data["parameters"]["l2_mm"])
    assert math.isfinite(report.wall_time_s) and report.wall_time_s > 0


def test_synthetic_reference_uses_geometry_length():
    ms = synthetic_reference(geometry=BeamGeometry(), protocol=DropTest(duration=0.01))
    assert ms.n == 11
