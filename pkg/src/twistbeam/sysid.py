"""Drop-test parameter identification.

A tip load deflects the beam, is released, and the free decay of a marker
triad on the distal link is compared against a reference. Differential
evolution (rand/1/bin) searches the (k, b, l2) box with l3 = l - l2.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .chain import BeamChainSpec, BeamGeometry, build_twisted_beam
from .dynamics import (
    DriveSignal, Loads, SimulationError, _kinematics, compile_chain, full_mass_matrix,
    inverse_dynamics, run_model,
)

MARKERS = ("m1", "m2", "m3")
G = 9.81


class SettleError(RuntimeError):
    """Static settle under the tip load did not converge."""


# --- marker data ------------------------------------------------------------


@dataclass
class MarkerSet:
    """Three marker trajectories sampled at a fixed rate (m)."""

    times: np.ndarray
    markers: np.ndarray  # (3, n, 3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.markers = np.asarray(self.markers, dtype=float)
        if self.markers.ndim != 3 or self.markers.shape[0] != 3 or self.markers.shape[2] != 3:
            raise ValueError("markers must have shape (3, n, 3)")
        if self.markers.shape[1] != len(self.times):
            raise ValueError("all markers need one sample per time stamp")
        if len(self.times) < 2:
            raise ValueError("a marker set needs at least two samples")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def sample_rate(self) -> float:
        return 1.0 / float(self.times[1] - self.times[0])

    def with_noise(self, sigma: float, seed: int) -> MarkerSet:
        rng = np.random.default_rng(seed)
        return MarkerSet(self.times.copy(), self.markers + rng.normal(0.0, sigma, self.markers.shape))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["t[s]"] + [f"m{i}{a}[m]" for i in (1, 2, 3) for a in "xyz"])
            for j, t in enumerate(self.times):
                wr.writerow([repr(float(t))] + [repr(float(v)) for v in self.markers[:, j, :].ravel()])

    @classmethod
    def from_csv(cls, path) -> MarkerSet:
        with open(path) as fh:
            rows = [r for r in csv.reader(line for line in fh if line.strip() and not line.startswith("#"))]
        if len(rows) < 3:
            raise ValueError(f"{path}: no marker samples")
        head = [h.split("[")[0] for h in rows[0]]
        data = np.array(rows[1:], dtype=float)
        col = {h: i for i, h in enumerate(head)}
        try:
            cols = [[col[f"m{i}{a}"] for a in "xyz"] for i in (1, 2, 3)]
            t = data[:, col["t"]]
        except KeyError as exc:
            raise ValueError(f"{path}: missing column {exc}") from None
        return cls(t, np.stack([data[:, c] for c in cols]))


def objective(sim: MarkerSet, ref: MarkerSet) -> float:
    """Root-mean-square marker distance over all 3n marker samples, in mm."""
    if sim.markers.shape != ref.markers.shape:
        raise ValueError(f"marker sets differ in shape: {sim.markers.shape} vs {ref.markers.shape}")
    d2 = np.sum((sim.markers - ref.markers) ** 2, axis=2)
    return 1e3 * math.sqrt(float(np.sum(d2)) / d2.size)


def mean_absolute_error(sim: MarkerSet, ref: MarkerSet) -> float:
    """Mean marker distance in mm."""
    if sim.markers.shape != ref.markers.shape:
        raise ValueError(f"marker sets differ in shape: {sim.markers.shape} vs {ref.markers.shape}")
    return 1e3 * float(np.mean(np.linalg.norm(sim.markers - ref.markers, axis=2)))


# --- drop test ----------------------------------------------------------------


@dataclass(frozen=True)
class DropTest:
    """Protocol: tip load (g) along ``direction``, settle, release, record."""

    load: float = 200.0
    direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    gravity: tuple[float, float, float] = (0.0, 0.0, -G)
    settle: str = "newton"  # or "damped"
    duration: float = 0.25  # s recorded after release
    sample_rate: float = 1000.0  # Hz
    dt: float = 1e-4

    def __post_init__(self):
        if self.load < 0:
            raise ValueError("load must be non-negative")
        if self.settle not in ("newton", "damped"):
            raise ValueError(f"unknown settle procedure {self.settle!r}")
        if self.duration <= 0 or self.sample_rate <= 0 or self.dt <= 0:
            raise ValueError("duration, sample rate and dt must be positive")
        stride = 1.0 / (self.sample_rate * self.dt)
        if abs(stride - round(stride)) > 1e-9:
            raise ValueError("sample period must be a whole number of steps")

    @property
    def stride(self) -> int:
        return int(round(1.0 / (self.sample_rate * self.dt)))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate)) + 1


def _tip_load(model, q, force):
    """World-frame body forces/moments of a point load at the tip."""
    body, off = model.points["tip"]
    R, _, _, _, _ = _kinematics(model, q, np.zeros(model.n))
    fext = np.zeros((model.n, 3))
    next_ = np.zeros((model.n, 3))
    fext[body] = force
    next_[body] = np.cross(R[body] @ off, force)
    return fext, next_


def _static_residual(model, q_beam, gravity, force):
    q = np.concatenate(([0.0], q_beam))
    fext, next_ = _tip_load(model, q, force)
    tau = inverse_dynamics(model, q, np.zeros(model.n), np.zeros(model.n), gravity, fext, next_)
    return tau[1:] + model.k[1:] * q_beam


def settle_newton(model, gravity, force, tol=1e-12, max_iter=50):
    """Joint deflections where springs balance gravity and the tip load."""
    n = model.n - 1
    q = np.zeros(n)
    r = _static_residual(model, q, gravity, force)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return q
        J = np.empty((n, n))
        h = 1e-7
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            J[:, j] = (_static_residual(model, q + e, gravity, force)
                       - _static_residual(model, q - e, gravity, force)) / (2 * h)
        dq = np.linalg.solve(J, -r)
        # backtrack on the residual norm
        step = 1.0
        while step > 1e-4:
            r_new = _static_residual(model, q + step * dq, gravity, force)
            if np.linalg.norm(r_new) < np.linalg.norm(r):
                break
            step *= 0.5
        q = q + step * dq
        r = r_new
    if np.max(np.abs(r)) < tol:
        return q
    raise SettleError(f"static settle did not converge: residual {np.max(np.abs(r)):.3e} N m")


def settle_damped(model, gravity, force, dt=1e-4, vel_tol=1e-6, max_steps=2_000_000,
                  chunk=2000):
    """Integrate with heavy joint damping until all joint rates drop below ``vel_tol``."""
    body, off = model.points["tip"]
    n = model.n
    # at least critical damping per joint, from the diagonal of the inertia
    b_settle = 2.0 * np.sqrt(model.k * np.diag(full_mass_matrix(model, np.zeros(n))))
    damped = type(model)(**{**model.__dict__, "b": np.maximum(model.b, b_settle)})
    loads = Loads.none().with_point_forces([body], [off], [force])
    q, qd = np.zeros(n), np.zeros(n)
    steps = 0
    while steps < max_steps:
        raw = run_model(damped, q, qd, dt=dt, n_steps=chunk, stride=chunk, gravity=gravity,
                        drive_params=DriveSignal(0.0, 0.0).params(0), loads=loads)
        q, qd = raw.q_final, raw.qd_final
        steps += chunk
        if np.max(np.abs(qd[1:])) < vel_tol:
            return q[1:]
    raise SettleError(f"damped settle did not converge in {max_steps} steps: "
                      f"max joint rate {np.max(np.abs(qd[1:])):.3e} rad/s")


def simulate_drop_test(spec: BeamChainSpec, protocol: DropTest = DropTest()) -> MarkerSet:
    """Free decay of the marker triad after releasing a settled tip load."""
    model = compile_chain(spec)
    force = protocol.load * 1e-3 * G * np.asarray(protocol.direction, dtype=float)
    gravity = np.asarray(protocol.gravity, dtype=float)
    if protocol.settle == "newton":
        q_beam = settle_newton(model, gravity, force)
    else:
        q_beam = settle_damped(model, gravity, force, dt=protocol.dt)
    # gravity stays on after release, so the decay ends at the gravity-sagged pose
    q0 = np.concatenate(([0.0], q_beam))
    n_steps = (protocol.n_samples - 1) * protocol.stride
    raw = run_model(model, q0, np.zeros(model.n), dt=protocol.dt, n_steps=n_steps,
                    stride=protocol.stride, gravity=gravity,
                    drive_params=DriveSignal(0.0, 0.0).params(0), points=MARKERS)
    return MarkerSet(raw.times, np.transpose(raw.points, (1, 0, 2)))


# --- differential evolution -------------------------------------------------------


@dataclass(frozen=True)
class DESettings:
    population: int | None = None  # default 15 * dim
    F: float = 0.8
    CR: float = 0.9
    max_generations: int = 300
    stall_generations: int | None = 50
    stall_tolerance: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")
        if not 0.0 <= self.CR <= 1.0:
            raise ValueError("CR must lie in [0, 1]")
        if not 0.0 < self.F <= 2.0:
            raise ValueError("F must lie in (0, 2]")
        if self.max_generations < 1:
            raise ValueError("need at least one generation")


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    trace: list  # best value after initialisation and after each generation
    generations: int
    evaluations: int
    stopped_early: bool


def differential_evolution(f, bounds, settings: DESettings = DESettings(), evaluate=None) -> DEResult:
    """Minimize ``f`` over a box with DE/rand/1/bin.

    ``evaluate(f, candidates)`` may be supplied to score a generation
    concurrently; it must return values in candidate order.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(lo < hi)):
        raise ValueError("bounds must be finite with lo < hi")
    dim = len(lo)
    npop = settings.population or 15 * dim
    if npop < 4:
        raise ValueError("population must be at least 4")
    evaluate = evaluate or (lambda fn, xs: [fn(x) for x in xs])
    rng = np.random.default_rng(settings.seed)
    pop = lo + rng.random((npop, dim)) * (hi - lo)
    fit = np.array(evaluate(f, list(pop)), dtype=float)
    evals = npop
    best = int(np.argmin(fit))
    trace = [float(fit[best])]
    stopped = False
    gen = 0
    for gen in range(1, settings.max_generations + 1):
        trials = np.empty_like(pop)
        for i in range(npop):
            others = [j for j in range(npop) if j != i]
            a, b, c = rng.choice(others, 3, replace=False)
            mutant = pop[a] + settings.F * (pop[b] - pop[c])
            cross = rng.random(dim) < settings.CR
            cross[rng.integers(dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), lo, hi)
        tfit = np.array(evaluate(f, list(trials)), dtype=float)
        evals += npop
        better = tfit <= fit
        pop[better] = trials[better]
        fit[better] = tfit[better]
        best = int(np.argmin(fit))
        trace.append(float(fit[best]))
        w = settings.stall_generations
        if w is not None and gen >= w and trace[-1 - w] - trace[-1] < settings.stall_tolerance:
            stopped = True
            break
    return DEResult(pop[best].copy(), float(fit[best]), trace, gen, evals, stopped)


# --- fitting ------------------------------------------------------------------------------


VARIABLES = ("k", "b", "l2")
DEFAULT_BOUNDS = {"k": (0.05, 1.0), "b": (1e-4, 0.05), "l2": (5.0, 45.0)}


@dataclass
class FitProblem:
    reference: MarkerSet
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    geometry: BeamGeometry = field(default_factory=BeamGeometry)
    protocol: DropTest = field(default_factory=DropTest)
    settings: DESettings = field(default_factory=DESettings)

    def __post_init__(self):
        for name in VARIABLES:
            if name not in self.bounds:
                raise ValueError(f"missing bounds for {name}")
            lo, hi = self.bounds[name]
            if not lo < hi:
                raise ValueError(f"bounds for {name} need lo < hi, got [{lo}, {hi}]")
        lo, hi = self.bounds["l2"]
        if lo < 0 or hi > self.geometry.length:
            raise ValueError("l2 bounds must lie within the beam length")
        ref_rate = self.reference.sample_rate
        if not math.isclose(ref_rate, self.protocol.sample_rate, rel_tol=1e-6):
            raise ValueError(f"reference sampled at {ref_rate:g} Hz, protocol expects "
                             f"{self.protocol.sample_rate:g} Hz")

    def beam(self, x) -> BeamChainSpec:
        k, b, l2 = (float(v) for v in x)
        return build_twisted_beam(self.geometry, k, b, l2, self.geometry.length - l2)

    def protocol_for_reference(self) -> DropTest:
        p = self.protocol
        duration = (self.reference.n - 1) / p.sample_rate
        return DropTest(p.load, p.direction, p.gravity, p.settle, duration, p.sample_rate, p.dt)

    def cost(self, x) -> float:
        try:
            sim = simulate_drop_test(self.beam(x), self.protocol_for_reference())
        except (SimulationError, SettleError):
            return math.inf
        return objective(sim, self.reference)


@dataclass
class FitReport:
    parameters: dict
    objective_mm: float
    mean_abs_error_mm: float
    trace: list
    generations: int
    evaluations: int
    stopped_early: bool
    seed: int
    wall_time_s: float = 0.0  # kept out of the JSON to keep reports reproducible

    def to_dict(self) -> dict:
        return {
            "parameters": {
                "k_Nm_per_rad": self.parameters["k"],
                "b_Nms_per_rad": self.parameters["b"],
                "l2_mm": self.parameters["l2"],
                "l3_mm": self.parameters["l3"],
            },
            "objective_rms_mm": self.objective_mm,
            "mean_abs_error_mm": self.mean_abs_error_mm,
            "generations": self.generations,
            "evaluations": self.evaluations,
            "stopped_early": self.stopped_early,
            "seed": self.seed,
            "trace_best_mm": self.trace,
        }

    def to_json(self, path, metadata=None):
        data = self.to_dict()
        if metadata:
            data = {"metadata": metadata, **data}
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=False)
            fh.write("\n")

    def trace_to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["generation", "best_objective[mm]"])
            for g, v in enumerate(self.trace):
                wr.writerow([g, repr(v)])


def fit(problem: FitProblem, evaluate=None) -> FitReport:
    """Identify (k, b, l2) from the reference drop test."""
    start = time.perf_counter()
    bounds = [problem.bounds[v] for v in VARIABLES]
    res = differential_evolution(problem.cost, bounds, problem.settings, evaluate=evaluate)
    k, b, l2 = (float(v) for v in res.x)
    sim = simulate_drop_test(problem.beam(res.x), problem.protocol_for_reference())
    params = {"k": k, "b": b, "l2": l2, "l3": problem.geometry.length - l2}
    return FitReport(params, res.fun, mean_absolute_error(sim, problem.reference), res.trace,
                     res.generations, res.evaluations, res.stopped_early, problem.settings.seed,
                     time.perf_counter() - start)


def synthetic_reference(k=0.340, b=0.0029, l2=23.66, geometry: BeamGeometry | None = None,
                        protocol: DropTest = DropTest()) -> MarkerSet:
    """Drop-test markers generated by this simulator at the given parameters."""
    geometry = geometry or BeamGeometry()
    return simulate_drop_test(build_twisted_beam(geometry, k, b, l2, geometry.length - l2), protocol)
