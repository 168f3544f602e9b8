"""Trajectory and contact-force analytics.

Orbits are closed planar polylines (by default the Y-Z plane: drive along Z,
cross-coupled motion along Y). Axis lengths are full lengths (2a, 2b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit

from .contact import DEFAULT_FN_THRESHOLD, ContactRecord, detect_contact_events

LINE_RATIO = 0.05
DEGENERATE_SV_RATIO = 1e-9
ZERO_AREA = 1e-12  # m^2
CONTACT_RATIOS = (Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 4))


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # (n, 3) m

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (len(self.times), 3):
            raise ValueError("trajectory points must be (n, 3) matching the time stamps")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self.times) else 0.0


@dataclass
class Orbit:
    points: np.ndarray  # (n, 2), plane coordinates in m
    period: float
    frequency: float
    fold_residual: float = 0.0  # max deviation from the previous period, m

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("orbit points must be (n, 2)")

    def diameter(self) -> float:
        p = self.points
        return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))

    def closure_gap(self) -> float:
        return float(np.linalg.norm(self.points[-1] - self.points[0]))


@dataclass
class EllipseFit:
    major: float
    minor: float
    tilt: float  # rad in [0, pi), major axis from the first plane axis
    center: tuple[float, float]
    degenerate: bool = False


@dataclass
class OrbitSummary:
    major: float
    minor: float
    tilt: float
    area: float
    crossings: int
    classification: str

    def __post_init__(self):
        if self.major < self.minor or self.minor < 0:
            raise ValueError("axis lengths must satisfy major >= minor >= 0")


class InsufficientDataError(ValueError):
    pass


def extract_steady_orbit(traj: Trajectory, frequency: float, discard: float | None = None,
                         plane=(1, 2)) -> Orbit:
    """Last whole drive period of the trajectory after a transient.

    ``discard`` (s) defaults to 60 % of the duration. The half-open window
    (t_end - T, t_end] avoids repeating the first sample at the end.
    """
    if frequency <= 0:
        raise ValueError("drive frequency must be positive")
    period = 1.0 / frequency
    duration = traj.duration
    if discard is None:
        discard = 0.6 * duration
    if duration <= discard + 3.0 * period:
        raise InsufficientDataError(
            f"trajectory of {duration:.4g} s too short for discard {discard:.4g} s plus 3 periods"
        )
    t = traj.times
    t_end = t[-1]
    eps = 1e-9 * period
    sel = t > t_end - period + eps
    pts = traj.points[sel][:, list(plane)]
    if len(pts) < 8:
        raise InsufficientDataError(f"only {len(pts)} samples per period; need at least 8")
    prev = t > t_end - 2.0 * period + eps
    prev &= ~sel
    residual = 0.0
    prev_pts = traj.points[prev][:, list(plane)]
    if len(prev_pts) == len(pts):
        residual = float(np.max(np.linalg.norm(prev_pts - pts, axis=1)))
    return Orbit(pts, period, frequency, residual)


def _line_fit(p: np.ndarray, mean, vt) -> EllipseFit:
    d = vt[0]
    proj = (p - mean) @ d
    length = float(proj.max() - proj.min())
    tilt = math.atan2(d[1], d[0]) % math.pi
    return EllipseFit(length, 0.0, tilt, (float(mean[0]), float(mean[1])), True)


def _moment_fit(p, mean, s, vt) -> EllipseFit:
    # uniformly sampled ellipse: std along an axis is a / sqrt(2)
    n = len(p)
    sig = s / math.sqrt(n)
    d = vt[0]
    tilt = math.atan2(d[1], d[0]) % math.pi
    return EllipseFit(2.0 * math.sqrt(2.0) * sig[0], 2.0 * math.sqrt(2.0) * sig[1], tilt,
                      (float(mean[0]), float(mean[1])), False)


def fit_ellipse(orbit) -> EllipseFit:
    """Direct least-squares ellipse fit with a collinear fallback.

    Points are centred and scaled before the constrained conic fit
    (ellipse-specific, Halir-Flusser form) and mapped back afterwards.
    Accepts an :class:`Orbit` or an (n, 2) array.
    """
    p = np.asarray(orbit.points if isinstance(orbit, Orbit) else orbit, dtype=float)
    if len(p) < 6:
        raise InsufficientDataError("ellipse fitting needs at least 6 samples")
    mean = p.mean(axis=0)
    _, s, vt = np.linalg.svd(p - mean, full_matrices=False)
    if s[0] == 0.0 or s[1] < DEGENERATE_SV_RATIO * s[0]:
        return _line_fit(p, mean, vt)
    scale = s[0] / math.sqrt(len(p))
    u = (p - mean) / scale
    x, y = u[:, 0], u[:, 1]
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1, S2, S3 = D1.T @ D1, D1.T @ D2, D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError:
        return _moment_fit(p, mean, s, vt)
    Mred = S1 + S2 @ T
    Mred = np.array([Mred[2] / 2.0, -Mred[1], Mred[0] / 2.0])
    evals, evecs = np.linalg.eig(Mred)
    evecs = np.real(evecs)
    cond = 4.0 * evecs[0] * evecs[2] - evecs[1] ** 2
    ok = np.nonzero(cond > 0)[0]
    if len(ok) == 0:
        return _moment_fit(p, mean, s, vt)
    a1 = evecs[:, ok[0]]
    A, B, C = a1
    Dc, Ec, F = T @ a1
    Mq = np.array([[A, B / 2.0], [B / 2.0, C]])
    try:
        c = np.linalg.solve(2.0 * Mq, [-Dc, -Ec])
    except np.linalg.LinAlgError:
        return _moment_fit(p, mean, s, vt)
    Fc = F + 0.5 * (Dc * c[0] + Ec * c[1])
    lam, vec = np.linalg.eigh(Mq)
    if Fc == 0 or np.any(-Fc / lam <= 0):
        return _moment_fit(p, mean, s, vt)
    semi = np.sqrt(-Fc / lam) * scale
    i_major = int(np.argmax(semi))
    d = vec[:, i_major]
    tilt = math.atan2(d[1], d[0]) % math.pi
    center = mean + c * scale
    return EllipseFit(2.0 * float(semi.max()), 2.0 * float(semi.min()), tilt,
                      (float(center[0]), float(center[1])), False)


@njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True)
def _crossings_sweep(px, py, capacity):
    """Proper crossings of the closed polyline, sweeping segments sorted by x."""
    n = px.shape[0]
    xmin = np.empty(n)
    xmax = np.empty(n)
    ymin = np.empty(n)
    ymax = np.empty(n)
    for i in range(n):
        j = (i + 1) % n
        xmin[i] = min(px[i], px[j])
        xmax[i] = max(px[i], px[j])
        ymin[i] = min(py[i], py[j])
        ymax[i] = max(py[i], py[j])
    order = np.argsort(xmin, kind="mergesort")
    pairs = np.empty((capacity, 2), dtype=np.int64)
    count = 0
    for oi in range(n):
        i = order[oi]
        i2 = (i + 1) % n
        for oj in range(oi + 1, n):
            j = order[oj]
            if xmin[j] > xmax[i]:
                break
            if ymin[j] > ymax[i] or ymin[i] > ymax[j]:
                continue
            if j == i2 or i == (j + 1) % n:
                continue
            j2 = (j + 1) % n
            d1 = _orient(px[i], py[i], px[i2], py[i2], px[j], py[j])
            d2 = _orient(px[i], py[i], px[i2], py[i2], px[j2], py[j2])
            if not (d1 * d2 < 0.0):
                continue
            d3 = _orient(px[j], py[j], px[j2], py[j2], px[i], py[i])
            d4 = _orient(px[j], py[j], px[j2], py[j2], px[i2], py[i2])
            if d3 * d4 < 0.0:
                if count < capacity:
                    pairs[count, 0] = min(i, j)
                    pairs[count, 1] = max(i, j)
                count += 1
    return count, pairs


def count_self_intersections(orbit, return_points: bool = False):
    """Number of transversal crossings between non-adjacent segments.

    The polyline is closed (last sample joins the first). With
    ``return_points`` also returns the crossing locations, sorted by segment.
    """
    p = np.asarray(orbit.points if isinstance(orbit, Orbit) else orbit, dtype=float)
    if len(p) < 4:
        return (0, np.zeros((0, 2))) if return_points else 0
    px = np.ascontiguousarray(p[:, 0])
    py = np.ascontiguousarray(p[:, 1])
    capacity = 64
    while True:
        count, pairs = _crossings_sweep(px, py, capacity)
        if count <= capacity or not return_points:
            break
        capacity = count
    if not return_points:
        return int(count)
    pairs = pairs[:count]
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    pts = np.array([_segment_intersection(p, i, j) for i, j in pairs]).reshape(-1, 2)
    return int(count), pts


def _segment_intersection(p, i, j):
    n = len(p)
    a, b = p[i], p[(i + 1) % n]
    c, d = p[j], p[(j + 1) % n]
    r, s = b - a, d - c
    denom = r[0] * s[1] - r[1] * s[0]
    t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / denom
    return a + t * r


def signed_area(orbit) -> float:
    """Shoelace area of the closed polyline (positive counter-clockwise)."""
    p = np.asarray(orbit.points if isinstance(orbit, Orbit) else orbit, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def orbit_orientation(orbit) -> int:
    a = signed_area(orbit)
    if abs(a) < ZERO_AREA:
        return 0
    return 1 if a > 0 else -1


def classify(major: float, minor: float, crossings: int) -> str:
    if major == 0.0 or minor / major < LINE_RATIO:
        return "line"
    if crossings == 1:
        return "figure-8"
    if crossings >= 2:
        return "higher-order"
    return "oval"


def summarize_orbit(orbit: Orbit) -> OrbitSummary:
    """Ellipse axes on the raw point cloud plus area, crossings and class."""
    fit = fit_ellipse(orbit)
    crossings = count_self_intersections(orbit)
    return OrbitSummary(fit.major, fit.minor, fit.tilt, signed_area(orbit), crossings,
                        classify(fit.major, fit.minor, crossings))


@dataclass
class ContactFrequency:
    frequency: float  # Hz
    ratio: Fraction | None  # nearest of 1, 1/2, 1/3, 1/4 (None without events)
    residual: float  # contact/drive minus the chosen ratio


def contact_frequency(events, window: float, drive_frequency: float | None = None) -> ContactFrequency:
    """Touchdowns per second over ``window`` and the nearest subharmonic ratio.

    Fewer than three touchdowns give 0 Hz.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    n = len(events)
    f = n / window if n >= 3 else 0.0
    if drive_frequency is None or drive_frequency <= 0 or f == 0.0:
        return ContactFrequency(f, None, 0.0)
    r = Fraction(n) / Fraction(window).limit_denominator(10**9) / Fraction(drive_frequency).limit_denominator(10**9)
    best = min(CONTACT_RATIOS, key=lambda c: abs(r - c))
    return ContactFrequency(f, best, float(r - best))


def tangential_direction(record: ContactRecord, events=None,
                         fn_threshold: float = DEFAULT_FN_THRESHOLD):
    """Sign of the tangential impulse over each contact event and the majority sign."""
    if events is None:
        events = detect_contact_events(record, fn_threshold) if len(record) else []
    signs = []
    t = record.times
    for td, lo in events:
        sel = (t >= td) & (t <= lo)
        if sel.sum() < 2:
            imp = float(np.sum(record.ft[sel]))
        else:
            imp = float(np.trapezoid(record.ft[sel], t[sel]))
        signs.append(0 if imp == 0.0 else (1 if imp > 0 else -1))
    total = sum(signs)
    majority = 0 if total == 0 else (1 if total > 0 else -1)
    return signs, majority
