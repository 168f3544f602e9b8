"""Compliant point contact against a ground plane.

Normal force is a unilateral spring-damper on penetration; friction is
Coulomb regularized by a linear ramp below ``v_reg``. The same law is used
inside the simulation kernels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_FN_THRESHOLD = 0.01  # N


@dataclass(frozen=True)
class ContactConfig:
    """Ground plane and contact-law constants (SI).

    The plane is ``normal . p = ground`` where ``ground`` sits ``natural_gap``
    below the contact point of the unloaded beam, unless ``ground_height``
    pins it explicitly. ``stage_height`` is the stage-to-plate distance of
    the bench setup, kept for reporting.
    """

    k_n: float = 5000.0
    c_n: float = 5.0
    mu: float = 0.6
    v_reg: float = 1e-3
    natural_gap: float = 5.5e-3
    stage_height: float = 72e-3
    ground_height: float | None = None
    normal: tuple[float, float, float] = (0.0, 1.0, 0.0)
    tangent: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.k_n > 0:
            raise ValueError("k_n must be positive")
        if self.c_n < 0 or self.mu < 0:
            raise ValueError("c_n and mu must be non-negative")
        if not self.v_reg > 0:
            raise ValueError("v_reg must be positive")
        if self.natural_gap < 0:
            raise ValueError("natural gap must be non-negative")
        n = np.asarray(self.normal, dtype=float)
        t = np.asarray(self.tangent, dtype=float)
        if not math.isclose(np.linalg.norm(n), 1.0, abs_tol=1e-12):
            raise ValueError("contact normal must be a unit vector")
        if not math.isclose(np.linalg.norm(t), 1.0, abs_tol=1e-12) or abs(n @ t) > 1e-12:
            raise ValueError("contact tangent must be a unit vector in the ground plane")


def _sat(x: float) -> float:
    return max(-1.0, min(1.0, x))


def contact_force(gap: float, gap_rate: float, tangential_velocity: float,
                  cfg: ContactConfig) -> tuple[float, float]:
    """Normal and tangential force for one point sliding along a line.

    Positive ``gap`` means separation. The tangential force opposes the
    sliding velocity and never exceeds ``mu * F_n``.
    """
    if gap > 0.0:
        return 0.0, 0.0
    fn = max(0.0, -cfg.k_n * gap - cfg.c_n * gap_rate)
    ft = -cfg.mu * fn * _sat(tangential_velocity / cfg.v_reg)
    return fn, ft


@dataclass
class ContactRecord:
    """Uniformly sampled contact history of one point."""

    times: np.ndarray
    gap: np.ndarray
    fn: np.ndarray
    ft: np.ndarray
    in_contact: np.ndarray

    def __len__(self):
        return len(self.times)

    def window(self, t_start: float, t_end: float | None = None) -> ContactRecord:
        sel = self.times >= t_start - 1e-12
        if t_end is not None:
            sel &= self.times < t_end - 1e-12
        return ContactRecord(self.times[sel], self.gap[sel], self.fn[sel], self.ft[sel],
                             self.in_contact[sel])

    def negated(self) -> ContactRecord:
        return ContactRecord(self.times, self.gap, self.fn, -self.ft, self.in_contact)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["t[s]", "fn[N]", "ft[N]", "gap[m]", "contact"])
            for row in zip(self.times, self.fn, self.ft, self.gap, self.in_contact):
                wr.writerow([repr(float(v)) for v in row[:4]] + [str(int(row[4]))])

    @classmethod
    def from_csv(cls, path) -> ContactRecord:
        rows = [r for r in csv.reader(_uncommented(path))]
        head, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        col = {name: i for i, name in enumerate(head)}
        return cls(body[:, col["t[s]"]], body[:, col["gap[m]"]], body[:, col["fn[N]"]],
                   body[:, col["ft[N]"]], body[:, col["contact"]] > 0.5)


def _uncommented(path):
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#") and line.strip():
                yield line


def detect_contact_events(record: ContactRecord, fn_threshold: float = DEFAULT_FN_THRESHOLD):
    """Touchdown/liftoff times from the normal force.

    A touchdown happens when F_n rises above ``fn_threshold``; the matching
    liftoff needs F_n to fall below half the threshold. An event still open
    at the end of the record gets the last sample time as its liftoff.
    """
    if len(record) == 0:
        raise ValueError("empty contact record")
    events = []
    touching = False
    start = 0.0
    for t, fn in zip(record.times, record.fn):
        if not touching and fn > fn_threshold:
            touching, start = True, float(t)
        elif touching and fn < 0.5 * fn_threshold:
            touching = False
            events.append((start, float(t)))
    if touching:
        events.append((start, float(record.times[-1])))
    return events


def duty_cycle(record: ContactRecord, fn_threshold: float = DEFAULT_FN_THRESHOLD) -> float:
    """Fraction of samples with F_n above the threshold."""
    if len(record) == 0:
        return 0.0
    return float(np.mean(record.fn > fn_threshold))
