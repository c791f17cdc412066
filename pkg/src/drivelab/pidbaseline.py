"""PID post-processing of model predictions to hit a target comfort level.

The controller filters the prediction signal itself: each channel follows the
raw prediction as a setpoint through a discrete PID whose output increments
the filtered value, so kp=1 with ki=kd=0 passes the signal through untouched
and kp<1 low-passes it. Gains come from an exhaustive grid search matching a
requested (C_lat, C_lon).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .constants import SPEED_RANGE_KMH, STEER_RANGE_DEG
from .evalsuite import accuracy_metrics, comfort_metrics, human_likeness, \
    maneuver_windows


@dataclass(frozen=True)
class PidGains:
    steer: tuple   # (kp, ki, kd)
    speed: tuple

    def __post_init__(self):
        for kp, ki, kd in (self.steer, self.speed):
            if min(kp, ki, kd) < 0:
                raise ValueError("PID gains must be >= 0")


def pid_filter(series, kp: float, ki: float, kd: float, rate_hz: float,
               lo: float, hi: float) -> np.ndarray:
    """Discrete PID tracking of a setpoint series, clamped to [lo, hi]."""
    series = np.asarray(series, dtype=float)
    if len(series) == 0:
        raise ValueError("empty series")
    dt = 1.0 / rate_hz
    out = np.empty_like(series)
    y = float(np.clip(series[0], lo, hi))
    out[0] = y
    integral = 0.0
    e_prev = 0.0
    for i in range(1, len(series)):
        e = series[i] - y
        integral += e * dt
        deriv = (e - e_prev) / dt
        y = float(np.clip(y + kp * e + ki * integral + kd * deriv, lo, hi))
        e_prev = e
        out[i] = y
    return out


def pid_smooth(preds, gains: PidGains, rate_hz: float) -> np.ndarray:
    """Filter both channels of a (N, 2) prediction series."""
    preds = np.asarray(preds, dtype=float)
    s = pid_filter(preds[:, 0], *gains.steer, rate_hz,
                   -STEER_RANGE_DEG, STEER_RANGE_DEG)
    v = pid_filter(preds[:, 1], *gains.speed, rate_hz, 0.0, SPEED_RANGE_KMH)
    return np.column_stack([s, v])


@dataclass(frozen=True)
class GridSpec:
    kp: tuple = tuple(round(0.1 * i, 2) for i in range(1, 11))
    ki: tuple = (0.0, 0.01, 0.05, 0.1)
    kd: tuple = (0.0, 0.05, 0.1, 0.2)

    def combos(self):
        return list(itertools.product(self.kp, self.ki, self.kd))


@dataclass
class TuneResult:
    gains: PidGains
    achieved: dict
    comfort_reduced: bool


def grid_tune(preds, truths, targets, grid: GridSpec | None = None,
              rate_hz: float = 10.0, clusters=None) -> TuneResult:
    """Exhaustive grid search for the gains whose smoothed comfort best
    matches targets = (C_lat, C_lon).

    The objective |C_lat - target| + |C_lon - target| separates by channel,
    so each channel's grid is scanned once; the combined winner equals the
    full product-grid argmin with ties broken by lower resulting A_s and
    then by grid order.
    """
    grid = grid or GridSpec()
    combos = grid.combos()
    if not combos:
        raise ValueError("empty gain grid")
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    target_lat, target_lon = targets
    if min(target_lat, target_lon) <= 0:
        raise ValueError("comfort targets must be positive")

    best = {}
    for ci, (channel, lo, hi, target) in enumerate((
            ("steer", -STEER_RANGE_DEG, STEER_RANGE_DEG, target_lat),
            ("speed", 0.0, SPEED_RANGE_KMH, target_lon))):
        choice = None
        for gains in combos:
            smoothed = pid_filter(preds[:, ci], *gains, rate_hz, lo, hi)
            both = preds.copy()
            both[:, ci] = smoothed
            c = comfort_metrics(both, rate_hz)[ci]
            a_s = float(np.abs(smoothed - truths[:, 0]).mean()) if ci == 0 else 0.0
            key = (abs(c - target), a_s)
            if choice is None or key < choice[0]:
                choice = (key, gains, smoothed)
        best[channel] = choice

    gains = PidGains(best["steer"][1], best["speed"][1])
    smoothed = np.column_stack([best["steer"][2], best["speed"][2]])
    a_s, a_v = accuracy_metrics(smoothed, truths)
    c_lat, c_lon = comfort_metrics(smoothed, rate_hz)
    raw_lat, raw_lon = comfort_metrics(preds, rate_hz)
    achieved = {"a_s": a_s, "a_v": a_v, "c_lat": c_lat, "c_lon": c_lon,
                "h": math.nan}
    if clusters is not None:
        achieved["h"] = human_likeness(clusters, maneuver_windows(smoothed),
                                       maneuver_windows(truths))
    return TuneResult(gains, achieved,
                      comfort_reduced=c_lat <= raw_lat and c_lon <= raw_lon)
