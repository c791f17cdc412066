"""Planar polyline geometry shared by the road world, matcher and features."""

from __future__ import annotations

import math

import numpy as np


def wrap_rad(a):
    """Wrap angle(s) into [-pi, pi)."""
    wrapped = (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    return float(wrapped) if np.ndim(a) == 0 else wrapped


def wrap_deg(a):
    """Wrap angle(s) into [-180, 180)."""
    wrapped = (np.asarray(a, dtype=float) + 180.0) % 360.0 - 180.0
    return float(wrapped) if np.ndim(a) == 0 else wrapped


class Polyline:
    """Planar polyline with arclength-indexed queries. Treated as immutable."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("polyline needs at least two planar points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len < 1e-12):
            raise ValueError("degenerate polyline segment")
        self.points = pts
        self.seg_len = seg_len
        self.cum_len = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum_len[-1])

    def min_vertex_spacing(self) -> float:
        return float(self.seg_len.min())

    def _segment_of(self, d: float):
        d = min(max(d, 0.0), self.length)
        i = int(np.searchsorted(self.cum_len, d, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        return i, d - self.cum_len[i]

    def point_at(self, d: float) -> np.ndarray:
        i, r = self._segment_of(d)
        p0 = self.points[i]
        return p0 + (self.points[i + 1] - p0) * (r / self.seg_len[i])

    def points_at(self, ds) -> np.ndarray:
        ds = np.clip(np.asarray(ds, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum_len, ds, side="right") - 1,
                      0, len(self.seg_len) - 1)
        frac = (ds - self.cum_len[idx]) / self.seg_len[idx]
        p0 = self.points[idx]
        return p0 + (self.points[idx + 1] - p0) * frac[:, None]

    def heading_at(self, d: float) -> float:
        """Tangent heading (rad) of the segment containing arclength d."""
        i, _ = self._segment_of(d)
        dx, dy = self.points[i + 1] - self.points[i]
        return math.atan2(dy, dx)

    def heading_smoothed(self, d: float, window: float = 1.5) -> float:
        """Chord heading over [d - window/2, d + window/2]; stable at vertices."""
        a = self.point_at(max(0.0, d - 0.5 * window))
        b = self.point_at(min(self.length, d + 0.5 * window))
        if abs(b[0] - a[0]) < 1e-12 and abs(b[1] - a[1]) < 1e-12:
            return self.heading_at(d)
        return math.atan2(b[1] - a[1], b[0] - a[0])

    def curvature_at(self, d: float, window: float = 3.0) -> float:
        """Signed curvature (1/m, positive = left turn).

        Measured as the heading change between the chords [d-window, d] and
        [d, d+window]; exact for circular arcs, mildly quantized by vertex
        spacing otherwise.
        """
        lo = max(0.0, d - window)
        hi = min(self.length, d + window)
        span = 0.5 * (hi - lo)
        if span < 1e-9:
            return 0.0
        a = self.point_at(lo)
        m = self.point_at(d)
        b = self.point_at(hi)
        if (abs(m[0] - a[0]) + abs(m[1] - a[1]) < 1e-12
                or abs(b[0] - m[0]) + abs(b[1] - m[1]) < 1e-12):
            return 0.0
        h0 = math.atan2(m[1] - a[1], m[0] - a[0])
        h1 = math.atan2(b[1] - m[1], b[0] - m[0])
        return wrap_rad(h1 - h0) / span

    def project(self, p, lo: float = 0.0, hi: float | None = None):
        """Nearest point to p with arclength restricted to [lo, hi].

        Returns (arclength, distance). Ties resolve to the smaller arclength.
        """
        if hi is None:
            hi = self.length
        lo = max(0.0, min(lo, self.length))
        hi = max(lo, min(hi, self.length))
        p = np.asarray(p, dtype=float)
        a = self.points[:-1]
        ab = self.points[1:] - a
        # clamp the per-segment parameter range to the arclength window
        t_lo = np.clip((lo - self.cum_len[:-1]) / self.seg_len, 0.0, 1.0)
        t_hi = np.clip((hi - self.cum_len[:-1]) / self.seg_len, 0.0, 1.0)
        usable = t_lo <= t_hi
        t = np.einsum("ij,ij->i", p - a, ab) / (self.seg_len ** 2)
        t = np.clip(t, t_lo, t_hi)
        q = a + ab * t[:, None]
        dist = np.hypot(q[:, 0] - p[0], q[:, 1] - p[1])
        dist[~usable] = np.inf
        i = int(np.argmin(dist))
        return float(self.cum_len[i] + t[i] * self.seg_len[i]), float(dist[i])

    def slice(self, d0: float, d1: float) -> np.ndarray:
        """Vertex array covering arclengths [d0, d1], with cut endpoints."""
        if not 0.0 <= d0 < d1 <= self.length + 1e-9:
            raise ValueError(f"bad slice range [{d0}, {d1}] on length {self.length}")
        d1 = min(d1, self.length)
        inner = (self.cum_len > d0 + 1e-9) & (self.cum_len < d1 - 1e-9)
        pts = [self.point_at(d0)]
        pts.extend(self.points[inner])
        pts.append(self.point_at(d1))
        out = [pts[0]]
        for q in pts[1:]:
            if np.hypot(*(q - out[-1])) > 1e-9:
                out.append(q)
        return np.asarray(out)


def segment_point_distance(p, a, b) -> tuple[float, float]:
    """Distance from p to segment ab and the offset of the foot point along ab."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    L2 = float(ab @ ab)
    t = 0.0 if L2 == 0.0 else float(np.clip((p - a) @ ab / L2, 0.0, 1.0))
    q = a + t * ab
    return float(np.hypot(*(p - q))), t * math.sqrt(L2)
