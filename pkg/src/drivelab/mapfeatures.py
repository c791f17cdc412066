"""Per-timestamp map features and the fixed-width model input windows.

Each frame carries both the raw along-route attribute distances (used by
scenario filters and error diagnosis) and the encoded features that enter
the model: category-1 distances as inverse distance capped at 1 (0 when the
attribute is absent or beyond 250 m), plus speed limits, curvature, the
counter-clockwise turn index and relative headings at the next junction,
and the route heading 1/5/10/20/50 m ahead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import (ATTRIBUTE_CAP_M, EGO_VEC_LEN, HEADING_VEC_LEN,
                        INSIDE_NODE_M, MAP_BLOCK_FEATURES, MAP_HISTORY_LEN,
                        MAP_HISTORY_SAMPLES, SPEED_RANGE_KMH, STEER_RANGE_DEG)
from .geometry import wrap_deg, wrap_rad
from .roadworld import DriveLog, RoadNetwork, Route, RoutePath, curvature_speed_cap_kmh

FUTURE_HEADING_DISTANCES = (1.0, 5.0, 10.0, 20.0, 50.0)


@dataclass
class MapFeatureFrame:
    # raw along-route distances in meters (inf when absent)
    raw_d_intersection: float
    raw_d_light: float
    raw_d_crossing: float
    raw_d_yield: float
    # encoded inverse distances in [0, 1]
    d_intersection: float
    d_light: float
    d_crossing: float
    d_yield: float
    speed_limit: float            # km/h
    free_flow_speed: float        # km/h
    curvature: float              # 1/m, >= 0
    signed_curvature: float       # 1/m, positive = left bend
    turn_number: int              # CCW index of the route's exit at the next junction
    our_road_heading: float       # deg in [-180, 180)
    other_roads_heading: float    # deg; nearest-to-straight non-route exit, 0 if none
    future_heading: tuple         # deg at 1/5/10/20/50 m ahead
    # diagnosis support
    dist_to_node: float           # distance to the nearest junction node on route
    dist_from_prev: float         # distance back to the last junction passed


@dataclass
class FeatureWindow:
    m14: np.ndarray   # 160 values: 20 samples x 8 slow features, oldest first
    m56: np.ndarray   # 7 values: junction + future headings at the current step
    ego: np.ndarray   # 9 values: 3 frames of normalized (v, s, heading rate)

    def __post_init__(self):
        if self.m14.shape != (MAP_HISTORY_LEN,):
            raise ValueError(f"m14 must have {MAP_HISTORY_LEN} values")
        if self.m56.shape != (HEADING_VEC_LEN,):
            raise ValueError(f"m56 must have {HEADING_VEC_LEN} values")
        if self.ego.shape != (EGO_VEC_LEN,):
            raise ValueError(f"ego must have {EGO_VEC_LEN} values")


def encode_inverse_distance(d: float) -> float:
    """min(1, 1/d) for distances up to the cap; 0 beyond it or when absent."""
    if not math.isfinite(d) or d > ATTRIBUTE_CAP_M:
        return 0.0
    if d <= 1.0:
        return 1.0
    return 1.0 / d


def _next_at_or_after(sorted_ds: np.ndarray, d: float) -> float:
    i = int(np.searchsorted(sorted_ds, d - 1e-9))
    return max(float(sorted_ds[i] - d), 0.0) if i < len(sorted_ds) else math.inf


def extract_frame_at(rp: RoutePath, d: float) -> MapFeatureFrame:
    """Features for the route location at arclength d.

    A junction is an encounter zone, not a point: its distance reads 0 from
    the node until INSIDE_NODE_M past it, and the junction heading features
    keep describing it until the crossing is complete.
    """
    d = min(max(d, 0.0), rp.length)
    # first junction whose crossing zone has not been completed yet
    rec_idx = int(np.searchsorted(rp.intersection_ds, d - INSIDE_NODE_M))
    if rec_idx < len(rp.intersection_ds):
        raw_int = max(float(rp.intersection_ds[rec_idx] - d), 0.0)
    else:
        raw_int = math.inf
    raw_light = _next_at_or_after(rp.lights, d)
    raw_cross = _next_at_or_after(rp.crossings, d)
    raw_yield = _next_at_or_after(rp.yields, d)

    limit = float(rp.speed_limit_at(d))
    signed_k = rp.polyline.curvature_at(d, window=3.0)
    kappa = abs(signed_k)
    free_flow = min(limit, curvature_speed_cap_kmh(kappa))

    turn_number = 0
    our_heading = 0.0
    other_heading = 0.0
    if math.isfinite(raw_int):
        rec = rp.intersection_recs[rec_idx]
        if rec["exit_edge"] is not None and rec["exits"]:
            rels = [rel for rel, _ in rec["exits"]]
            ours = next((j for j, (_, eid) in enumerate(rec["exits"])
                         if eid == rec["exit_edge"]), None)
            if ours is not None:
                turn_number = ours
                our_heading = rels[ours]
                others = [rel for j, rel in enumerate(rels) if j != ours]
                if others:
                    other_heading = min(others, key=lambda r: (abs(r), r))

    here = rp.polyline.heading_smoothed(d, window=1.5)
    future = tuple(
        wrap_deg(math.degrees(wrap_rad(
            rp.polyline.heading_smoothed(min(d + dist, rp.length), window=1.5) - here)))
        for dist in FUTURE_HEADING_DISTANCES)

    if len(rp.intersection_ds):
        nearest = float(np.min(np.abs(rp.intersection_ds - d)))
        before = rp.intersection_ds[rp.intersection_ds <= d + 1e-9]
        prev_d = float(d - before[-1]) if len(before) else math.inf
    else:
        nearest, prev_d = math.inf, math.inf

    return MapFeatureFrame(
        raw_d_intersection=raw_int, raw_d_light=raw_light,
        raw_d_crossing=raw_cross, raw_d_yield=raw_yield,
        d_intersection=encode_inverse_distance(raw_int),
        d_light=encode_inverse_distance(raw_light),
        d_crossing=encode_inverse_distance(raw_cross),
        d_yield=encode_inverse_distance(raw_yield),
        speed_limit=limit, free_flow_speed=free_flow,
        curvature=kappa, signed_curvature=signed_k,
        turn_number=turn_number, our_road_heading=float(wrap_deg(our_heading)),
        other_roads_heading=float(wrap_deg(other_heading)),
        future_heading=future, dist_to_node=nearest, dist_from_prev=prev_d)


def extract_frame(net: RoadNetwork, route: Route, loc) -> MapFeatureFrame:
    """Features at a (edge_id, offset) location, which must lie on the route."""
    rp = RoutePath(net, route)
    edge_id, offset = loc
    return extract_frame_at(rp, rp.arclength_of(edge_id, offset))


def frame_vector(frame: MapFeatureFrame) -> np.ndarray:
    """The 8 slow features of one frame, normalized for the model input."""
    return np.array([
        frame.d_intersection,
        frame.d_light,
        frame.d_crossing,
        frame.d_yield,
        frame.speed_limit / 120.0,
        min(frame.free_flow_speed, 120.0) / 120.0,
        min(frame.curvature * 50.0, 1.0),
        frame.turn_number / 4.0,
    ])


def heading_vector(frame: MapFeatureFrame) -> np.ndarray:
    """The 7 junction/route heading features of one frame, in degrees."""
    return np.array([frame.our_road_heading, frame.other_roads_heading,
                     *frame.future_heading])


def ego_vector(log: DriveLog, t: int) -> np.ndarray:
    """Normalized (speed, steering, heading rate) for frames t-2, t-1, t."""
    if t < 2:
        raise ValueError("ego vector needs 3 frames of history")
    vals = []
    for i in (t - 2, t - 1, t):
        rate = wrap_rad(log.heading[i] - log.heading[max(i - 1, 0)]) * log.rate_hz
        vals.extend([log.speed[i] / SPEED_RANGE_KMH,
                     log.steer[i] / STEER_RANGE_DEG,
                     rate / math.pi])
    return np.array(vals)


def build_window(frames, log: DriveLog, t: int) -> FeatureWindow:
    """Model input at step t: 2 s of slow features, current headings, ego state."""
    if t >= len(frames) or t >= len(log):
        raise ValueError(f"step {t} outside the available history")
    if t < MAP_HISTORY_SAMPLES - 1:
        raise ValueError(f"step {t}: need {MAP_HISTORY_SAMPLES} frames of history")
    block = np.concatenate([frame_vector(frames[i])
                            for i in range(t - MAP_HISTORY_SAMPLES + 1, t + 1)])
    assert block.shape == (MAP_HISTORY_LEN,)
    return FeatureWindow(block, heading_vector(frames[t]), ego_vector(log, t))


def frames_vector_table(frames) -> np.ndarray:
    """(N, 8) table of normalized slow features, one row per frame."""
    return np.stack([frame_vector(f) for f in frames]) if frames else \
        np.zeros((0, MAP_BLOCK_FEATURES))
