"""Synthetic road networks and the scripted reference driver.

The generator lays intersections on a jittered grid with an urban (west) and
a rural (east) zone, adds dead-end stubs until enough degree-3+ nodes exist,
and decorates urban edges with traffic lights / pedestrian crossings and
rural edges with curved sections. The reference driver rides the route
geometry with a jerk-limited speed profile and a pure-pursuit style steering
law, producing ground-truth logs that a GPS corruptor then degrades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import LAT_ACCEL_MAX, SPEED_LIMITS, SPEED_RANGE_KMH, STEER_RANGE_DEG
from .geometry import Polyline, wrap_rad
from . import textio

MIN_VERTEX_SPACING = 0.1
KMH = 3.6  # m/s -> km/h


@dataclass
class RoadEdge:
    edge_id: int
    node_a: int
    node_b: int
    polyline: Polyline
    speed_limit: int
    traffic_lights: tuple = ()
    crossings: tuple = ()
    yield_signs: tuple = ()

    @property
    def length_m(self) -> float:
        return self.polyline.length

    def validate(self) -> None:
        if self.speed_limit not in SPEED_LIMITS:
            raise ValueError(f"edge {self.edge_id}: speed limit {self.speed_limit}")
        if self.polyline.min_vertex_spacing() < MIN_VERTEX_SPACING - 1e-9:
            raise ValueError(f"edge {self.edge_id}: vertices closer than "
                             f"{MIN_VERTEX_SPACING} m")
        for off in (*self.traffic_lights, *self.crossings, *self.yield_signs):
            if not 0.0 <= off <= self.length_m:
                raise ValueError(f"edge {self.edge_id}: attribute offset {off} "
                                 f"outside [0, {self.length_m}]")


class RoadNetwork:
    """Connected planar road graph with per-edge attributes."""

    def __init__(self, nodes: dict, edges: list):
        self.nodes = dict(nodes)
        self.edges = {e.edge_id: e for e in edges}
        self.adjacency: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for e in edges:
            e.validate()
            for nid, end in ((e.node_a, e.polyline.points[0]),
                             (e.node_b, e.polyline.points[-1])):
                if nid not in self.nodes:
                    raise ValueError(f"edge {e.edge_id} references unknown node {nid}")
                if np.hypot(*(np.asarray(self.nodes[nid]) - end)) > 1e-6:
                    raise ValueError(f"edge {e.edge_id} polyline does not end "
                                     f"on node {nid}")
            self.adjacency[e.node_a].append(e.edge_id)
            self.adjacency[e.node_b].append(e.edge_id)
        self._check_connected()
        self.intersections = sorted(
            nid for nid, inc in self.adjacency.items() if len(inc) >= 3)
        self._incident_ccw = {nid: self._order_ccw(nid) for nid in self.intersections}
        self._node_dist_cache: dict[int, dict[int, float]] = {}

    def _check_connected(self) -> None:
        if not self.nodes:
            raise ValueError("empty network")
        seen = set()
        stack = [next(iter(self.nodes))]
        while stack:
            nid = stack.pop()
            if nid in seen:
                continue
            seen.add(nid)
            for eid in self.adjacency[nid]:
                e = self.edges[eid]
                stack.append(e.node_b if e.node_a == nid else e.node_a)
        if seen != set(self.nodes):
            raise ValueError("road network is not connected")

    def departure_heading(self, edge_id: int, node_id: int) -> float:
        """Heading (rad) of the edge as it leaves node_id."""
        e = self.edges[edge_id]
        if node_id == e.node_a:
            p, q = e.polyline.points[0], e.polyline.points[1]
        elif node_id == e.node_b:
            p, q = e.polyline.points[-1], e.polyline.points[-2]
        else:
            raise ValueError(f"edge {edge_id} not incident to node {node_id}")
        return math.atan2(q[1] - p[1], q[0] - p[0])

    def _order_ccw(self, node_id: int) -> tuple:
        inc = self.adjacency[node_id]
        return tuple(sorted(inc, key=lambda eid: (self.departure_heading(eid, node_id),
                                                  eid)))

    def incident_ccw(self, node_id: int) -> tuple:
        """Incident edges of an intersection in counter-clockwise angular order."""
        return self._incident_ccw[node_id]

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])

    def other_node(self, edge_id: int, node_id: int) -> int:
        e = self.edges[edge_id]
        return e.node_b if e.node_a == node_id else e.node_a

    def node_distances(self, source: int) -> dict[int, float]:
        """Shortest along-network distance from source to every node (Dijkstra)."""
        if source in self._node_dist_cache:
            return self._node_dist_cache[source]
        import heapq
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, nid = heapq.heappop(heap)
            if d > dist.get(nid, math.inf):
                continue
            for eid in self.adjacency[nid]:
                e = self.edges[eid]
                other = e.node_b if e.node_a == nid else e.node_a
                nd = d + e.length_m
                if nd < dist.get(other, math.inf):
                    dist[other] = nd
                    heapq.heappush(heap, (nd, other))
        self._node_dist_cache[source] = dist
        return dist


@dataclass(frozen=True)
class Route:
    """Ordered edge traversal; offsets are measured in each end edge's
    traversal direction."""
    steps: tuple          # of (edge_id, forward: bool)
    start_offset: float = 0.0
    end_offset: float | None = None  # None = full last edge

    def __post_init__(self):
        if not self.steps:
            raise ValueError("route needs at least one edge")


@dataclass
class DriveLog:
    rate_hz: float
    t: np.ndarray
    steer: np.ndarray       # deg
    speed: np.ndarray       # km/h
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray     # rad
    route_offset: np.ndarray

    def __len__(self):
        return len(self.t)


@dataclass
class GpsTrace:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    sigma: float

    def __len__(self):
        return len(self.t)


class RoutePath:
    """Concatenated geometry plus along-route attribute tables for one route."""

    def __init__(self, net: RoadNetwork, route: Route):
        self.net = net
        self.route = route
        pts: list[np.ndarray] = []
        self.step_meta = []  # (edge_id, forward, d0, native_o0, native_o1)
        d_acc = 0.0
        self.lights: list[float] = []
        self.crossings: list[float] = []
        self.yields: list[float] = []
        cursor_node = None
        for i, (eid, fwd) in enumerate(route.steps):
            e = net.edges[eid]
            if cursor_node is None:
                cursor_node = e.node_a if fwd else e.node_b
            expected = e.node_a if fwd else e.node_b
            if cursor_node != expected:
                raise ValueError(f"route step {i}: edge {eid} does not continue "
                                 f"from node {cursor_node}")
            lo = route.start_offset if i == 0 else 0.0
            hi = e.length_m
            if i == len(route.steps) - 1 and route.end_offset is not None:
                hi = route.end_offset
            if hi - lo <= 0:
                raise ValueError(f"route step {i}: empty traversal of edge {eid}")
            # native-arclength window actually covered, in traversal order
            o0, o1 = (lo, hi) if fwd else (e.length_m - lo, e.length_m - hi)
            n_lo, n_hi = (o0, o1) if fwd else (o1, o0)
            piece = e.polyline.slice(n_lo, n_hi)
            if not fwd:
                piece = piece[::-1]
            if pts:
                piece = piece[1:]
            pts.extend(piece)
            for offs, bucket in ((e.traffic_lights, self.lights),
                                 (e.crossings, self.crossings),
                                 (e.yield_signs, self.yields)):
                for off in offs:
                    if n_lo - 1e-9 <= off <= n_hi + 1e-9:
                        rd = d_acc + ((off - o0) if fwd else (o0 - off))
                        bucket.append(rd)
            self.step_meta.append((eid, fwd, d_acc, o0, o1))
            d_acc += hi - lo
            cursor_node = e.node_b if fwd else e.node_a
        self.polyline = Polyline(pts)
        self.length = self.polyline.length
        self.lights = np.array(sorted(self.lights))
        self.crossings = np.array(sorted(self.crossings))
        self.yields = np.array(sorted(self.yields))
        self._step_d0 = np.array([m[2] for m in self.step_meta])
        self._build_intersections()

    def _build_intersections(self) -> None:
        """Route intersections: (route_d, node, entry heading, exit edge or None)."""
        net, route = self.net, self.route
        recs = []
        node = None
        for i, (eid, fwd) in enumerate(route.steps):
            e = net.edges[eid]
            start_node = e.node_a if fwd else e.node_b
            end_node = e.node_b if fwd else e.node_a
            if i == 0 and route.start_offset == 0.0 and net.degree(start_node) >= 3:
                recs.append((0.0, start_node, None, eid))
            d_end = self.step_meta[i][2] + abs(self.step_meta[i][4] - self.step_meta[i][3])
            if net.degree(end_node) >= 3:
                exit_eid = route.steps[i + 1][0] if i + 1 < len(route.steps) else None
                at_end = i == len(route.steps) - 1 and (
                    route.end_offset is not None and route.end_offset < e.length_m - 1e-9)
                if not at_end:
                    recs.append((d_end, end_node, eid, exit_eid))
        self.intersection_recs = []
        for d, nid, entry_eid, exit_eid in recs:
            if entry_eid is None:
                entry_heading = self.polyline.heading_smoothed(0.0, window=2.0)
            else:
                # heading arriving at the node along the entry edge
                entry_heading = self.polyline.heading_smoothed(max(0.0, d - 2.0),
                                                               window=2.0)
            exits = []
            for eid in self.net.adjacency[nid]:
                if entry_eid is not None and eid == entry_eid:
                    continue
                head = self.net.departure_heading(eid, nid)
                rel = math.degrees(wrap_rad(head - entry_heading))
                if rel >= 180.0:
                    rel -= 360.0
                exits.append((rel, eid))
            exits.sort(key=lambda p: (p[0], p[1]))
            self.intersection_recs.append(
                {"d": d, "node": nid, "entry_heading": entry_heading,
                 "exit_edge": exit_eid, "exits": exits})
        self.intersection_ds = np.array([r["d"] for r in self.intersection_recs])

    def step_index_at(self, d: float) -> int:
        i = int(np.searchsorted(self._step_d0, min(max(d, 0.0), self.length),
                                side="right")) - 1
        return min(max(i, 0), len(self.step_meta) - 1)

    def edge_offset_at(self, d: float):
        """(edge_id, native offset on that edge) for route arclength d."""
        eid, fwd, d0, o0, _ = self.step_meta[self.step_index_at(d)]
        local = min(max(d, 0.0), self.length) - d0
        return eid, (o0 + local) if fwd else (o0 - local)

    def arclength_of(self, edge_id: int, offset: float) -> float:
        """Route arclength of a native edge offset (first traversal that covers it)."""
        for eid, fwd, d0, o0, o1 in self.step_meta:
            if eid != edge_id:
                continue
            lo, hi = min(o0, o1), max(o0, o1)
            if lo - 1e-9 <= offset <= hi + 1e-9:
                return d0 + ((offset - o0) if fwd else (o0 - offset))
        raise ValueError(f"edge {edge_id} offset {offset} is not on the route")

    def speed_limit_at(self, d: float) -> int:
        eid = self.step_meta[self.step_index_at(d)][0]
        return self.net.edges[eid].speed_limit


@dataclass
class DriverParams:
    """Reference driver tuning; jerk caps bound the log's comfort metrics."""
    cruise_margin_kmh: float = 1.0
    accel_max: float = 1.6          # m/s^2
    decel_max: float = 2.5          # m/s^2 (approach planning)
    lon_jerk_max: float = 2.5       # m/s^3; C_lon of a log <= 3.6 * this
    slow_zone_kmh: float = 5.0
    slow_zone_len_m: float = 10.0
    speed_gain: float = 1.8         # 1/s
    lookahead_time_s: float = 0.9   # speed target looks this far ahead
    steer_ratio: float = 16.0
    wheelbase_m: float = 2.7
    steer_rate_max: float = 500.0   # deg/s
    steer_accel_max: float = 2400.0  # deg/s^2; C_lat of a log <= this
    steer_gain: float = 5.0         # 1/s
    lookahead_base_m: float = 3.0
    lookahead_per_ms: float = 0.45
    lookahead_max_m: float = 12.0
    speed_noise_kmh: float = 0.35
    steer_noise_deg: float = 0.15
    profile_step_m: float = 0.5


def curvature_speed_cap_kmh(curvature: float) -> float:
    """Speed at which lateral acceleration hits its cap on a curve."""
    return KMH * math.sqrt(LAT_ACCEL_MAX / max(abs(curvature), 1e-9))


def _speed_profile(rp: RoutePath, p: DriverParams) -> tuple[np.ndarray, np.ndarray]:
    """Feasible target speed (m/s) on a regular arclength grid."""
    n = max(int(math.ceil(rp.length / p.profile_step_m)) + 1, 2)
    grid = np.linspace(0.0, rp.length, n)
    step = grid[1] - grid[0]
    headings = np.array([rp.polyline.heading_smoothed(d, window=2.0) for d in grid])
    dh = np.abs(wrap_rad(np.diff(headings)))
    kappa = np.zeros(n)
    kappa[1:-1] = (dh[:-1] + dh[1:]) / (2.0 * step)
    kappa[0], kappa[-1] = kappa[1], kappa[-2]
    limits = np.array([rp.speed_limit_at(d) for d in grid], dtype=float)
    cap_kmh = np.minimum(limits, 0.98 * KMH * np.sqrt(
        LAT_ACCEL_MAX / np.maximum(kappa, 1e-9)))
    cap_kmh = np.maximum(cap_kmh - p.cruise_margin_kmh, p.slow_zone_kmh)
    for attr_d in np.concatenate([rp.lights, rp.crossings]):
        zone = (grid >= attr_d - p.slow_zone_len_m) & (grid <= attr_d + 1.0)
        cap_kmh[zone] = np.minimum(cap_kmh[zone], p.slow_zone_kmh)
    v = cap_kmh / KMH
    for i in range(n - 2, -1, -1):  # braking feasibility, backward
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2.0 * p.decel_max * step))
    for i in range(1, n):  # acceleration feasibility, forward
        v[i] = min(v[i], math.sqrt(v[i - 1] ** 2 + 2.0 * p.accel_max * step))
    return grid, v


def simulate_reference_driver(net: RoadNetwork, route: Route, rate_hz: float,
                              seed: int, params: DriverParams | None = None) -> DriveLog:
    """Drive the route like a careful human; returns the ground-truth log."""
    if rate_hz <= 0:
        raise ValueError("rate must be positive")
    p = params or DriverParams()
    rp = RoutePath(net, route)
    grid, profile = _speed_profile(rp, p)
    step = grid[1] - grid[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    dt = 1.0 / rate_hz
    tau = 2.0  # noise correlation time, s
    ou_k = math.exp(-dt / tau)
    ou_s = math.sqrt(1.0 - ou_k * ou_k)
    n_v = 0.0
    n_s = 0.0

    d = 0.0
    v = float(profile[0])
    a = 0.0
    steer = 0.0
    steer_rate = 0.0
    rows = []
    max_steps = int(20 * rp.length / max(p.slow_zone_kmh / KMH, 0.1) * rate_hz) + 1000
    for i in range(max_steps):
        pos = rp.polyline.point_at(d)
        heading = rp.polyline.heading_smoothed(d, window=1.5)
        rows.append((i * dt,
                     float(np.clip(steer, -STEER_RANGE_DEG, STEER_RANGE_DEG)),
                     float(np.clip(v * KMH, 0.0, SPEED_RANGE_KMH)),
                     float(pos[0]), float(pos[1]), heading, d))
        if d >= rp.length - 1e-6:
            break
        # longitudinal: track the lowest profile speed within the lookahead window
        look = max(v, 1.0) * p.lookahead_time_s
        i0 = int(np.searchsorted(grid, d, side="right")) - 1
        i1 = int(np.searchsorted(grid, d + look, side="right"))
        v_des = float(profile[max(i0, 0):max(i1, i0 + 1) + 1].min())
        n_v = ou_k * n_v + ou_s * rng.normal(0.0, p.speed_noise_kmh)
        v_des = max(v_des + n_v / KMH, 0.0)
        a_des = float(np.clip(p.speed_gain * (v_des - v), -p.decel_max - 0.5,
                              p.accel_max))
        a += float(np.clip(a_des - a, -p.lon_jerk_max * dt, p.lon_jerk_max * dt))
        v = max(0.0, v + a * dt)
        # lateral: pure-pursuit style law on the route geometry, jerk limited
        look_d = float(np.clip(p.lookahead_base_m + p.lookahead_per_ms * v,
                               3.0, p.lookahead_max_m))
        target = rp.polyline.point_at(min(d + look_d, rp.length))
        alpha = wrap_rad(math.atan2(target[1] - pos[1], target[0] - pos[0]) - heading)
        kappa_pp = 2.0 * math.sin(alpha) / look_d
        n_s = ou_k * n_s + ou_s * rng.normal(0.0, p.steer_noise_deg)
        raw = math.degrees(math.atan(p.wheelbase_m * kappa_pp)) * p.steer_ratio + n_s
        raw = float(np.clip(raw, -STEER_RANGE_DEG, STEER_RANGE_DEG))
        rate_des = float(np.clip(p.steer_gain * (raw - steer),
                                 -p.steer_rate_max, p.steer_rate_max))
        steer_rate += float(np.clip(rate_des - steer_rate,
                                    -p.steer_accel_max * dt, p.steer_accel_max * dt))
        steer = float(np.clip(steer + steer_rate * dt,
                              -STEER_RANGE_DEG, STEER_RANGE_DEG))
        d = min(d + v * dt, rp.length)
    else:
        raise RuntimeError("route appears unreachable: step budget exhausted")
    arr = np.array(rows)
    return DriveLog(rate_hz, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                    arr[:, 4], arr[:, 5], arr[:, 6])


def corrupt_gps(log: DriveLog, sigma: float, seed: int) -> GpsTrace:
    """True positions plus isotropic Gaussian noise of std sigma, seeded."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6B5]))
    noise = rng.normal(0.0, sigma, size=(len(log), 2)) if sigma > 0 else np.zeros((len(log), 2))
    return GpsTrace(log.t.copy(), log.x + noise[:, 0], log.y + noise[:, 1], sigma)


# ---------------------------------------------------------------------------
# network generation


def _arc_offsets(length: float, rng) -> tuple[np.ndarray, float]:
    """Lateral offsets for a wiggly rural edge; max |curvature| <= ~0.018."""
    wavelength = 100.0
    n_periods = max(1, int((length - 120.0) // wavelength))
    kappa = rng.uniform(0.011, 0.018)
    amp = 2.0 * kappa / (2.0 * math.pi / wavelength) ** 2
    side = 1.0 if rng.random() < 0.5 else -1.0
    start = 0.5 * (length - n_periods * wavelength)
    return np.array([start, start + n_periods * wavelength, amp * side, wavelength]), kappa


def _edge_polyline(pa, pb, curved: bool, rng) -> np.ndarray:
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    chord = float(np.hypot(*(pb - pa)))
    spacing = 2.0 if curved else 15.0
    n = max(int(chord / spacing), 1)
    ts = np.linspace(0.0, 1.0, n + 1)
    base = pa + np.outer(ts, pb - pa)
    if not curved:
        return base
    (w0, w1, amp, wavelength), _kappa = _arc_offsets(chord, rng)
    u = ts * chord
    lat = np.where((u >= w0) & (u <= w1),
                   amp * 0.5 * (1.0 - np.cos(2.0 * math.pi * (u - w0) / wavelength)),
                   0.0)
    direction = (pb - pa) / chord
    normal = np.array([-direction[1], direction[0]])
    return base + np.outer(lat, normal)


def generate_network(seed: int, num_intersections: int,
                     urban_fraction: float) -> RoadNetwork:
    """Seeded synthetic road network with at least num_intersections
    degree-3+ nodes and the requested urban share of edges."""
    if num_intersections < 2:
        raise ValueError("need at least 2 intersections")
    if not 0.0 <= urban_fraction <= 1.0:
        raise ValueError("urban_fraction must be in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0AD]))

    cols = max(int(math.ceil(math.sqrt(num_intersections))), 2)
    rows = max(int(math.ceil(num_intersections / cols)), 2)
    urban_cols = int(round(urban_fraction * cols))
    if urban_fraction > 0 and urban_cols == 0:
        urban_cols = 1
    if urban_fraction < 1 and urban_cols == cols:
        urban_cols = cols - 1

    urban_dx, rural_dx, dy = 190.0, 380.0, 230.0
    xs = []
    x = 0.0
    for c in range(cols):
        xs.append(x)
        x += urban_dx if c + 1 <= urban_cols else rural_dx
    node_pos = {}
    node_col = {}
    nid = 0
    grid_id = {}
    for r in range(rows):
        for c in range(cols):
            jx = rng.uniform(-20.0, 20.0)
            jy = rng.uniform(-20.0, 20.0)
            node_pos[nid] = (xs[c] + jx, r * dy + jy)
            node_col[nid] = c
            grid_id[(r, c)] = nid
            nid += 1

    def zone_urban(c):
        return c < urban_cols

    edges = []
    eid = 0

    def add_edge(a, b, urban_a, urban_b):
        nonlocal eid
        both_urban = urban_a and urban_b
        both_rural = not urban_a and not urban_b
        if both_urban:
            limit = int(rng.choice([30, 50], p=[0.35, 0.65]))
        elif both_rural:
            limit = int(rng.choice([80, 120], p=[0.7, 0.3]))
        else:
            limit = int(rng.choice([50, 80]))
        chord = float(np.hypot(node_pos[b][0] - node_pos[a][0],
                               node_pos[b][1] - node_pos[a][1]))
        curved = both_rural and chord >= 280.0 and rng.random() < 0.75
        poly = Polyline(_edge_polyline(node_pos[a], node_pos[b], curved, rng))
        length = poly.length
        lights, crossings, yields = [], [], []
        if limit <= 50:
            for density, bucket in ((1 / 150.0, lights), (1 / 120.0, crossings)):
                k = rng.poisson(density * length)
                for _ in range(k):
                    bucket.append(float(rng.uniform(10.0, length - 10.0)))
            if rng.random() < 0.3:
                yields.append(float(rng.uniform(10.0, length - 10.0)))
        elif rng.random() < 0.1:
            yields.append(float(rng.uniform(10.0, length - 10.0)))
        edges.append(RoadEdge(eid, a, b, poly, limit,
                              tuple(sorted(lights)), tuple(sorted(crossings)),
                              tuple(sorted(yields))))
        eid += 1

    for r in range(rows):
        for c in range(cols):
            a = grid_id[(r, c)]
            if c + 1 < cols:
                b = grid_id[(r, c + 1)]
                add_edge(a, b, zone_urban(c), zone_urban(c + 1))
            if r + 1 < rows:
                b = grid_id[(r + 1, c)]
                add_edge(a, b, zone_urban(c), zone_urban(c))

    # raise the degree-3+ count with dead-end stubs until the request is met
    def degree_counts():
        deg = {n: 0 for n in node_pos}
        for e in edges:
            deg[e.node_a] += 1
            deg[e.node_b] += 1
        return deg

    stub_angle = {}
    attempts = 0
    while sum(1 for v in degree_counts().values() if v >= 3) < num_intersections:
        attempts += 1
        if attempts > 10 * num_intersections + 50:
            raise RuntimeError("could not reach the requested intersection count")
        deg = degree_counts()
        candidates = [n for n in sorted(node_pos) if deg[n] == 2 and n in node_col]
        if not candidates:
            candidates = [n for n in sorted(node_pos) if n in node_col and deg[n] < 4]
        host = candidates[0]
        ang = stub_angle.get(host, rng.uniform(0.0, 2.0 * math.pi))
        stub_angle[host] = ang + 2.1
        length = rng.uniform(70.0, 130.0)
        tip = (node_pos[host][0] + length * math.cos(ang),
               node_pos[host][1] + length * math.sin(ang))
        node_pos[nid] = tip
        add_edge(host, nid, zone_urban(node_col[host]), zone_urban(node_col[host]))
        nid += 1

    return RoadNetwork(node_pos, edges)


def random_route(net: RoadNetwork, seed: int, target_length_m: float,
                 start_node: int | None = None) -> Route:
    """Seeded random walk over the network, avoiding U-turns and dead ends."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x40E7]))
    starts = [n for n in sorted(net.nodes) if net.degree(n) >= 2]
    node = start_node if start_node is not None else int(starts[rng.integers(len(starts))])
    steps = []
    total = 0.0
    prev_eid = None
    while total < target_length_m:
        options = []
        for eid in sorted(net.adjacency[node]):
            if eid == prev_eid:
                continue
            other = net.other_node(eid, node)
            if net.degree(other) == 1 and total + net.edges[eid].length_m < target_length_m:
                continue  # only enter a stub if it can end the route
            options.append(eid)
        if not options:
            options = [eid for eid in sorted(net.adjacency[node]) if eid != prev_eid] \
                or list(sorted(net.adjacency[node]))
        eid = int(options[rng.integers(len(options))])
        e = net.edges[eid]
        steps.append((eid, e.node_a == node))
        total += e.length_m
        node = net.other_node(eid, node)
        prev_eid = eid
    last = net.edges[steps[-1][0]]
    overshoot = total - target_length_m
    end_offset = None
    if overshoot > 20.0 and last.length_m - overshoot > 40.0:
        end_offset = last.length_m - overshoot
    return Route(tuple(steps), 0.0, end_offset)


# ---------------------------------------------------------------------------
# serialization

LOG_COLUMNS = ("t", "s", "v", "x", "y", "heading", "routeOffset")


def network_to_json(net: RoadNetwork, path, meta=None) -> None:
    obj = {
        "schema": "roadnetwork/v1",
        "nodes": [{"id": nid, "x": float(net.nodes[nid][0]),
                   "y": float(net.nodes[nid][1])} for nid in sorted(net.nodes)],
        "edges": [{
            "id": e.edge_id, "a": e.node_a, "b": e.node_b,
            "speed_limit": e.speed_limit,
            "polyline": [[float(px), float(py)] for px, py in e.polyline.points],
            "traffic_lights": list(e.traffic_lights),
            "crossings": list(e.crossings),
            "yield_signs": list(e.yield_signs),
            "length_m": e.length_m,
        } for e in (net.edges[i] for i in sorted(net.edges))],
    }
    textio.write_json(path, obj, meta)


def network_from_json(path) -> tuple[RoadNetwork, dict]:
    blob = textio.read_json(path)
    if blob.get("schema") != "roadnetwork/v1":
        raise ValueError(f"{path}: not a roadnetwork/v1 document")
    nodes = {rec["id"]: (rec["x"], rec["y"]) for rec in blob["nodes"]}
    edges = [RoadEdge(rec["id"], rec["a"], rec["b"], Polyline(rec["polyline"]),
                      rec["speed_limit"], tuple(rec["traffic_lights"]),
                      tuple(rec["crossings"]), tuple(rec["yield_signs"]))
             for rec in blob["edges"]]
    meta = {k: v for k, v in blob.items()
            if k not in ("schema", "nodes", "edges")}
    return RoadNetwork(nodes, edges), meta


def log_to_csv(log: DriveLog, path, meta=None) -> None:
    m = dict(meta or {})
    m["f"] = log.rate_hz
    rows = zip(log.t, log.steer, log.speed, log.x, log.y, log.heading,
               log.route_offset)
    textio.write_csv(path, LOG_COLUMNS, ([float(v) for v in row] for row in rows), m)


def log_from_csv(path) -> tuple[DriveLog, dict]:
    columns, rows, meta = textio.read_csv(path)
    if tuple(columns) != LOG_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {columns}")
    arr = np.array([[float(v) for v in row] for row in rows])
    return DriveLog(float(meta.get("f", 10.0)), arr[:, 0], arr[:, 1], arr[:, 2],
                    arr[:, 3], arr[:, 4], arr[:, 5], arr[:, 6]), meta


def trace_to_csv(trace: GpsTrace, path, meta=None) -> None:
    m = dict(meta or {})
    m["sigma"] = trace.sigma
    rows = ([float(t), float(x), float(y)] for t, x, y in zip(trace.t, trace.x, trace.y))
    textio.write_csv(path, ("t", "x", "y"), rows, m)


def trace_from_csv(path) -> tuple[GpsTrace, dict]:
    columns, rows, meta = textio.read_csv(path)
    if tuple(columns) != ("t", "x", "y"):
        raise ValueError(f"{path}: unexpected columns {columns}")
    arr = np.array([[float(v) for v in row] for row in rows])
    return GpsTrace(arr[:, 0], arr[:, 1], arr[:, 2],
                    float(meta.get("sigma", 0.0))), meta


def routes_to_json(routes: list[Route], path, meta=None) -> None:
    obj = {"schema": "routes/v1",
           "routes": [{
               "steps": [[eid, bool(fwd)] for eid, fwd in r.steps],
               "start_offset": r.start_offset,
               "end_offset": r.end_offset,
           } for r in routes]}
    textio.write_json(path, obj, meta)


def routes_from_json(path) -> tuple[list[Route], dict]:
    blob = textio.read_json(path)
    if blob.get("schema") != "routes/v1":
        raise ValueError(f"{path}: not a routes/v1 document")
    routes = [Route(tuple((int(e), bool(f)) for e, f in rec["steps"]),
                    rec["start_offset"], rec["end_offset"])
              for rec in blob["routes"]]
    meta = {k: v for k, v in blob.items() if k not in ("schema", "routes")}
    return routes, meta
