"""Hidden-Markov map matching of noisy GPS traces onto the road network.

Emission: Gaussian on the perpendicular point-to-edge distance. Transition:
exponential penalty on |along-network distance - straight-line distance|
between consecutive fixes. The most likely candidate sequence is found with
the Viterbi recursion; score ties resolve to the lexicographically smallest
edge-id sequence so results are exactly reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roadworld import GpsTrace, RoadNetwork
from . import textio

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HmmParams:
    emission_sigma: float = 5.0     # m
    transition_beta: float = 2.0    # m
    candidate_radius: float = 30.0  # m
    candidates_per_sample: int = 8

    def __post_init__(self):
        if min(self.emission_sigma, self.transition_beta,
               self.candidate_radius, self.candidates_per_sample) <= 0:
            raise ValueError("all matcher parameters must be positive")


@dataclass
class MatchedPath:
    t: np.ndarray
    edge_ids: np.ndarray
    offsets: np.ndarray
    xy: np.ndarray
    total_log_prob: float

    def __len__(self):
        return len(self.edge_ids)


def project_to_edge(net: RoadNetwork, edge_id: int, p) -> tuple[float, float]:
    """(offset along edge, distance) of the nearest point of one edge."""
    return net.edges[edge_id].polyline.project(p)


def candidate_projections(net: RoadNetwork, p, radius: float, max_k: int):
    """All per-edge projections within radius, nearest first, at most max_k.

    Distances equal to within 1e-9 order by edge id. Returns a list of
    (edge_id, offset, distance); empty when no edge is in range.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    found = []
    for eid in sorted(net.edges):
        off, dist = project_to_edge(net, eid, p)
        if dist <= radius:
            found.append((eid, off, dist))
    found.sort(key=lambda c: (round(c[2] * 1e9), c[0]))
    return found[:max_k]


def route_distance(net: RoadNetwork, a, b) -> float:
    """Shortest along-network distance between two (edge_id, offset) locations."""
    ea, oa = a
    eb, ob = b
    edge_a, edge_b = net.edges[ea], net.edges[eb]
    for eid, off, edge in ((ea, oa, edge_a), (eb, ob, edge_b)):
        if not -1e-9 <= off <= edge.length_m + 1e-9:
            raise ValueError(f"offset {off} outside edge {eid}")
    best = abs(oa - ob) if ea == eb else math.inf
    ends_a = ((edge_a.node_a, oa), (edge_a.node_b, edge_a.length_m - oa))
    ends_b = ((edge_b.node_a, ob), (edge_b.node_b, edge_b.length_m - ob))
    for na, da in ends_a:
        dist_from_na = net.node_distances(na)
        for nb, db in ends_b:
            mid = dist_from_na.get(nb, math.inf)
            best = min(best, da + mid + db)
    return best


def _transition_log_prob(net, prev_cand, cand, straight: float, beta: float) -> float:
    along = route_distance(net, (prev_cand[0], prev_cand[1]), (cand[0], cand[1]))
    if math.isinf(along):
        return -math.inf
    return -math.log(beta) - abs(along - straight) / beta


def _emission_log_prob(dist: float, sigma: float) -> float:
    return -0.5 * _LOG_2PI - math.log(sigma) - 0.5 * (dist / sigma) ** 2


def viterbi_match(net: RoadNetwork, trace: GpsTrace, params: HmmParams) -> MatchedPath:
    """Most likely road path for a GPS trace under the HMM."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    points = np.column_stack([trace.x, trace.y])
    cand_sets = []
    for i, p in enumerate(points):
        cands = candidate_projections(net, p, params.candidate_radius,
                                      params.candidates_per_sample)
        if not cands:
            raise ValueError(f"no candidate road within {params.candidate_radius} m "
                             f"of the sample at t={trace.t[i]}")
        cand_sets.append(cands)

    # states carry (score, edge-id path, candidate-index path); score ties
    # resolve through the lexicographically smaller edge-id path
    states = [(_emission_log_prob(c[2], params.emission_sigma), (c[0],), (k,))
              for k, c in enumerate(cand_sets[0])]
    for i in range(1, len(points)):
        straight = float(np.hypot(*(points[i] - points[i - 1])))
        new_states = []
        for k, cand in enumerate(cand_sets[i]):
            emis = _emission_log_prob(cand[2], params.emission_sigma)
            best_score, best_prev = -math.inf, None
            for prev in states:
                trans = _transition_log_prob(net, cand_sets[i - 1][prev[2][-1]],
                                             cand, straight, params.transition_beta)
                score = prev[0] + trans + emis
                if score > best_score or (score == best_score
                                          and prev[1] < best_prev[1]):
                    best_score, best_prev = score, prev
            new_states.append((best_score, best_prev[1] + (cand[0],),
                               best_prev[2] + (k,)))
        states = new_states

    final = min(states, key=lambda s: (-s[0], s[1]))
    total, _, idx_path = final
    edge_ids = np.array([cand_sets[i][k][0] for i, k in enumerate(idx_path)])
    offsets = np.array([cand_sets[i][k][1] for i, k in enumerate(idx_path)])
    xy = np.array([net.edges[e].polyline.point_at(o)
                   for e, o in zip(edge_ids, offsets)])
    return MatchedPath(trace.t.copy(), edge_ids, offsets, xy, float(total))


MATCH_COLUMNS = ("t", "edgeId", "offset", "x", "y")


def matched_to_csv(m: MatchedPath, path, meta=None) -> None:
    mm = dict(meta or {})
    mm["total_log_prob"] = m.total_log_prob
    rows = ([float(t), int(e), float(o), float(x), float(y)]
            for t, e, o, (x, y) in zip(m.t, m.edge_ids, m.offsets, m.xy))
    textio.write_csv(path, MATCH_COLUMNS, rows, mm)


def matched_from_csv(path) -> tuple[MatchedPath, dict]:
    columns, rows, meta = textio.read_csv(path)
    if tuple(columns) != MATCH_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {columns}")
    arr = np.array([[float(v) for v in row] for row in rows])
    return MatchedPath(arr[:, 0], arr[:, 1].astype(int), arr[:, 2],
                       arr[:, 3:5], float(meta.get("total_log_prob", 0.0))), meta
