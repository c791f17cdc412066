"""Evaluation machinery: accuracy and comfort metrics, the k-means
human-likeness score, scenario subset filters, and per-attribute error
diagnosis. Everything is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import (BEND_CURVATURE, DRIVELET_LEN, INSIDE_NODE_M,
                        INTERSECTION_NEAR_M, N_CLUSTERS, NEAR_M,
                        SCENARIO_NAMES, SPEED_ERR_KMH, SPEED_LIMITS,
                        STEER_ERR_DEG)
from . import textio


def accuracy_metrics(preds, truths):
    """Mean absolute steering and speed errors (A_s deg, A_v km/h)."""
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape:
        raise ValueError("prediction / truth shape mismatch")
    if len(preds) == 0:
        raise ValueError("empty input")
    err = np.abs(preds - truths)
    return float(err[:, 0].mean()), float(err[:, 1].mean())


def comfort_metrics(preds, rate_hz: float):
    """Mean second-difference magnitudes (C_lat deg/s^2, C_lon km/h/s^2)."""
    preds = np.asarray(preds, dtype=float)
    if len(preds) < 3:
        raise ValueError("comfort metrics need at least 3 samples")
    scale = rate_hz * rate_hz
    dd = np.abs(preds[:-2] - 2.0 * preds[1:-1] + preds[2:]) * scale
    return float(dd[:, 0].mean()), float(dd[:, 1].mean())


def comfort_sums(preds, rate_hz: float):
    """(sum |dd_s|, sum |dd_v|, count) so per-route results can be pooled."""
    preds = np.asarray(preds, dtype=float)
    if len(preds) < 3:
        return 0.0, 0.0, 0
    scale = rate_hz * rate_hz
    dd = np.abs(preds[:-2] - 2.0 * preds[1:-1] + preds[2:]) * scale
    return float(dd[:, 0].sum()), float(dd[:, 1].sum()), len(dd)


def maneuver_windows(series: np.ndarray) -> np.ndarray:
    """Sliding 0.5 s windows of a (N, 2) series as 10-vectors (s-block, v-block)."""
    series = np.asarray(series, dtype=float)
    n = len(series) - DRIVELET_LEN + 1
    if n <= 0:
        return np.zeros((0, 2 * DRIVELET_LEN))
    idx = np.arange(DRIVELET_LEN)[None, :] + np.arange(n)[:, None]
    return np.concatenate([series[idx, 0], series[idx, 1]], axis=1)


@dataclass
class ClusterModel:
    centroids: np.ndarray   # (k, 10) in normalized space
    mean: np.ndarray
    std: np.ndarray
    seed: int

    @property
    def k(self):
        return len(self.centroids)


def _normalize(model: ClusterModel, windows: np.ndarray) -> np.ndarray:
    return (np.asarray(windows, dtype=float) - model.mean) / model.std


def fit_clusters(human_windows, k: int = N_CLUSTERS, seed: int = 0,
                 max_iter: int = 300, tol: float = 1e-8) -> ClusterModel:
    """Deterministic k-means (k-means++ init, Lloyd to convergence) on
    z-normalized maneuver windows; empty clusters re-seed to the farthest point."""
    windows = np.asarray(human_windows, dtype=float)
    if len(windows) < k:
        raise ValueError(f"need at least {k} windows, got {len(windows)}")
    mean = windows.mean(axis=0)
    std = np.maximum(windows.std(axis=0), 1e-9)
    X = (windows - mean) / std
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC105]))

    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(len(X))]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(len(X), 1.0 / len(X))
        centroids[j] = X[rng.choice(len(X), p=probs)]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))

    for _ in range(max_iter):
        dist = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = X[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                worst = int(dist[np.arange(len(X)), labels].argmax())
                new_centroids[j] = X[worst]
                labels[worst] = j
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    return ClusterModel(centroids, mean, std, seed)


def assign_clusters(model: ClusterModel, windows) -> np.ndarray:
    """Nearest-centroid labels; ties resolve to the lowest centroid index."""
    X = _normalize(model, windows)
    dist = ((X[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    return dist.argmin(axis=1)


def human_likeness(model: ClusterModel, model_windows, human_windows) -> float:
    """Percent of aligned windows assigned to the same cluster as the human's."""
    model_windows = np.asarray(model_windows, dtype=float)
    human_windows = np.asarray(human_windows, dtype=float)
    if model_windows.shape != human_windows.shape:
        raise ValueError("model / human windows are misaligned")
    if len(model_windows) == 0:
        raise ValueError("empty input")
    same = assign_clusters(model, model_windows) == assign_clusters(model, human_windows)
    return 100.0 * float(same.mean())


# ---------------------------------------------------------------------------
# scenario subsets

_SCENARIO_ALIASES = {"a": SCENARIO_NAMES[0], "b": SCENARIO_NAMES[1],
                     "c": SCENARIO_NAMES[2]}


def scenario_filter(frames, which: str) -> np.ndarray:
    """Boolean mask of frames belonging to a named evaluation scenario.

    lights_or_crossings: within 40 m of a light or crossing at limit <= 50.
    winding_80: curvature above 0.01 at limit 80, no intersection within 100 m.
    near_intersection: within 20 m of the next intersection.
    """
    name = _SCENARIO_ALIASES.get(which.lower(), which)
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario {which!r}")
    out = np.zeros(len(frames), dtype=bool)
    for i, f in enumerate(frames):
        if name == "lights_or_crossings":
            out[i] = (f.raw_d_light < NEAR_M or f.raw_d_crossing < NEAR_M) \
                and f.speed_limit <= 50.0
        elif name == "winding_80":
            out[i] = f.curvature > 0.01 and f.speed_limit == 80.0 \
                and f.raw_d_intersection > 100.0
        else:
            out[i] = f.raw_d_intersection < INTERSECTION_NEAR_M
    return out


# ---------------------------------------------------------------------------
# error diagnosis

DIAGNOSIS_ATTRIBUTES = {
    "speed_limit": [str(v) for v in SPEED_LIMITS],
    "traffic_light": ["near", "far"],
    "crossing": ["near", "far"],
    "road_type": ["left_bend", "straight", "right_bend"],
    "intersection": ["approach", "inside", "depart", "none"],
}


def _attribute_bin(frame, attribute: str) -> str:
    if attribute == "speed_limit":
        return str(int(frame.speed_limit))
    if attribute == "traffic_light":
        return "near" if frame.raw_d_light < NEAR_M else "far"
    if attribute == "crossing":
        return "near" if frame.raw_d_crossing < NEAR_M else "far"
    if attribute == "road_type":
        if frame.signed_curvature > BEND_CURVATURE:
            return "left_bend"
        if frame.signed_curvature < -BEND_CURVATURE:
            return "right_bend"
        return "straight"
    if frame.dist_to_node < INSIDE_NODE_M:
        return "inside"
    if frame.raw_d_intersection < INTERSECTION_NEAR_M:
        return "approach"
    if frame.dist_from_prev < INTERSECTION_NEAR_M:
        return "depart"
    return "none"


def error_diagnosis(preds, truths, frames) -> dict:
    """Relative error rates per road-attribute bin, one panel per channel.

    A steering prediction is an error when off by more than 10 deg, a speed
    prediction when off by more than 5 km/h. Per attribute, the per-bin error
    frequencies are normalized to sum to 100; an attribute with no errors at
    all is flagged no_errors instead.
    """
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if not (len(preds) == len(truths) == len(frames)):
        raise ValueError("misaligned inputs")
    steer_err = np.abs(preds[:, 0] - truths[:, 0]) > STEER_ERR_DEG
    speed_err = np.abs(preds[:, 1] - truths[:, 1]) > SPEED_ERR_KMH
    panels = {}
    for panel, err in (("steering", steer_err), ("speed", speed_err)):
        report = {}
        for attribute, bins in DIAGNOSIS_ATTRIBUTES.items():
            samples = {b: 0 for b in bins}
            errors = {b: 0 for b in bins}
            for i, frame in enumerate(frames):
                b = _attribute_bin(frame, attribute)
                samples[b] += 1
                if err[i]:
                    errors[b] += 1
            rates = {b: (errors[b] / samples[b] if samples[b] else 0.0)
                     for b in bins}
            total = sum(rates.values())
            no_errors = sum(errors.values()) == 0
            rel = {b: (100.0 * rates[b] / total if not no_errors else 0.0)
                   for b in bins}
            report[attribute] = {
                "bins": list(bins),
                "samples": [samples[b] for b in bins],
                "errors": [errors[b] for b in bins],
                "relative_error_rate": [rel[b] for b in bins],
                "no_errors": no_errors,
            }
        panels[panel] = report
    return panels


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class MetricsReport:
    a_s: float
    a_v: float
    c_lat: float
    c_lon: float
    h: float
    n_samples: int
    scenarios: dict = field(default_factory=dict)
    diagnosis: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": "metrics/v1",
            "overall": {"a_s": self.a_s, "a_v": self.a_v, "c_lat": self.c_lat,
                        "c_lon": self.c_lon, "h": self.h,
                        "n_samples": self.n_samples},
            "scenarios": self.scenarios,
            "diagnosis": self.diagnosis,
        }


def evaluate_predictions(per_route, cluster_model: ClusterModel,
                         rate_hz: float) -> MetricsReport:
    """Aggregate metrics over routes.

    per_route: list of (preds (N,2), truths (N,2), frames list of length N).
    Comfort and maneuver windows never span route boundaries.
    """
    if not per_route:
        raise ValueError("no evaluation routes")
    all_preds = np.concatenate([p for p, _, _ in per_route])
    all_truths = np.concatenate([t for _, t, _ in per_route])
    all_frames = [f for _, _, frames in per_route for f in frames]
    a_s, a_v = accuracy_metrics(all_preds, all_truths)

    s_sum = v_sum = 0.0
    n_dd = 0
    same = total_w = 0
    scen_same = {name: 0 for name in SCENARIO_NAMES}
    scen_total = {name: 0 for name in SCENARIO_NAMES}
    for preds, truths, frames in per_route:
        ss, vs, nd = comfort_sums(preds, rate_hz)
        s_sum += ss
        v_sum += vs
        n_dd += nd
        mw = maneuver_windows(preds)
        hw = maneuver_windows(truths)
        if len(mw):
            eq = assign_clusters(cluster_model, mw) == assign_clusters(cluster_model, hw)
            same += int(eq.sum())
            total_w += len(eq)
            for name in SCENARIO_NAMES:
                mask = scenario_filter(frames, name)[:len(eq)]
                scen_same[name] += int(eq[mask].sum())
                scen_total[name] += int(mask.sum())
    c_lat = s_sum / n_dd if n_dd else math.nan
    c_lon = v_sum / n_dd if n_dd else math.nan
    h = 100.0 * same / total_w if total_w else math.nan

    scenarios = {}
    masks = {name: scenario_filter(all_frames, name) for name in SCENARIO_NAMES}
    for name in SCENARIO_NAMES:
        mask = masks[name]
        if mask.any():
            sa_s, sa_v = accuracy_metrics(all_preds[mask], all_truths[mask])
        else:
            sa_s = sa_v = math.nan
        sh = 100.0 * scen_same[name] / scen_total[name] if scen_total[name] \
            else math.nan
        scenarios[name] = {"a_s": sa_s, "a_v": sa_v, "h": sh,
                           "n_samples": int(mask.sum()),
                           "n_windows": scen_total[name]}
    diagnosis = error_diagnosis(all_preds, all_truths, all_frames)
    return MetricsReport(a_s, a_v, c_lat, c_lon, h, len(all_preds),
                         scenarios, diagnosis)


def report_to_files(report: MetricsReport, json_path, tables_dir=None,
                    meta=None, svg_path=None) -> None:
    textio.write_json(json_path, report.to_dict(), meta)
    if tables_dir is not None:
        rows = [["overall", report.a_s, report.a_v, report.c_lat,
                 report.c_lon, report.h, report.n_samples]]
        for name, rec in report.scenarios.items():
            rows.append([name, rec["a_s"], rec["a_v"], "", "", rec["h"],
                         rec["n_samples"]])
        textio.write_csv(f"{tables_dir}/metrics.csv",
                         ("subset", "a_s", "a_v", "c_lat", "c_lon", "h", "n"),
                         rows, meta)
        for panel, attrs in report.diagnosis.items():
            rows = []
            for attribute, rec in attrs.items():
                for b, rate, n, e in zip(rec["bins"], rec["relative_error_rate"],
                                         rec["samples"], rec["errors"]):
                    rows.append([attribute, b, rate, n, e,
                                 int(rec["no_errors"])])
            textio.write_csv(f"{tables_dir}/diagnosis_{panel}.csv",
                             ("attribute", "bin", "relative_error_rate",
                              "samples", "errors", "no_errors"), rows, meta)
    if svg_path is not None:
        write_diagnosis_svg(report.diagnosis, svg_path)


def write_diagnosis_svg(diagnosis: dict, path) -> None:
    """Two bar-chart panels of relative error rates, as a standalone SVG."""
    width, height, margin = 900, 260, 40
    panel_w = (width - 3 * margin) / 2
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">']
    for pi, (panel, attrs) in enumerate(sorted(diagnosis.items())):
        x0 = margin + pi * (panel_w + margin)
        parts.append(f'<text x="{x0:.1f}" y="18" font-size="13" '
                     f'font-family="sans-serif">error rate by attribute '
                     f'({panel})</text>')
        bars = []
        for attribute, rec in attrs.items():
            for b, rate in zip(rec["bins"], rec["relative_error_rate"]):
                bars.append((f"{attribute}:{b}", rate))
        bw = panel_w / max(len(bars), 1)
        for i, (label, rate) in enumerate(bars):
            bh = (height - 2 * margin) * rate / 100.0
            x = x0 + i * bw
            y = height - margin - bh
            parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bw * 0.8:.1f}" '
                         f'height="{bh:.1f}" fill="#4878a8"/>')
            parts.append(f'<text x="{x + bw * 0.4:.1f}" y="{height - margin + 10:.1f}" '
                         f'font-size="4" font-family="sans-serif" '
                         f'text-anchor="end" transform="rotate(-60 {x + bw * 0.4:.1f} '
                         f'{height - margin + 10:.1f})">{label}</text>')
    parts.append("</svg>")
    from pathlib import Path
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(parts) + "\n")
