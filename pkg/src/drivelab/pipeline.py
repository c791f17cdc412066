"""End-to-end pipelines: world -> data -> matching -> features -> training ->
evaluation, plus the ablation study. Every stage draws its randomness from a
seed derived from the master seed, and every artifact carries the hash of the
scientific config fields so reruns are byte-identical and artifacts from
different runs cannot be mixed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .constants import (DRIVELET_LEN, EGO_VEC_LEN, HEADING_VEC_LEN,
                        HORIZON_STEPS, MAP_BLOCK_FEATURES, MAP_HISTORY_LEN,
                        MAP_HISTORY_SAMPLES, N_CLUSTERS, RATE_HZ)
from . import drivemodel as dm
from . import evalsuite as ev
from . import mapfeatures as mf
from . import mapmatch as mm
from . import roadworld as rw
from . import textio

STAGE_SEEDS = {"world": 1, "routes": 2, "driver": 3, "gps": 4, "train": 5,
               "clusters": 6, "split": 7}


@dataclass
class RunConfig:
    seed: int = 0
    intersections: int = 12
    urban: float = 0.55
    routes: int = 10
    route_len: float = 800.0
    sigma: float = 5.0
    rate: float = RATE_HZ
    drivelet: int = DRIVELET_LEN
    ego_frames: int = 3
    speed_weight: float = 1.0
    comfort_weight: float = 0.1
    human_weight: float = 1.0
    batch: int = 16
    epochs: int = 1
    lr: float = 1e-4
    clusters: int = N_CLUSTERS
    train_frac: float = 0.8
    use_map: bool = True

    def validate(self) -> None:
        if self.intersections < 2:
            raise ValueError("intersections: need at least 2")
        if not 0.0 <= self.urban <= 1.0:
            raise ValueError("urban: must be in [0, 1]")
        if self.routes < 2:
            raise ValueError("routes: need at least 2 for a train/test split")
        if not 0.0 < self.train_frac < 1.0:
            raise ValueError("train_frac: must be in (0, 1)")
        if self.drivelet != DRIVELET_LEN or self.ego_frames != 3:
            raise ValueError("drivelet length and ego_frames are structural "
                             f"constants ({DRIVELET_LEN}, 3)")
        if self.clusters < 1 or self.batch < 1 or self.epochs < 1:
            raise ValueError("clusters, batch and epochs must be positive")

    def science_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return textio.config_hash(self.science_dict())

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        fields = {}
        if path is not None:
            blob = textio.read_json(path)
            blob.pop("schema", None)
            blob.pop("config_hash", None)
            unknown = set(blob) - set(cls.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown config fields: {sorted(unknown)}")
            fields.update(blob)
        for key, value in (overrides or {}).items():
            if value is not None:
                fields[key] = value
        cfg = cls(**fields)
        cfg.validate()
        return cfg

    def save(self, path) -> None:
        textio.write_json(path, {"schema": "runconfig/v1", **self.science_dict()},
                          {"config_hash": self.hash()})


def stage_seed(cfg: RunConfig, stage: str, *extra) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, STAGE_SEEDS[stage], *extra])


def derived_seed(cfg: RunConfig, stage: str, *extra) -> int:
    return int(stage_seed(cfg, stage, *extra).generate_state(1)[0] % (2 ** 31))


# ---------------------------------------------------------------------------
# dataset assembly

WARMUP = MAP_HISTORY_SAMPLES - 1  # first step with a full feature history


@dataclass
class RouteDataset:
    """Everything evaluation needs for one route."""
    data: dm.SequenceData
    frames: list            # frame at each predicted timestamp (aligned to rows)
    log: rw.DriveLog


def monotone_route_arclengths(rp: rw.RoutePath, xy: np.ndarray) -> np.ndarray:
    """Project positions onto the route, forbidding backward jumps."""
    ds = np.empty(len(xy))
    prev = 0.0
    for i, p in enumerate(xy):
        d, _ = rp.polyline.project(p, lo=prev, hi=min(prev + 40.0, rp.length))
        prev = max(prev, d)
        ds[i] = prev
    return ds


def build_route_dataset(net: rw.RoadNetwork, route: rw.Route, log: rw.DriveLog,
                        matched: mm.MatchedPath | None) -> RouteDataset:
    """Assemble aligned windows, targets and frames for one route.

    Map features are extracted at the route location nearest the matched
    position (or the true position when no matching is supplied).
    """
    rp = rw.RoutePath(net, route)
    if matched is not None:
        ds = monotone_route_arclengths(rp, matched.xy)
    else:
        ds = log.route_offset
    frames = [mf.extract_frame_at(rp, d) for d in ds]
    n = len(log)
    lo = WARMUP
    hi = n - HORIZON_STEPS  # exclusive; window i targets step i + HORIZON_STEPS
    if hi - lo < DRIVELET_LEN:
        raise ValueError("route too short for a single drivelet")
    table = mf.frames_vector_table(frames)
    m14 = np.stack([table[i - WARMUP:i + 1].reshape(-1)
                    for i in range(lo, hi)]).reshape(-1, MAP_HISTORY_SAMPLES,
                                                     MAP_BLOCK_FEATURES)
    m56 = np.stack([mf.heading_vector(frames[i]) for i in range(lo, hi)])
    ego = np.stack([mf.ego_vector(log, i) for i in range(lo, hi)])
    target = np.column_stack([log.steer[lo + HORIZON_STEPS:hi + HORIZON_STEPS],
                              log.speed[lo + HORIZON_STEPS:hi + HORIZON_STEPS]])
    data = dm.SequenceData(m14, m56, ego, target)
    frame_rows = [frames[i + HORIZON_STEPS] for i in range(lo, hi)]
    return RouteDataset(data, frame_rows, log)


# dataset serialization: one window + its target drivelet per row

_WINDOW_COLUMNS = tuple([f"m14_{i}" for i in range(MAP_HISTORY_LEN)]
                        + [f"m56_{i}" for i in range(HEADING_VEC_LEN)]
                        + [f"ego_{i}" for i in range(EGO_VEC_LEN)]
                        + [f"tgt_s_{o}" for o in range(1, DRIVELET_LEN + 1)]
                        + [f"tgt_v_{o}" for o in range(1, DRIVELET_LEN + 1)])

_FRAME_COLUMNS = ("raw_d_intersection", "raw_d_light", "raw_d_crossing",
                  "raw_d_yield", "d_intersection", "d_light", "d_crossing",
                  "d_yield", "speed_limit", "free_flow_speed", "curvature",
                  "signed_curvature", "turn_number", "our_road_heading",
                  "other_roads_heading", "future_heading_1", "future_heading_5",
                  "future_heading_10", "future_heading_20", "future_heading_50",
                  "dist_to_node", "dist_from_prev")


def windows_to_csv(data: dm.SequenceData, path, meta=None) -> None:
    """One row per window; the target drivelet columns look ahead at stride 1
    and are nan-padded once the sequence runs out."""
    rows = []
    n = len(data)
    for i in range(n):
        tgt_s = [data.target[i + o, 0] if i + o < n else math.nan
                 for o in range(DRIVELET_LEN)]
        tgt_v = [data.target[i + o, 1] if i + o < n else math.nan
                 for o in range(DRIVELET_LEN)]
        rows.append([*data.m14[i].reshape(-1), *data.m56[i], *data.ego[i],
                     *tgt_s, *tgt_v])
    textio.write_csv(path, ("row",) + _WINDOW_COLUMNS,
                     ([i, *map(float, row)] for i, row in enumerate(rows)), meta)


def windows_from_csv(path) -> tuple[dm.SequenceData, dict]:
    columns, rows, meta = textio.read_csv(path)
    if tuple(columns) != ("row",) + _WINDOW_COLUMNS:
        raise ValueError(f"{path}: unexpected window columns")
    arr = np.array([[float(v) for v in row[1:]] for row in rows])
    n = len(arr)
    m14 = arr[:, :MAP_HISTORY_LEN].reshape(n, MAP_HISTORY_SAMPLES,
                                           MAP_BLOCK_FEATURES)
    o = MAP_HISTORY_LEN
    m56 = arr[:, o:o + HEADING_VEC_LEN]
    o += HEADING_VEC_LEN
    ego = arr[:, o:o + EGO_VEC_LEN]
    o += EGO_VEC_LEN
    target = np.column_stack([arr[:, o], arr[:, o + DRIVELET_LEN]])
    return dm.SequenceData(m14, m56, ego, target), meta


def frames_to_csv(frames, path, meta=None) -> None:
    rows = []
    for i, f in enumerate(frames):
        rows.append([i, f.raw_d_intersection, f.raw_d_light, f.raw_d_crossing,
                     f.raw_d_yield, f.d_intersection, f.d_light, f.d_crossing,
                     f.d_yield, f.speed_limit, f.free_flow_speed, f.curvature,
                     f.signed_curvature, float(f.turn_number),
                     f.our_road_heading, f.other_roads_heading,
                     *f.future_heading, f.dist_to_node, f.dist_from_prev])
    textio.write_csv(path, ("row",) + _FRAME_COLUMNS,
                     ([int(r[0]), *map(float, r[1:])] for r in rows), meta)


def frames_from_csv(path) -> tuple[list, dict]:
    columns, rows, meta = textio.read_csv(path)
    if tuple(columns) != ("row",) + _FRAME_COLUMNS:
        raise ValueError(f"{path}: unexpected frame columns")
    frames = []
    for row in rows:
        v = [float(x) for x in row[1:]]
        frames.append(mf.MapFeatureFrame(
            raw_d_intersection=v[0], raw_d_light=v[1], raw_d_crossing=v[2],
            raw_d_yield=v[3], d_intersection=v[4], d_light=v[5],
            d_crossing=v[6], d_yield=v[7], speed_limit=v[8],
            free_flow_speed=v[9], curvature=v[10], signed_curvature=v[11],
            turn_number=int(v[12]), our_road_heading=v[13],
            other_roads_heading=v[14], future_heading=tuple(v[15:20]),
            dist_to_node=v[20], dist_from_prev=v[21]))
    return frames, meta


# ---------------------------------------------------------------------------
# pipeline stages


@dataclass
class PipelineState:
    cfg: RunConfig
    out: Path
    net: rw.RoadNetwork = None
    routes: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    matched: list = field(default_factory=list)
    datasets: list = field(default_factory=list)
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    @property
    def meta(self) -> dict:
        return {"config_hash": self.cfg.hash()}


def stage_world(state: PipelineState) -> None:
    cfg = state.cfg
    state.net = rw.generate_network(derived_seed(cfg, "world"),
                                    cfg.intersections, cfg.urban)
    rw.network_to_json(state.net, state.out / "world.json", state.meta)


def stage_data(state: PipelineState) -> None:
    cfg = state.cfg
    for i in range(cfg.routes):
        route = rw.random_route(state.net, derived_seed(cfg, "routes", i),
                                cfg.route_len)
        log = rw.simulate_reference_driver(state.net, route, cfg.rate,
                                           derived_seed(cfg, "driver", i))
        trace = rw.corrupt_gps(log, cfg.sigma, derived_seed(cfg, "gps", i))
        state.routes.append(route)
        state.logs.append(log)
        state.traces.append(trace)
        rw.log_to_csv(log, state.out / "logs" / f"route_{i:02d}.csv", state.meta)
        rw.trace_to_csv(trace, state.out / "traces" / f"route_{i:02d}.csv",
                        state.meta)
    rw.routes_to_json(state.routes, state.out / "routes.json", state.meta)


def stage_match(state: PipelineState) -> None:
    cfg = state.cfg
    params = mm.HmmParams(emission_sigma=max(cfg.sigma, 0.5))
    for i, trace in enumerate(state.traces):
        matched = mm.viterbi_match(state.net, trace, params)
        state.matched.append(matched)
        mm.matched_to_csv(matched, state.out / "matched" / f"route_{i:02d}.csv",
                          state.meta)


def stage_features(state: PipelineState) -> None:
    for i, route in enumerate(state.routes):
        ds = build_route_dataset(state.net, route, state.logs[i],
                                 state.matched[i] if state.matched else None)
        state.datasets.append(ds)
        windows_to_csv(ds.data, state.out / "dataset" / f"route_{i:02d}_windows.csv",
                       state.meta)
        frames_to_csv(ds.frames, state.out / "dataset" / f"route_{i:02d}_frames.csv",
                      state.meta)


def stage_split(state: PipelineState) -> None:
    cfg = state.cfg
    rng = np.random.default_rng(stage_seed(cfg, "split"))
    order = rng.permutation(cfg.routes)
    n_test = max(1, int(round((1.0 - cfg.train_frac) * cfg.routes)))
    state.test_ids = sorted(int(i) for i in order[:n_test])
    state.train_ids = sorted(int(i) for i in order[n_test:])
    textio.write_json(state.out / "split.json",
                      {"schema": "split/v1", "train": state.train_ids,
                       "test": state.test_ids}, state.meta)


def stage_train(state: PipelineState, *, comfort_weight=None, human_weight=None,
                use_map=None, train_seed_extra: int = 0, tag: str = "model"):
    cfg = state.cfg
    weights = dm.LossWeights(
        speed_weight=cfg.speed_weight,
        comfort_weight=cfg.comfort_weight if comfort_weight is None else comfort_weight,
        human_weight=cfg.human_weight if human_weight is None else human_weight,
        rate_hz=cfg.rate)
    result = dm.train([state.datasets[i].data for i in state.train_ids],
                      weights=weights, epochs=cfg.epochs, batch_size=cfg.batch,
                      seed=derived_seed(cfg, "train", train_seed_extra),
                      use_map=cfg.use_map if use_map is None else use_map,
                      lr=cfg.lr)
    dm.save_models(state.out / "checkpoints" / f"{tag}.json",
                   result.generator, result.discriminator,
                   {"config_hash": cfg.hash(), "tag": tag})
    rows = [[b, la, lc, lh, da] for b, la, lc, lh, da in result.log_rows]
    textio.write_csv(state.out / f"train_log_{tag}.csv",
                     ("batch", "loss_accuracy", "loss_comfort", "loss_human",
                      "disc_accuracy"), rows, state.meta)
    return result


def fit_eval_clusters(state: PipelineState) -> ev.ClusterModel:
    human = np.concatenate([
        ev.maneuver_windows(state.datasets[i].data.target)
        for i in state.test_ids])
    return ev.fit_clusters(human, k=state.cfg.clusters,
                           seed=derived_seed(state.cfg, "clusters"))


def evaluate_model(state: PipelineState, gen: dm.Generator,
                   cluster_model: ev.ClusterModel) -> ev.MetricsReport:
    per_route = []
    for i in state.test_ids:
        ds = state.datasets[i]
        preds = dm.predict_series(gen, ds.data)
        per_route.append((preds, ds.data.target, ds.frames))
    return ev.evaluate_predictions(per_route, cluster_model, state.cfg.rate)


def run_pipeline(cfg: RunConfig, out_dir, svg: bool = False) -> ev.MetricsReport:
    """gen-world -> gen-data -> match -> features -> train -> eval -> diagnose."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    state = PipelineState(cfg, out)
    stages = [("gen-world", stage_world), ("gen-data", stage_data),
              ("match", stage_match), ("features", stage_features),
              ("split", stage_split)]
    for name, fn in stages:
        try:
            fn(state)
        except Exception as exc:
            raise RuntimeError(f"stage {name} failed: {exc}") from exc
    try:
        result = stage_train(state)
    except Exception as exc:
        raise RuntimeError(f"stage train failed: {exc}") from exc
    try:
        cluster_model = fit_eval_clusters(state)
        report = evaluate_model(state, result.generator, cluster_model)
        ev.report_to_files(report, out / "report.json", tables_dir=out,
                           meta=state.meta,
                           svg_path=(out / "diagnosis.svg") if svg else None)
    except Exception as exc:
        raise RuntimeError(f"stage eval failed: {exc}") from exc
    return report


ABLATION_TOGGLES = ("map", "comfort", "adversarial")


def run_ablation(cfg: RunConfig, out_dir, variants) -> list[dict]:
    """Train one model per requested toggle set on one shared dataset.

    Each variant is a set of enabled toggles out of {map, comfort,
    adversarial}; everything runs on the same seed, dataset and test split,
    and is scored with the same cluster model.
    """
    cfg.validate()
    for variant in variants:
        unknown = set(variant) - set(ABLATION_TOGGLES)
        if unknown:
            raise ValueError(f"unknown ablation toggles: {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    state = PipelineState(cfg, out)
    for name, fn in (("gen-world", stage_world), ("gen-data", stage_data),
                     ("match", stage_match), ("features", stage_features),
                     ("split", stage_split)):
        try:
            fn(state)
        except Exception as exc:
            raise RuntimeError(f"stage {name} failed: {exc}") from exc
    cluster_model = fit_eval_clusters(state)
    rows = []
    for variant in variants:
        tag = "base" if not variant else "_".join(sorted(variant))
        result = stage_train(
            state,
            comfort_weight=cfg.comfort_weight if "comfort" in variant else 0.0,
            human_weight=cfg.human_weight if "adversarial" in variant else 0.0,
            use_map="map" in variant, tag=tag)
        report = evaluate_model(state, result.generator, cluster_model)
        row = {"variant": tag, "a_s": report.a_s, "a_v": report.a_v,
               "c_lat": report.c_lat, "c_lon": report.c_lon, "h": report.h}
        for scen, rec in report.scenarios.items():
            row[f"{scen}.a_s"] = rec["a_s"]
            row[f"{scen}.a_v"] = rec["a_v"]
            row[f"{scen}.h"] = rec["h"]
        rows.append(row)
    columns = list(rows[0].keys())
    textio.write_csv(out / "ablation.csv", columns,
                     ([row[c] for c in columns] for row in rows), state.meta)
    return rows
