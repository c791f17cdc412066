"""Command-line entry point wiring the modules into reproducible pipelines.

Exit codes: 0 success, 1 runtime failure, 2 config or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import drivemodel as dm
from . import evalsuite as ev
from . import mapmatch as mm
from . import pidbaseline as pid
from . import roadworld as rw
from . import textio
from .pipeline import (RunConfig, build_route_dataset, frames_from_csv,
                       frames_to_csv, run_ablation, run_pipeline,
                       windows_from_csv, windows_to_csv, derived_seed)


class CliError(Exception):
    """Configuration or validation failure (exit code 2)."""


CONFIG_FLAGS = ("seed", "intersections", "urban", "routes", "route_len",
                "sigma", "rate", "speed_weight", "comfort_weight",
                "human_weight", "batch", "epochs", "lr", "clusters",
                "train_frac", "use_map")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON; flags override its fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--intersections", type=int)
    p.add_argument("--urban", type=float)
    p.add_argument("--routes", type=int)
    p.add_argument("--route-len", dest="route_len", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--speed-weight", dest="speed_weight", type=float)
    p.add_argument("--comfort-weight", dest="comfort_weight", type=float)
    p.add_argument("--human-weight", dest="human_weight", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clusters", type=int)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--use-map", dest="use_map", type=int, choices=(0, 1))


def _config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    if overrides.get("use_map") is not None:
        overrides["use_map"] = bool(overrides["use_map"])
    try:
        return RunConfig.load(args.config, overrides)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"config: {exc}") from exc


def _require_path(value, field: str) -> Path:
    if value is None:
        raise CliError(f"{field}: required path is missing")
    p = Path(value)
    if not p.exists():
        raise CliError(f"{field}: path {p} does not exist")
    return p


def cmd_gen_world(args) -> int:
    cfg = _config_from_args(args)
    net = rw.generate_network(derived_seed(cfg, "world"), cfg.intersections,
                              cfg.urban)
    rw.network_to_json(net, args.out, {"config_hash": cfg.hash()})
    print(f"world with {len(net.nodes)} nodes / {len(net.edges)} edges "
          f"-> {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    net, meta = rw.network_from_json(_require_path(args.world, "world"))
    textio.require_same_hash({"world": meta.get("config_hash"),
                              "config": cfg.hash()})
    out = Path(args.out)
    routes = []
    for i in range(cfg.routes):
        route = rw.random_route(net, derived_seed(cfg, "routes", i), cfg.route_len)
        log = rw.simulate_reference_driver(net, route, cfg.rate,
                                           derived_seed(cfg, "driver", i))
        trace = rw.corrupt_gps(log, cfg.sigma, derived_seed(cfg, "gps", i))
        routes.append(route)
        rw.log_to_csv(log, out / "logs" / f"route_{i:02d}.csv",
                      {"config_hash": cfg.hash()})
        rw.trace_to_csv(trace, out / "traces" / f"route_{i:02d}.csv",
                        {"config_hash": cfg.hash()})
    rw.routes_to_json(routes, out / "routes.json", {"config_hash": cfg.hash()})
    print(f"{cfg.routes} routes with logs and traces -> {out}")
    return 0


def cmd_match(args) -> int:
    net, wmeta = rw.network_from_json(_require_path(args.world, "world"))
    trace, tmeta = rw.trace_from_csv(_require_path(args.trace, "trace"))
    textio.require_same_hash({"world": wmeta.get("config_hash"),
                              "trace": tmeta.get("config_hash")})
    params = mm.HmmParams(
        emission_sigma=args.sigma if args.sigma is not None
        else max(trace.sigma, 0.5),
        transition_beta=args.beta, candidate_radius=args.radius,
        candidates_per_sample=args.max_candidates)
    matched = mm.viterbi_match(net, trace, params)
    mm.matched_to_csv(matched, args.out,
                      {"config_hash": wmeta.get("config_hash", "")})
    print(f"matched {len(matched)} samples, log prob {matched.total_log_prob:.3f} "
          f"-> {args.out}")
    return 0


def cmd_features(args) -> int:
    net, wmeta = rw.network_from_json(_require_path(args.world, "world"))
    routes, rmeta = rw.routes_from_json(_require_path(args.routes_file, "routes"))
    log, lmeta = rw.log_from_csv(_require_path(args.log, "log"))
    hashes = {"world": wmeta.get("config_hash"),
              "routes": rmeta.get("config_hash"),
              "log": lmeta.get("config_hash")}
    matched = None
    if args.matched:
        matched, mmeta = mm.matched_from_csv(_require_path(args.matched, "matched"))
        hashes["matched"] = mmeta.get("config_hash")
    textio.require_same_hash(hashes)
    if not 0 <= args.route_index < len(routes):
        raise CliError(f"route-index: {args.route_index} outside 0..{len(routes)-1}")
    ds = build_route_dataset(net, routes[args.route_index], log, matched)
    out = Path(args.out)
    meta = {"config_hash": wmeta.get("config_hash", "")}
    windows_to_csv(ds.data, out / f"route_{args.route_index:02d}_windows.csv", meta)
    frames_to_csv(ds.frames, out / f"route_{args.route_index:02d}_frames.csv", meta)
    print(f"{len(ds.data)} windows -> {out}")
    return 0


def _load_dataset_dir(data_dir: Path, ids=None):
    windows = sorted(data_dir.glob("route_*_windows.csv"))
    if not windows:
        raise CliError(f"data: no route_*_windows.csv files in {data_dir}")
    out = []
    hashes = {}
    for wpath in windows:
        idx = int(wpath.stem.split("_")[1])
        if ids is not None and idx not in ids:
            continue
        seq, wm = windows_from_csv(wpath)
        fpath = data_dir / f"route_{idx:02d}_frames.csv"
        frames, fm = frames_from_csv(fpath) if fpath.exists() else ([], {})
        hashes[str(wpath)] = wm.get("config_hash")
        out.append((idx, seq, frames))
    textio.require_same_hash(hashes)
    return out


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    data_dir = _require_path(args.data, "data")
    split_path = data_dir / "split.json"
    train_ids = None
    if split_path.exists():
        train_ids = set(textio.read_json(split_path)["train"])
    entries = _load_dataset_dir(data_dir, train_ids)
    weights = dm.LossWeights(cfg.speed_weight, cfg.comfort_weight,
                             cfg.human_weight, cfg.rate)
    result = dm.train([seq for _, seq, _ in entries], weights=weights,
                      epochs=cfg.epochs, batch_size=cfg.batch,
                      seed=derived_seed(cfg, "train"), use_map=cfg.use_map,
                      lr=cfg.lr)
    dm.save_models(args.out, result.generator, result.discriminator,
                   {"config_hash": cfg.hash()})
    log_path = Path(args.out).with_suffix(".train_log.csv")
    textio.write_csv(log_path,
                     ("batch", "loss_accuracy", "loss_comfort", "loss_human",
                      "disc_accuracy"),
                     result.log_rows, {"config_hash": cfg.hash()})
    print(f"trained on {sum(len(s) for _, s, _ in entries)} windows "
          f"-> {args.out}")
    return 0


def _eval_report(args):
    cfg = _config_from_args(args)
    data_dir = _require_path(args.data, "data")
    test_ids = None
    split_path = data_dir / "split.json"
    if split_path.exists():
        test_ids = set(textio.read_json(split_path)["test"])
    entries = _load_dataset_dir(data_dir, test_ids)
    gen, _, meta = dm.load_models(_require_path(args.model, "model"))
    human = np.concatenate([ev.maneuver_windows(seq.target)
                            for _, seq, _ in entries])
    clusters = ev.fit_clusters(human, k=cfg.clusters,
                               seed=derived_seed(cfg, "clusters"))
    per_route = []
    for _, seq, frames in entries:
        preds = dm.predict_series(gen, seq)
        per_route.append((preds, seq.target, frames))
    return cfg, ev.evaluate_predictions(per_route, clusters, cfg.rate)


def cmd_eval(args) -> int:
    cfg, report = _eval_report(args)
    ev.report_to_files(report, args.report,
                       tables_dir=str(Path(args.report).parent),
                       meta={"config_hash": cfg.hash()},
                       svg_path=args.svg)
    print(f"a_s {report.a_s:.3f}  a_v {report.a_v:.3f}  c_lat {report.c_lat:.3f}  "
          f"c_lon {report.c_lon:.3f}  h {report.h:.2f}")
    return 0


def cmd_diagnose(args) -> int:
    cfg, report = _eval_report(args)
    textio.write_json(args.out, {"schema": "diagnosis/v1", **report.diagnosis},
                      {"config_hash": cfg.hash()})
    for panel, attrs in report.diagnosis.items():
        for attribute, rec in attrs.items():
            rates = ", ".join(f"{b}={r:.1f}" for b, r in
                              zip(rec["bins"], rec["relative_error_rate"]))
            print(f"{panel}/{attribute}: {rates}"
                  + ("  (no errors)" if rec["no_errors"] else ""))
    return 0


def cmd_pid_tune(args) -> int:
    pred_log, pmeta = rw.log_from_csv(_require_path(args.pred_csv, "pred-csv"))
    truth_log, tmeta = rw.log_from_csv(_require_path(args.truth_csv, "truth-csv"))
    textio.require_same_hash({"pred": pmeta.get("config_hash"),
                              "truth": tmeta.get("config_hash")})
    preds = np.column_stack([pred_log.steer, pred_log.speed])
    truths = np.column_stack([truth_log.steer, truth_log.speed])
    if len(preds) != len(truths):
        raise CliError("pred-csv and truth-csv lengths differ")
    result = pid.grid_tune(preds, truths, (args.target_clat, args.target_clon),
                           rate_hz=args.rate)
    print(f"steer gains kp={result.gains.steer[0]} ki={result.gains.steer[1]} "
          f"kd={result.gains.steer[2]}")
    print(f"speed gains kp={result.gains.speed[0]} ki={result.gains.speed[1]} "
          f"kd={result.gains.speed[2]}")
    for key, value in result.achieved.items():
        print(f"{key} {value:.4f}")
    if args.out:
        textio.write_json(args.out, {
            "schema": "pidtune/v1",
            "gains": {"steer": list(result.gains.steer),
                      "speed": list(result.gains.speed)},
            "achieved": result.achieved,
            "comfort_reduced": result.comfort_reduced})
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    report = run_pipeline(cfg, args.out, svg=args.svg)
    print(f"a_s {report.a_s:.3f}  a_v {report.a_v:.3f}  c_lat {report.c_lat:.3f}  "
          f"c_lon {report.c_lon:.3f}  h {report.h:.2f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    variants = []
    for spec_str in args.variant:
        toggles = {t for t in spec_str.split(",") if t and t != "none"}
        variants.append(toggles)
    if not variants:
        raise CliError("variant: at least one --variant is required")
    rows = run_ablation(cfg, args.out, variants)
    cols = list(rows[0].keys())
    print(",".join(cols))
    for row in rows:
        print(",".join(textio.fmt(row[c]) for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivelab",
        description="synthetic driving lab: world generation, map matching, "
                    "model training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic road network")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_world)

    p = sub.add_parser("gen-data", help="simulate reference drives + GPS traces")
    _add_config_flags(p)
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("match", help="snap a GPS trace to the road network")
    p.add_argument("--world", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, help="emission sigma (default: trace sigma)")
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--radius", type=float, default=30.0)
    p.add_argument("--max-candidates", type=int, default=8)
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("features", help="extract map features and model windows")
    p.add_argument("--world", required=True)
    p.add_argument("--routes", dest="routes_file", required=True)
    p.add_argument("--route-index", type=int, default=0)
    p.add_argument("--log", required=True)
    p.add_argument("--matched", help="matched path CSV (default: use true poses)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", help="train generator + discriminator")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--svg", help="also write diagnosis bar charts")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diagnose", help="per-attribute relative error rates")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("pid-tune", help="grid-search PID gains to a comfort target")
    p.add_argument("--pred-csv", required=True)
    p.add_argument("--truth-csv", required=True)
    p.add_argument("--target-clat", type=float, required=True)
    p.add_argument("--target-clon", type=float, required=True)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_pid_tune)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("ablate", help="train and compare toggle variants")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", action="append", default=[],
                   help="comma list of map,comfort,adversarial (or 'none'); "
                        "repeatable")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
