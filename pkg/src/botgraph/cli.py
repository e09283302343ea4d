"""botgraph command line: synth, ingest, features, build-graph, train,
train-mlp, eval, score, perturb, coldstart, ablate, serve.

Every run writes a manifest (config snapshot, seeds, input digests, output
paths) next to its outputs so results are regenerable. Config files are
flat key=value text; flags override file values. All randomness flows from
--seed through a fixed per-component derivation.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation, experiments
from .baseline import MlpClassifier
from .errors import BotgraphError
from .features import (FeaturePack, SESSION_DIM, URL_DIM,
                       feature_pack_for_graph)
from .graph import (RefinementPolicy, build_graph, load_graph, refine,
                    save_graph)
from .logs import (ParseStats, parse_log_lines, session_from_json,
                   session_to_json, sessionize, truncate_outliers)
from .sage import GraphSageClassifier, load_checkpoint, save_checkpoint
from .service import ScoringEngine, make_server
from .synth import TrafficConfig, generate_corpus, load_catalog, write_corpus
from .util import (coerce_kv, derive_seed, parse_kv_file, read_jsonl,
                   sha256_file, write_jsonl)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _write_manifest(anchor: Path, command: str, config: dict,
                    seeds: dict, inputs: list[str], outputs: list[str]):
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {p: sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": outputs,
        "tool_version": __version__,
        "created_unix": int(time.time()),
    }
    path = anchor / "manifest.json" if anchor.is_dir() \
        else anchor.with_name(anchor.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                    encoding="utf-8")
    return path


def _load_config(path: str | None, defaults: dict) -> dict:
    if not path:
        return dict(defaults)
    return coerce_kv(parse_kv_file(path), defaults)


# --- subcommand handlers ------------------------------------------------------


def _cmd_synth(args) -> int:
    defaults = {f: getattr(TrafficConfig, "__dataclass_fields__")[f].default
                for f in ("n_urls", "n_human_sessions", "bot_fraction",
                          "zipf_exponent", "week_count",
                          "new_url_fraction_week2", "week2_gap_scale",
                          "rare_pool_size")}
    cfg_vals = _load_config(args.config, defaults)
    cfg = TrafficConfig(seed=args.seed, **cfg_vals)
    weeks, catalog = generate_corpus(cfg)
    out = Path(args.out_dir)
    paths = write_corpus(weeks, catalog, out)
    _write_manifest(out, "synth", {**cfg_vals, "seed": args.seed},
                    {"master": args.seed},
                    [args.config] if args.config else [],
                    sum(paths.values(), []))
    total = sum(len(w) for w in weeks)
    bots = sum(1 for w in weeks for s in w if s.label.value == "bot")
    print(f"wrote {total} sessions ({bots} bots) across "
          f"{len(weeks)} week(s) to {out}")
    return 0


def _cmd_ingest(args) -> int:
    stats = ParseStats()
    with open(args.input, "r", encoding="utf-8") as fh:
        records = list(parse_log_lines(fh, format=args.format, stats=stats))
    sessions = sessionize(records,
                          inactivity_window_ms=args.window_min * 60_000,
                          min_requests=args.min_requests)
    kept = truncate_outliers(sessions, max_requests=args.max_requests)
    write_jsonl(args.out, (session_to_json(s) for s in kept))
    _write_manifest(Path(args.out), "ingest", vars(args) | {"seed": None},
                    {}, [args.input], [args.out])
    print(f"parsed {stats.parsed} records ({stats.skipped} skipped), "
          f"emitted {len(kept)} sessions")
    return 0


def _load_sessions(path) -> list:
    return [session_from_json(obj) for obj in read_jsonl(path)]


def _category_lookup(categories: dict[str, str]):
    return (lambda url: categories.get(url)) if categories else None


def _cmd_build_graph(args) -> int:
    sessions = _load_sessions(args.sessions)
    categories = load_catalog(args.catalog).categories() if args.catalog else {}
    g = build_graph(sessions)
    if not args.raw:
        g = refine(g, RefinementPolicy(),
                   category_of=_category_lookup(categories))
    save_graph(g, args.out_edges, args.out_nodes, categories=categories)
    _write_manifest(Path(args.out_edges), "build-graph",
                    vars(args) | {"seed": None}, {},
                    [args.sessions] + ([args.catalog] if args.catalog else []),
                    [args.out_edges, args.out_nodes])
    print(f"graph: {g.n_sessions} sessions, {g.n_urls} urls, "
          f"{g.edge_count} edges ({'raw' if args.raw else 'refined'})")
    return 0


def _cmd_features(args) -> int:
    g, categories = load_graph(args.graph, args.nodes)
    sessions = {s.session_id: s for s in _load_sessions(args.sessions)}
    pack = feature_pack_for_graph(g, sessions, _category_lookup(categories))
    rows = []
    for v in g.session_nodes():
        rows.append({"node_id": v, "kind": "session",
                     "x": pack.session_x[g.kind_pos(v)].tolist()})
    for v in g.url_nodes():
        rows.append({"node_id": v, "kind": "url",
                     "x": pack.url_x[g.kind_pos(v)].tolist()})
    rows.sort(key=lambda r: r["node_id"])
    write_jsonl(args.out, rows)
    _write_manifest(Path(args.out), "features", vars(args) | {"seed": None},
                    {}, [args.graph, args.nodes, args.sessions], [args.out])
    print(f"wrote {len(rows)} feature rows")
    return 0


def load_feature_pack(path, g) -> FeaturePack:
    """Rebuild the aligned FeaturePack from a feature dump."""
    session_x = np.zeros((g.n_sessions, SESSION_DIM))
    url_x = np.zeros((g.n_urls, URL_DIM))
    for obj in read_jsonl(path):
        v = obj["node_id"]
        if obj["kind"] == "session":
            session_x[g.kind_pos(v)] = obj["x"]
        else:
            url_x[g.kind_pos(v)] = obj["x"]
    return FeaturePack(session_x=session_x, url_x=url_x)


def _load_labels(path, g) -> dict[int, int]:
    labels = {}
    for obj in read_jsonl(path):
        if g.has_session(obj["sid"]):
            labels[g.session_node(obj["sid"])] = 1 if obj["label"] == "bot" else 0
    return labels


def _make_splits(labeled_nodes, labels, seed, val_frac, test_frac):
    rest, test = evaluation.stratified_holdout(
        labeled_nodes, [labels[v] for v in labeled_nodes],
        frac=test_frac, seed=derive_seed(seed, "split-test"))
    train, val = evaluation.stratified_holdout(
        rest, [labels[v] for v in rest],
        frac=val_frac / (1.0 - test_frac), seed=derive_seed(seed, "split-val"))
    return train, val, test


_TRAIN_DEFAULTS = {"hidden_dim": 128, "encoder_dim": 64, "fanout": 15,
                   "epochs_max": 200, "patience": 10, "batch_size": 256,
                   "lr": 1e-3, "dropout": 0.3, "weight_decay": 1e-4}


def _cmd_train(args) -> int:
    g, categories = load_graph(args.graph, args.nodes)
    pack = load_feature_pack(args.features, g)
    labels = _load_labels(args.labels, g)
    nodes = sorted(labels)
    train, val, test = _make_splits(nodes, labels, args.seed,
                                    args.val_frac, args.test_frac)
    cfg = _load_config(args.config, _TRAIN_DEFAULTS)
    clf = GraphSageClassifier(seed=args.seed, **cfg)
    clf.fit(g, pack, labels, train, val)
    val_scores = clf.predict_proba(g, pack, val)[:, 1]
    pick = evaluation.pick_threshold(val_scores, [labels[v] for v in val],
                                     target_fpr=args.target_fpr)
    clf.threshold_ = pick.threshold if pick.feasible else None
    save_checkpoint(clf, args.out, extra={
        "splits": {"train": list(map(int, train)), "val": list(map(int, val)),
                   "test": list(map(int, test))},
        "target_fpr": args.target_fpr})
    _write_manifest(Path(args.out), "train",
                    cfg | {"seed": args.seed, "target_fpr": args.target_fpr},
                    {"master": args.seed},
                    [args.graph, args.nodes, args.features, args.labels] +
                    ([args.config] if args.config else []), [args.out])
    print(f"best val AUC {clf.best_val_auc_:.4f} after "
          f"{len(clf.history_)} epochs; checkpoint at {args.out}")
    return 0


def _cmd_train_mlp(args) -> int:
    g, _ = load_graph(args.graph, args.nodes)
    pack = load_feature_pack(args.features, g)
    labels = _load_labels(args.labels, g)
    nodes = sorted(labels)
    train, val, test = _make_splits(nodes, labels, args.seed,
                                    args.val_frac, args.test_frac)
    cfg = _load_config(args.config, {k: v for k, v in _TRAIN_DEFAULTS.items()
                                     if k not in ("encoder_dim", "fanout")})
    y = np.zeros(g.n_sessions)
    for v, lab in labels.items():
        y[g.kind_pos(v)] = lab
    clf = MlpClassifier(seed=args.seed, **cfg)
    train_rows = [g.kind_pos(v) for v in train]
    val_rows = [g.kind_pos(v) for v in val]
    clf.fit(pack.session_x, y, train_idx=train_rows, val_idx=val_rows)
    val_scores = clf.predict_proba(pack.session_x[val_rows])[:, 1]
    pick = evaluation.pick_threshold(val_scores, y[val_rows],
                                     target_fpr=args.target_fpr)
    clf.threshold_ = pick.threshold if pick.feasible else None
    save_checkpoint(clf, args.out, extra={
        "splits": {"train": list(map(int, train)), "val": list(map(int, val)),
                   "test": list(map(int, test))},
        "target_fpr": args.target_fpr})
    _write_manifest(Path(args.out), "train-mlp",
                    cfg | {"seed": args.seed}, {"master": args.seed},
                    [args.graph, args.nodes, args.features, args.labels],
                    [args.out])
    print(f"best val AUC {clf.best_val_auc_:.4f} after "
          f"{len(clf.history_)} epochs; checkpoint at {args.out}")
    return 0


def _ckpt_extra(path) -> dict:
    return json.loads(Path(path).read_text())["body"].get("extra", {})


def _cmd_eval(args) -> int:
    g, _ = load_graph(args.graph, args.nodes)
    pack = load_feature_pack(args.features, g)
    labels = _load_labels(args.labels, g)
    clf = load_checkpoint(args.model)
    splits = _ckpt_extra(args.model).get("splits")
    if not splits:
        raise BotgraphError("checkpoint lacks stored splits; retrain first")
    val, target = splits["val"], splits[args.split]

    def scores_for(nodes):
        if isinstance(clf, GraphSageClassifier):
            return clf.predict_proba(g, pack, nodes)[:, 1]
        rows = pack.session_x[[g.kind_pos(v) for v in nodes]]
        return clf.predict_proba(rows)[:, 1]

    report = evaluation.evaluate(
        scores_for(val), [labels[v] for v in val],
        scores_for(target), [labels[v] for v in target],
        target_fpr=args.target_fpr)
    Path(args.out).write_text(json.dumps(report.to_json(), indent=2))
    _write_manifest(Path(args.out), "eval", vars(args) | {"seed": None}, {},
                    [args.model, args.graph, args.nodes, args.features,
                     args.labels], [args.out])
    print(evaluation.report_table({Path(args.model).name: report}))
    return 0


def _cmd_score(args) -> int:
    from .sage import score_session
    g, categories = load_graph(args.graph, args.nodes)
    pack = load_feature_pack(args.features, g)
    clf = load_checkpoint(args.model)
    if not isinstance(clf, GraphSageClassifier):
        raise BotgraphError("score requires a graphsage checkpoint")
    lookup = _category_lookup(categories)
    threshold = clf.threshold_ if clf.threshold_ is not None else 0.5
    out_rows = []
    for s in _load_sessions(args.sessions):
        prob, _ = score_session(clf, g, pack, s, category_of=lookup,
                                policy=RefinementPolicy())
        out_rows.append({"sid": s.session_id, "probability": prob,
                         "flagged": bool(prob >= threshold)})
    write_jsonl(args.out, out_rows)
    _write_manifest(Path(args.out), "score", vars(args) | {"seed": None}, {},
                    [args.model, args.graph, args.nodes, args.features,
                     args.sessions], [args.out])
    print(f"scored {len(out_rows)} sessions")
    return 0


def _model_seeds(arg: str) -> list[int]:
    return [int(s) for s in arg.split(",") if s.strip() != ""]


def _cmd_perturb(args) -> int:
    bundle = experiments.bundle_from_config(experiments.desk_config(args.seed))
    runs = experiments.compare_models(bundle, _model_seeds(args.model_seeds))
    rows = experiments.run_perturbation_sweep(
        bundle, runs, perturb_seed=derive_seed(args.seed, "perturb"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "perturbation.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "mode", "intensity", "seed", "auc"])
        for r in rows:
            w.writerow([r.model, r.mode, r.intensity, r.seed, f"{r.auc:.6f}"])
    curves = {f"{m}/{mode}": experiments.sweep_curve(rows, m, mode)
              for m in ("graphsage", "mlp") for mode in ("add", "remove")}
    (out / "perturbation.json").write_text(json.dumps(curves, indent=2))
    _write_manifest(out, "perturb", vars(args), {"master": args.seed}, [],
                    [str(csv_path), str(out / "perturbation.json")])
    print(json.dumps(curves["graphsage/add"]))
    return 0


def _cmd_coldstart(args) -> int:
    cfg = experiments.coldstart_config(args.seed, drift=not args.no_drift)
    reports = experiments.run_cold_start(cfg, seed=args.model_seed,
                                         fine_tune=not args.no_finetune)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "coldstart.json"
    path.write_text(json.dumps({k: v.to_json() for k, v in reports.items()},
                               indent=2))
    _write_manifest(out, "coldstart", vars(args), {"master": args.seed}, [],
                    [str(path)])
    for name, r in reports.items():
        print(f"{name}: in-sample {r.auc_week1_insample:.4f} -> inductive "
              f"{r.auc_week2_inductive:.4f} (drop {r.relative_drop:.2%})")
    return 0


def _cmd_ablate(args) -> int:
    bundle = experiments.bundle_from_config(experiments.desk_config(args.seed))
    result = experiments.run_ablation(bundle, _model_seeds(args.model_seeds))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.json"
    path.write_text(json.dumps(result.to_json(), indent=2))
    _write_manifest(out, "ablate", vars(args), {"master": args.seed}, [],
                    [str(path)])
    print(json.dumps(result.means()))
    return 0


def _cmd_serve(args) -> int:
    ckpt = args.ckpt or os.environ.get("BOTGRAPH_CKPT")
    if not ckpt:
        raise BotgraphError("no checkpoint: pass --ckpt or set BOTGRAPH_CKPT")
    g, categories = load_graph(args.graph, args.nodes)
    pack = load_feature_pack(args.features, g)
    model = load_checkpoint(ckpt)
    engine = ScoringEngine(g, pack, model=model,
                           category_of=_category_lookup(categories),
                           horizon_ms=args.horizon_days * 24 * 3600 * 1000)
    host, _, port = args.listen.partition(":")
    server = make_server(engine, host or "127.0.0.1", int(port or 0))
    print(f"serving on {server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="botgraph",
                description="Bot detection on a bipartite session-URL graph")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    s.add_argument("--config", help="key=value synth config")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("ingest", help="parse logs into sessions")
    s.add_argument("input", help="raw log file")
    s.add_argument("--format", choices=["json-lines", "combined"],
                   default="json-lines")
    s.add_argument("--window-min", type=int, default=30)
    s.add_argument("--min-requests", type=int, default=2)
    s.add_argument("--max-requests", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_ingest)

    s = sub.add_parser("build-graph", help="build (and refine) the graph")
    s.add_argument("--sessions", required=True)
    s.add_argument("--catalog", help="catalog.jsonl for category lookups")
    s.add_argument("--raw", action="store_true",
                   help="skip static-resource refinement")
    s.add_argument("--out-edges", required=True)
    s.add_argument("--out-nodes", required=True)
    s.set_defaults(func=_cmd_build_graph)

    s = sub.add_parser("features", help="dump per-node feature rows")
    s.add_argument("--sessions", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_features)

    for name, fn in (("train", _cmd_train), ("train-mlp", _cmd_train_mlp)):
        s = sub.add_parser(name, help=f"{name} on a labeled graph")
        s.add_argument("--graph", required=True)
        s.add_argument("--nodes", required=True)
        s.add_argument("--features", required=True)
        s.add_argument("--labels", required=True)
        s.add_argument("--config", help="key=value training config")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--val-frac", type=float, default=0.1)
        s.add_argument("--test-frac", type=float, default=0.1)
        s.add_argument("--target-fpr", type=float, default=0.01)
        s.add_argument("--out", required=True)
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="evaluate a checkpoint on its split")
    s.add_argument("--model", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--split", choices=["val", "test"], default="test")
    s.add_argument("--target-fpr", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("score", help="score sessions from a file")
    s.add_argument("--model", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--sessions", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_score)

    s = sub.add_parser("perturb", help="adversarial edge perturbation sweep")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--model-seeds", default="0,1,2")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_perturb)

    s = sub.add_parser("coldstart", help="week1->week2 inductive experiment")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--model-seed", type=int, default=0)
    s.add_argument("--no-drift", action="store_true")
    s.add_argument("--no-finetune", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_coldstart)

    s = sub.add_parser("ablate", help="structure vs feature ablation")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--model-seeds", default="0,1,2")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_ablate)

    s = sub.add_parser("serve", help="run the scoring service")
    s.add_argument("--listen", default="127.0.0.1:8731")
    s.add_argument("--graph", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--ckpt", help="checkpoint path (or env BOTGRAPH_CKPT)")
    s.add_argument("--horizon-days", type=int, default=14)
    s.set_defaults(func=_cmd_serve)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (BotgraphError, FileNotFoundError, IsADirectoryError,
            ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main():
    sys.exit(dispatch())
