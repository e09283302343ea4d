"""Experiment harness: model comparison, adversarial edge perturbation,
cold-start inductive generalization, and the structure-vs-feature ablation.

Everything runs on the deterministic synthetic corpus; results are plain
dataclasses that the CLI serializes to JSON/CSV.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import evaluation
from .baseline import MlpClassifier
from .errors import LabelLeak, UnknownBotId
from .features import (FeaturePack, extract_session_features,
                       feature_pack_for_graph)
from .graph import (BipartiteGraph, RefinementPolicy, build_graph, refine)
from .logs import Label, Session
from .sage import GraphSageClassifier, score_session
from .synth import TrafficConfig, UrlCatalog, generate_corpus
from .util import derive_seed

DEFAULT_POLICY = RefinementPolicy()

# Harness-side training budget: spec defaults (200 epochs) converge long
# before this on the desk corpus; the cap keeps multi-seed sweeps quick.
HARNESS_SAGE = dict(epochs_max=60, patience=10)
HARNESS_MLP = dict(epochs_max=60, patience=10)


def desk_config(seed: int = 42, **overrides) -> TrafficConfig:
    """The default corpus every acceptance experiment runs on."""
    cfg = dict(n_urls=500, n_human_sessions=5000, bot_fraction=0.05, seed=seed)
    cfg.update(overrides)
    return TrafficConfig(**cfg)


@dataclass
class CorpusBundle:
    """One week of traffic with raw and refined graphs, features, splits."""

    sessions: list[Session]
    catalog: UrlCatalog
    graph_raw: BipartiteGraph
    graph: BipartiteGraph
    pack_raw: FeaturePack
    pack: FeaturePack
    labels: dict[int, int]
    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray

    @property
    def sessions_by_node(self) -> dict[int, Session]:
        return {i: s for i, s in enumerate(self.sessions)}

    def y(self, nodes: Sequence[int]) -> np.ndarray:
        return np.asarray([self.labels[int(v)] for v in nodes])


def build_bundle(sessions: Sequence[Session], catalog: UrlCatalog,
                 policy: RefinementPolicy = DEFAULT_POLICY,
                 val_frac: float = 0.1, test_frac: float = 0.1,
                 category_of=None) -> CorpusBundle:
    """Graphs, aligned features, labels, and a chronological split."""
    sessions = sorted(sessions, key=lambda s: (s.start, s.session_id))
    category_of = category_of if category_of is not None else catalog.category_of
    by_id = {s.session_id: s for s in sessions}
    graph_raw = build_graph(sessions)
    graph = refine(graph_raw, policy, category_of=category_of)
    pack_raw = feature_pack_for_graph(graph_raw, by_id, category_of)
    pack = FeaturePack(session_x=pack_raw.session_x.copy(),
                       url_x=feature_pack_for_graph(graph, by_id,
                                                    category_of).url_x)
    labels = {i: 1 if s.label is Label.BOT else 0
              for i, s in enumerate(sessions)}
    train, val, test = evaluation.temporal_split(
        [s.start for s in sessions], val_frac=val_frac, test_frac=test_frac)
    return CorpusBundle(sessions=list(sessions), catalog=catalog,
                        graph_raw=graph_raw, graph=graph,
                        pack_raw=pack_raw, pack=pack, labels=labels,
                        train_nodes=train, val_nodes=val, test_nodes=test)


def bundle_from_config(cfg: TrafficConfig, week: int = 0,
                       policy: RefinementPolicy = DEFAULT_POLICY) -> CorpusBundle:
    weeks, catalog = generate_corpus(cfg)
    return build_bundle(weeks[week], catalog, policy=policy)


# --- model comparison (relational lift) -------------------------------------


@dataclass
class SeedRun:
    seed: int
    sage: GraphSageClassifier
    mlp: MlpClassifier
    sage_auc: float
    mlp_auc: float
    sage_raw: GraphSageClassifier | None = None
    sage_raw_auc: float | None = None


def train_sage(bundle: CorpusBundle, seed: int, raw: bool = False,
               **params) -> GraphSageClassifier:
    opts = {**HARNESS_SAGE, **params, "seed": seed}
    clf = GraphSageClassifier(**opts)
    g = bundle.graph_raw if raw else bundle.graph
    pack = bundle.pack_raw if raw else bundle.pack
    clf.fit(g, pack, bundle.labels, bundle.train_nodes, bundle.val_nodes)
    return clf


def train_mlp(bundle: CorpusBundle, seed: int, **params) -> MlpClassifier:
    opts = {**HARNESS_MLP, **params, "seed": seed}
    clf = MlpClassifier(**opts)
    y = np.asarray([bundle.labels[i] for i in range(len(bundle.sessions))],
                   dtype=float)
    clf.fit(bundle.pack.session_x, y, train_idx=bundle.train_nodes,
            val_idx=bundle.val_nodes)
    return clf


def sage_test_auc(bundle: CorpusBundle, clf: GraphSageClassifier,
                  raw: bool = False, nodes: Sequence[int] | None = None) -> float:
    nodes = bundle.test_nodes if nodes is None else nodes
    g = bundle.graph_raw if raw else bundle.graph
    pack = bundle.pack_raw if raw else bundle.pack
    scores = clf.predict_proba(g, pack, nodes)[:, 1]
    return evaluation.auc(scores, bundle.y(nodes))


def mlp_test_auc(bundle: CorpusBundle, clf: MlpClassifier,
                 nodes: Sequence[int] | None = None) -> float:
    nodes = bundle.test_nodes if nodes is None else nodes
    scores = clf.predict_proba(bundle.pack.session_x[np.asarray(nodes)])[:, 1]
    return evaluation.auc(scores, bundle.y(nodes))


def compare_models(bundle: CorpusBundle, seeds: Sequence[int],
                   include_raw: bool = False, sage_params: dict | None = None,
                   mlp_params: dict | None = None) -> list[SeedRun]:
    """Train GraphSAGE (refined) and the MLP per seed on identical splits."""
    runs = []
    for seed in seeds:
        sage = train_sage(bundle, seed, **(sage_params or {}))
        mlp = train_mlp(bundle, seed, **(mlp_params or {}))
        run = SeedRun(seed=seed, sage=sage, mlp=mlp,
                      sage_auc=sage_test_auc(bundle, sage),
                      mlp_auc=mlp_test_auc(bundle, mlp))
        if include_raw:
            run.sage_raw = train_sage(bundle, seed, raw=True,
                                      **(sage_params or {}))
            run.sage_raw_auc = sage_test_auc(bundle, run.sage_raw, raw=True)
        runs.append(run)
    return runs


def run_refinement_stability(bundle: CorpusBundle, n_folds: int = 5,
                             fold_seed: int = 0, model_seed: int = 0,
                             sage_params: dict | None = None
                             ) -> dict[str, evaluation.CrossvalResult]:
    """Fold-level AUC of GraphSAGE on the refined vs raw graph.

    Same folds, same model seed; only the graph (and its URL features)
    differ, so the spread difference is attributable to refinement.
    """
    labels_list = [bundle.labels[i] for i in range(len(bundle.sessions))]
    results = {}
    for variant, raw in (("refined", False), ("raw", True)):
        g = bundle.graph_raw if raw else bundle.graph
        pack = bundle.pack_raw if raw else bundle.pack

        def run_fold(k, train_idx, test_idx):
            train, val = evaluation.stratified_holdout(
                [int(v) for v in train_idx],
                [bundle.labels[int(v)] for v in train_idx], frac=0.125,
                seed=derive_seed(fold_seed, f"fold-val-{k}"))
            opts = {**HARNESS_SAGE, **(sage_params or {}), "seed": model_seed}
            clf = GraphSageClassifier(**opts)
            clf.fit(g, pack, bundle.labels, train, val)
            scores = clf.predict_proba(g, pack, test_idx)[:, 1]
            y_val = [bundle.labels[int(v)] for v in val]
            val_scores = clf.predict_proba(g, pack, val)[:, 1]
            return evaluation.evaluate(val_scores, y_val, scores,
                                       bundle.y(test_idx))

        results[variant] = evaluation.crossval(
            run_fold, labels_list, n_folds=n_folds, seed=fold_seed)
    return results


# --- adversarial edge perturbation (IV-C) -----------------------------------


@dataclass(frozen=True)
class PerturbSpec:
    mode: str  # "add" | "remove"
    intensity: int  # edges modified per bot session
    popular_percentile: float = 90.0   # "popular" = top decile by degree
    unpopular_percentile: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("add", "remove"):
            raise ValueError("mode must be 'add' or 'remove'")
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")
        for p in (self.popular_percentile, self.unpopular_percentile):
            if not (0 < p < 100):
                raise ValueError("percentiles must be in (0, 100)")


def perturb(g: BipartiteGraph, bot_ids: Sequence[int], spec: PerturbSpec,
            session_x: np.ndarray, sessions_by_node: dict[int, Session],
            category_of) -> tuple[BipartiteGraph, np.ndarray]:
    """Adversarially edit bot-session edges, keeping features consistent.

    add: each bot session gains ``intensity`` edges to uniformly chosen
    top-decile URLs it is not already adjacent to (masking via common
    pages); each added edge also adds one request. remove: it loses
    ``intensity`` edges to its least-popular current neighbors (avoiding
    red-flag targets); the observed repeat count of each removed URL comes
    off the request count. Coverage features (distinct URLs/categories,
    cart/login flags) are recomputed from the edited visit set; timing
    features stay. Humans and the URL node set are never touched.
    """
    out = g.copy()
    x = session_x.copy()
    if spec.intensity == 0:
        return out, x

    url_nodes = g.url_nodes()
    degrees = np.array([g.degree(v) for v in url_nodes], dtype=float)
    popular_cut = np.percentile(degrees, spec.popular_percentile)
    popular = [v for v, d in zip(url_nodes, degrees) if d >= popular_cut]
    rng = np.random.default_rng(spec.seed)

    for v in sorted(int(b) for b in bot_ids):
        if not (0 <= v < len(g._kind)) or not g.is_session(v):
            raise UnknownBotId(f"node {v} is not a session node")
        s = sessions_by_node[v]
        visits = Counter(r.url for r in s.records)
        visited = set(visits)

        if spec.mode == "add":
            candidates = [u for u in popular if u not in set(out.neighbors(v))]
            take = min(spec.intensity, len(candidates))
            picked = rng.choice(len(candidates), size=take, replace=False) \
                if take else []
            added_urls = []
            for i in sorted(int(j) for j in picked):
                out.add_edge(v, candidates[i])
                added_urls.append(g.node_key(candidates[i]))
            new_count = x[v, 1] + len(added_urls)
            visited = visited | set(added_urls)
        else:
            neigh = sorted(out.neighbors(v),
                           key=lambda u: (out.degree(u), u))
            removed = neigh[:min(spec.intensity, len(neigh))]
            removed_urls = [out.node_key(u) for u in removed]
            for u in removed:
                out.remove_edge(v, u)
            repeats = sum(visits[url] for url in removed_urls)
            new_count = max(1.0, x[v, 1] - repeats)
            visited = visited - set(removed_urls)

        cats = set()
        has_cart = has_login = 0.0
        for url in visited:
            cat = category_of(url)
            if cat is None:
                from .features import guess_category
                cat = guess_category(url) or "unknown"
            cats.add(cat)
            if cat == "cart":
                has_cart = 1.0
            elif cat == "login":
                has_login = 1.0
        x[v, 1] = new_count
        x[v, 2] = new_count / max(x[v, 0], 1.0)
        x[v, 3] = float(len(visited))
        x[v, 4] = float(len(cats))
        x[v, 5] = has_cart
        x[v, 6] = has_login
    return out, x


@dataclass
class SweepRow:
    model: str
    mode: str
    intensity: int
    seed: int
    auc: float


def run_perturbation_sweep(bundle: CorpusBundle, runs: Sequence[SeedRun],
                           intensities: Sequence[int] = range(6),
                           modes: Sequence[str] = ("add", "remove"),
                           perturb_seed: int = 0) -> list[SweepRow]:
    """AUC per (model, mode, intensity, seed) on the perturbed test graph.

    Only test-split bot sessions are edited (the adversary controls its
    own sessions at inference time); training stays untouched.
    """
    bot_ids = [int(v) for v in bundle.test_nodes if bundle.labels[int(v)] == 1]
    by_node = bundle.sessions_by_node
    rows: list[SweepRow] = []
    y_test = bundle.y(bundle.test_nodes)
    test_rows = np.asarray(bundle.test_nodes)
    for mode in modes:
        for intensity in intensities:
            spec = PerturbSpec(mode=mode, intensity=int(intensity),
                               seed=perturb_seed)
            g2, sx2 = perturb(bundle.graph, bot_ids, spec,
                              bundle.pack.session_x, by_node,
                              bundle.catalog.category_of)
            pack2 = FeaturePack(session_x=sx2, url_x=bundle.pack.url_x)
            for run in runs:
                sage_scores = run.sage.predict_proba(
                    g2, pack2, bundle.test_nodes)[:, 1]
                rows.append(SweepRow("graphsage", mode, int(intensity),
                                     run.seed,
                                     evaluation.auc(sage_scores, y_test)))
                mlp_scores = run.mlp.predict_proba(sx2[test_rows])[:, 1]
                rows.append(SweepRow("mlp", mode, int(intensity), run.seed,
                                     evaluation.auc(mlp_scores, y_test)))
    return rows


def sweep_curve(rows: Sequence[SweepRow], model: str,
                mode: str) -> list[tuple[int, float]]:
    """(intensity, seed-mean AUC) pairs for one model and mode."""
    acc: dict[int, list[float]] = {}
    for r in rows:
        if r.model == model and r.mode == mode:
            acc.setdefault(r.intensity, []).append(r.auc)
    return [(i, float(np.mean(acc[i]))) for i in sorted(acc)]


# --- cold start (IV-D) -------------------------------------------------------


class LabelVault:
    """Label store with an access guard for the inductive-scoring phase."""

    def __init__(self, labels: dict[str, int]):
        self._labels = dict(labels)
        self.reads = 0
        self._frozen = False

    def freeze(self):
        self._frozen = True

    def thaw(self):
        self._frozen = False

    def get(self, sid: str) -> int:
        if self._frozen:
            raise LabelLeak(f"label for {sid!r} read during inductive scoring")
        self.reads += 1
        return self._labels[sid]


@dataclass
class ColdStartReport:
    auc_week1_insample: float
    auc_week2_inductive: float
    relative_drop: float
    new_url_count: int
    auc_week2_finetuned: float | None = None

    def to_json(self) -> dict:
        return {"auc_week1_insample": self.auc_week1_insample,
                "auc_week2_inductive": self.auc_week2_inductive,
                "relative_drop": self.relative_drop,
                "new_url_count": self.new_url_count,
                "auc_week2_finetuned": self.auc_week2_finetuned}


def coldstart_config(seed: int = 42, drift: bool = True,
                     **overrides) -> TrafficConfig:
    """Two-week corpus; with drift the bot mix shifts toward mimicry, human
    pacing slows a little, and 20% of week-2 page visits hit new URLs."""
    from .synth import DRIFTED_BOT_MIX
    base = dict(week_count=2, seed=seed)
    if drift:
        base.update(new_url_fraction_week2=0.2, week2_gap_scale=1.3,
                    week2_bot_mix=dict(DRIFTED_BOT_MIX))
    base.update(overrides)
    return desk_config(**base)


def run_cold_start(cfg: TrafficConfig, seed: int = 0,
                   sage_params: dict | None = None,
                   mlp_params: dict | None = None,
                   fine_tune: bool = True,
                   finetune_frac: float = 0.3
                   ) -> dict[str, ColdStartReport]:
    """Train on week 1, score week 2 inductively, optionally fine-tune.

    Week-2 sessions are inserted one by one in arrival order; the label
    vault is frozen for the whole scoring pass, so any label access raises
    LabelLeak. Week-1 catalog knowledge only: new URLs fall back to the
    zero-category feature path.
    """
    weeks, catalog = generate_corpus(cfg)
    if len(weeks) < 2:
        raise ValueError("cold start needs a two-week corpus")
    week1, week2 = weeks[0], weeks[1]
    category_of = catalog.week1_category_of

    bundle = build_bundle(week1, catalog, category_of=category_of)
    sage = train_sage(bundle, seed, **(sage_params or {}))
    mlp = train_mlp(bundle, seed, **(mlp_params or {}))
    sage_in = sage_test_auc(bundle, sage)
    mlp_in = mlp_test_auc(bundle, mlp)

    vault = LabelVault({s.session_id: 1 if s.label is Label.BOT else 0
                        for s in week2})
    week2 = sorted(week2, key=lambda s: (s.start, s.session_id))

    g2 = bundle.graph.copy()
    pack2 = bundle.pack.copy()
    week1_urls = {bundle.graph.node_key(v) for v in bundle.graph.url_nodes()}

    vault.freeze()
    sage_scores: dict[str, float] = {}
    node_of: dict[str, int] = {}
    for s in week2:
        prob, v = score_session(sage, g2, pack2, s, category_of=category_of,
                                policy=DEFAULT_POLICY)
        sage_scores[s.session_id] = prob
        node_of[s.session_id] = v
    mlp_scores = {
        s.session_id: float(mlp.predict_proba(
            extract_session_features(s, category_of)[None, :])[0, 1])
        for s in week2}
    vault.thaw()
    if vault.reads != 0:
        raise LabelLeak("labels were read during inductive scoring")

    new_urls = {g2.node_key(v) for v in g2.url_nodes()} - week1_urls

    sids = [s.session_id for s in week2]
    y2 = np.asarray([vault.get(sid) for sid in sids])
    ft_pos, eval_pos = evaluation.stratified_holdout(
        list(range(len(sids))), y2, frac=1.0 - finetune_frac,
        seed=derive_seed(cfg.seed, "coldstart-eval"))
    eval_sids = [sids[i] for i in eval_pos]
    y_eval = np.asarray([vault.get(sid) for sid in eval_sids])

    def inductive_auc(scores: dict[str, float]) -> float:
        return evaluation.auc([scores[sid] for sid in eval_sids], y_eval)

    sage_ind = inductive_auc(sage_scores)
    mlp_ind = inductive_auc(mlp_scores)

    sage_ft = None
    if fine_tune and ft_pos:
        ft_nodes = [node_of[sids[i]] for i in ft_pos]
        y_all = dict(bundle.labels)
        for i in ft_pos:
            y_all[node_of[sids[i]]] = int(vault.get(sids[i]))
        sage.fine_tune(g2, pack2, y_all, ft_nodes, epochs=20,
                       lr=sage.lr / 10.0)
        ft_scores = sage.predict_proba(
            g2, pack2, [node_of[sid] for sid in eval_sids])[:, 1]
        sage_ft = float(evaluation.auc(ft_scores, y_eval))

    def report(auc_in, auc_ind, ft=None):
        return ColdStartReport(
            auc_week1_insample=float(auc_in),
            auc_week2_inductive=float(auc_ind),
            relative_drop=float((auc_in - auc_ind) / auc_in),
            new_url_count=len(new_urls),
            auc_week2_finetuned=ft)

    return {"graphsage": report(sage_in, sage_ind, sage_ft),
            "mlp": report(mlp_in, mlp_ind)}


# --- structure vs features ablation (V-A) ------------------------------------


def structure_only_pack(bundle: CorpusBundle, raw: bool = False) -> FeaturePack:
    """Replace every node's features with [1, log1p(degree)]."""
    g = bundle.graph_raw if raw else bundle.graph
    n_s = len(bundle.sessions)
    sx = np.ones((n_s, 2))
    for v in range(n_s):
        sx[v, 1] = np.log1p(g.degree(v))
    urls = sorted(g.url_nodes(), key=g.kind_pos)
    ux = np.ones((len(urls), 2))
    for i, v in enumerate(urls):
        ux[i, 1] = np.log1p(g.degree(v))
    return FeaturePack(session_x=sx, url_x=ux)


@dataclass
class AblationResult:
    full: list[float]
    structure_only: list[float]
    feature_only: list[float]

    def means(self) -> dict[str, float]:
        return {"full": float(np.mean(self.full)),
                "structure_only": float(np.mean(self.structure_only)),
                "feature_only": float(np.mean(self.feature_only))}

    def to_json(self) -> dict:
        return {"per_seed": {"full": self.full,
                             "structure_only": self.structure_only,
                             "feature_only": self.feature_only},
                "means": self.means()}


def run_ablation(bundle: CorpusBundle, seeds: Sequence[int],
                 runs: Sequence[SeedRun] | None = None,
                 sage_params: dict | None = None,
                 mlp_params: dict | None = None) -> AblationResult:
    """Full model vs structure-only GNN vs feature-only MLP, per seed.

    Existing comparison runs can be passed in to reuse the full-model and
    MLP fits; structure-only is always trained here.
    """
    if runs is None:
        runs = compare_models(bundle, seeds, sage_params=sage_params,
                              mlp_params=mlp_params)
    struct_pack = structure_only_pack(bundle)
    structure_aucs = []
    for seed in seeds:
        opts = {**HARNESS_SAGE, **(sage_params or {}), "seed": seed}
        clf = GraphSageClassifier(**opts)
        clf.fit(bundle.graph, struct_pack, bundle.labels,
                bundle.train_nodes, bundle.val_nodes)
        scores = clf.predict_proba(bundle.graph, struct_pack,
                                   bundle.test_nodes)[:, 1]
        structure_aucs.append(
            float(evaluation.auc(scores, bundle.y(bundle.test_nodes))))
    return AblationResult(
        full=[r.sage_auc for r in runs],
        structure_only=structure_aucs,
        feature_only=[r.mlp_auc for r in runs],
    )
