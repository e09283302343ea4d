"""Undirected, unweighted bipartite session-URL graph.

Node ids are dense integers shared across both kinds; adjacency lists are
kept sorted so that summation order (and therefore every floating-point
result downstream) is independent of edge insertion order. A session gets at
most one edge per distinct URL regardless of repeat visits.
"""
from __future__ import annotations

import json
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DuplicateSession, UnknownNode
from .logs import Session

SESSION = 0
URL = 1

STATIC_EXTENSIONS = frozenset(
    {".css", ".js", ".png", ".jpg", ".gif", ".ico", ".svg", ".woff"})


@dataclass(frozen=True)
class RefinementPolicy:
    """Which URL nodes to drop before message passing."""

    drop_categories: frozenset[str] = frozenset({"static_asset"})
    drop_extensions: frozenset[str] = STATIC_EXTENSIONS
    hub_degree_percentile: float | None = None

    def __post_init__(self):
        p = self.hub_degree_percentile
        if p is not None and not (0 < p <= 100):
            raise ValueError("hub_degree_percentile must be in (0, 100]")

    def drops(self, url: str, category: str | None) -> bool:
        if category is not None and category in self.drop_categories:
            return True
        return any(url.endswith(ext) for ext in self.drop_extensions)


EMPTY_POLICY = RefinementPolicy(drop_categories=frozenset(),
                                drop_extensions=frozenset())


class BipartiteGraph:
    """Session and URL nodes with sorted adjacency lists."""

    def __init__(self):
        self._adj: list[list[int]] = []
        self._kind: list[int] = []
        self._key: list[str] = []
        self._kind_pos: list[int] = []  # row index within the node's kind
        self._session_index: dict[str, int] = {}
        self._url_index: dict[str, int] = {}
        self._dead: set[int] = set()
        self._arrays_cache: tuple[np.ndarray, np.ndarray] | None = None
        self.edge_count = 0

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(kind, kind_pos) as numpy arrays, cached until the next node."""
        if self._arrays_cache is None or \
                self._arrays_cache[0].shape[0] != len(self._kind):
            self._arrays_cache = (np.asarray(self._kind, dtype=np.int8),
                                  np.asarray(self._kind_pos, dtype=np.int64))
        return self._arrays_cache

    # --- node accounting -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self._adj) - len(self._dead)

    @property
    def n_sessions(self) -> int:
        return len(self._session_index)

    @property
    def n_urls(self) -> int:
        return len(self._url_index)

    def is_session(self, v: int) -> bool:
        return self._kind[v] == SESSION

    def node_key(self, v: int) -> str:
        return self._key[v]

    def kind_pos(self, v: int) -> int:
        """Row index of node v within its kind's feature matrix."""
        return self._kind_pos[v]

    def session_nodes(self) -> list[int]:
        return sorted(self._session_index.values())

    def url_nodes(self) -> list[int]:
        return sorted(self._url_index.values())

    def session_node(self, key: str) -> int:
        try:
            return self._session_index[key]
        except KeyError:
            raise UnknownNode(f"unknown session key {key!r}") from None

    def url_node(self, url: str) -> int:
        try:
            return self._url_index[url]
        except KeyError:
            raise UnknownNode(f"unknown url {url!r}") from None

    def has_session(self, key: str) -> bool:
        return key in self._session_index

    def has_url(self, url: str) -> bool:
        return url in self._url_index

    def neighbors(self, v: int) -> list[int]:
        self._check_node(v)
        return self._adj[v]

    def degree(self, v: int) -> int:
        self._check_node(v)
        return len(self._adj[v])

    def _check_node(self, v: int):
        if not (0 <= v < len(self._adj)) or v in self._dead:
            raise UnknownNode(f"unknown node id {v}")

    # --- construction ----------------------------------------------------

    def _new_node(self, kind: int, key: str) -> int:
        v = len(self._adj)
        self._adj.append([])
        self._kind.append(kind)
        self._key.append(key)
        if kind == SESSION:
            self._kind_pos.append(len(self._session_index))
            self._session_index[key] = v
        else:
            self._kind_pos.append(len(self._url_index))
            self._url_index[key] = v
        return v

    def add_session_node(self, key: str) -> int:
        if key in self._session_index:
            raise DuplicateSession(f"session {key!r} already present")
        return self._new_node(SESSION, key)

    def add_url_node(self, url: str) -> int:
        existing = self._url_index.get(url)
        if existing is not None:
            return existing
        return self._new_node(URL, url)

    def add_edge(self, s: int, u: int) -> bool:
        """Insert session-URL edge; returns False if already present."""
        if self._kind[s] != SESSION or self._kind[u] != URL:
            raise ValueError("edges must connect a session node to a URL node")
        row = self._adj[s]
        i = bisect_left(row, u)
        if i < len(row) and row[i] == u:
            return False
        row.insert(i, u)
        insort(self._adj[u], s)
        self.edge_count += 1
        return True

    def remove_edge(self, s: int, u: int) -> None:
        if self._kind[s] != SESSION or self._kind[u] != URL:
            raise ValueError("edges must connect a session node to a URL node")
        row = self._adj[s]
        i = bisect_left(row, u)
        if i >= len(row) or row[i] != u:
            raise UnknownNode(f"edge ({s}, {u}) not present")
        row.pop(i)
        other = self._adj[u]
        other.pop(bisect_left(other, s))
        self.edge_count -= 1

    def copy(self) -> "BipartiteGraph":
        g = BipartiteGraph.__new__(BipartiteGraph)
        g._adj = [list(row) for row in self._adj]
        g._kind = list(self._kind)
        g._key = list(self._key)
        g._kind_pos = list(self._kind_pos)
        g._session_index = dict(self._session_index)
        g._url_index = dict(self._url_index)
        g._dead = set(self._dead)
        g.edge_count = self.edge_count
        return g

    def check_invariants(self):
        """Full-scan structural check used by tests: bipartite + symmetric."""
        total = 0
        for v, row in enumerate(self._adj):
            if v in self._dead:
                assert not row, "dead node retains edges"
                continue
            assert row == sorted(set(row)), "adjacency not sorted/unique"
            for u in row:
                assert self._kind[v] != self._kind[u], "edge within one kind"
                assert v in self._adj[u], "adjacency not symmetric"
            total += len(row)
        assert total == 2 * self.edge_count, "edge_count mismatch"


def build_graph(sessions: Iterable[Session]) -> BipartiteGraph:
    """One session node per session, one URL node per distinct URL.

    Session nodes take ids 0..n-1 in input order before any URL node is
    created, so differently-refined graphs over the same sessions agree on
    session node ids (labels and splits transfer unchanged).
    """
    g = BipartiteGraph()
    ss = list(sessions)
    for s in ss:
        g.add_session_node(s.session_id)
    for s in ss:
        v = g.session_node(s.session_id)
        for url in sorted(set(s.urls)):
            g.add_edge(v, g.add_url_node(url))
    return g


def add_session(g: BipartiteGraph, s: Session,
                policy: RefinementPolicy | None = None,
                category_of: Callable[[str], str | None] | None = None) -> int:
    """Incrementally insert one session; unseen URLs become new URL nodes.

    URLs matching the refinement policy are skipped so that incremental
    updates of a refined graph stay refined. Existing nodes and edges are
    untouched; the session node may end up isolated.
    """
    if g.has_session(s.session_id):
        raise DuplicateSession(f"session {s.session_id!r} already present")
    v = g.add_session_node(s.session_id)
    for url in sorted(set(s.urls)):
        if policy is not None:
            category = category_of(url) if category_of else None
            if policy.drops(url, category):
                continue
        g.add_edge(v, g.add_url_node(url))
    return v


def remove_session(g: BipartiteGraph, key: str) -> None:
    """Unlink and tombstone a session node (used by the service's eviction)."""
    v = g.session_node(key)
    for u in g._adj[v]:
        row = g._adj[u]
        row.pop(bisect_left(row, v))
        g.edge_count -= 1
    g._adj[v] = []
    del g._session_index[key]
    g._dead.add(v)


def refine(g: BipartiteGraph, policy: RefinementPolicy,
           category_of: Callable[[str], str | None] | None = None) -> BipartiteGraph:
    """Drop URL nodes matching the policy; keep all sessions (even isolated).

    Session node ids and kind positions are preserved by re-inserting
    sessions in their original order, so per-kind feature rows stay aligned.
    """
    dropped: set[int] = set()
    for url, v in g._url_index.items():
        category = category_of(url) if category_of else None
        if policy.drops(url, category):
            dropped.add(v)
    if policy.hub_degree_percentile is not None:
        degrees = [g.degree(v) for v in g.url_nodes()]
        if degrees:
            cutoff = float(np.percentile(degrees, policy.hub_degree_percentile))
            for v in g.url_nodes():
                if g.degree(v) > cutoff:
                    dropped.add(v)

    out = BipartiteGraph()
    session_ids = sorted(g._session_index.values())
    for v in session_ids:
        out.add_session_node(g.node_key(v))
    for v in session_ids:
        nv = out.session_node(g.node_key(v))
        for u in g._adj[v]:
            if u not in dropped:
                out.add_edge(nv, out.add_url_node(g.node_key(u)))
    return out


@dataclass
class SampledSubgraph:
    """Bounded computation subgraph for a 2-layer forward pass.

    ``samp[0]`` holds the sampled neighbors of each root (outermost hop);
    ``samp[1]`` the sampled neighbors of every node needing a first-layer
    embedding. Neighbor tuples are sorted for numeric determinism.
    """

    roots: np.ndarray
    mid_nodes: np.ndarray
    base_nodes: np.ndarray
    samp_outer: dict[int, tuple[int, ...]]
    samp_inner: dict[int, tuple[int, ...]]


def _sample_neighbors(g: BipartiteGraph, v: int, fanout: int,
                      rng: np.random.Generator) -> tuple[int, ...]:
    neigh = g._adj[v]
    if len(neigh) <= fanout:
        return tuple(neigh)
    picked = rng.choice(len(neigh), size=fanout, replace=False)
    picked.sort()
    return tuple(neigh[i] for i in picked)


def _build_subgraph(g: BipartiteGraph, roots: Sequence[int], k: int,
                    fanout: int, sample) -> SampledSubgraph:
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    if k != 2:
        raise ValueError("only k=2 computation subgraphs are supported")
    root_arr = np.asarray(list(roots), dtype=np.int64)
    for v in root_arr:
        g._check_node(int(v))

    samp_outer: dict[int, tuple[int, ...]] = {}
    mid: set[int] = set(int(v) for v in root_arr)
    for v in sorted(set(int(v) for v in root_arr)):
        samp_outer[v] = sample(v)
        mid.update(samp_outer[v])

    samp_inner: dict[int, tuple[int, ...]] = {}
    base: set[int] = set(mid)
    for v in sorted(mid):
        samp_inner[v] = sample(v)
        base.update(samp_inner[v])

    return SampledSubgraph(
        roots=root_arr,
        mid_nodes=np.array(sorted(mid), dtype=np.int64),
        base_nodes=np.array(sorted(base), dtype=np.int64),
        samp_outer=samp_outer,
        samp_inner=samp_inner,
    )


def k_hop_subgraph(g: BipartiteGraph, roots: Sequence[int], k: int = 2,
                   fanout: int = 15,
                   rng: np.random.Generator | None = None) -> SampledSubgraph:
    """Uniformly sample up to ``fanout`` distinct neighbors per hop.

    With ``fanout`` at least the maximum degree this reduces to the exact
    k-hop neighborhood. Only k=2 is consumed by the model.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    return _build_subgraph(g, roots, k, fanout,
                           lambda v: _sample_neighbors(g, v, fanout, rng))


def k_hop_subgraph_keyed(g: BipartiteGraph, roots: Sequence[int], k: int = 2,
                         fanout: int = 15, base_seed: int = 0) -> SampledSubgraph:
    """Like :func:`k_hop_subgraph` but each node's sample is drawn from an
    rng keyed on (base_seed, node id).

    Inference uses this so a node's bounded neighborhood is identical
    whether it is scored alone or inside a batch.
    """
    def sample(v: int) -> tuple[int, ...]:
        rng = np.random.default_rng(np.random.SeedSequence((base_seed, v)))
        return _sample_neighbors(g, v, fanout, rng)

    return _build_subgraph(g, roots, k, fanout, sample)


def exact_k_hop_nodes(g: BipartiteGraph, roots: Sequence[int], k: int = 2) -> set[int]:
    """Brute-force BFS ball of radius k (test oracle companion)."""
    frontier = set(int(v) for v in roots)
    seen = set(frontier)
    for _ in range(k):
        nxt: set[int] = set()
        for v in frontier:
            nxt.update(g.neighbors(v))
        seen.update(nxt)
        frontier = nxt
    return seen


def save_graph(g: BipartiteGraph, edges_path: str | Path,
               nodes_path: str | Path,
               categories: dict[str, str] | None = None) -> None:
    """Text edge list (session_id TAB url) plus a node manifest, id order."""
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for v in range(len(g._adj)):
            if v in g._dead:
                continue
            entry = {"kind": "session" if g.is_session(v) else "url",
                     "key": g.node_key(v)}
            if categories and not g.is_session(v):
                cat = categories.get(g.node_key(v))
                if cat:
                    entry["category"] = cat
            fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for v in sorted(g._session_index.values()):
            for u in g._adj[v]:
                fh.write(f"{g.node_key(v)}\t{g.node_key(u)}\n")


def load_graph(edges_path: str | Path, nodes_path: str | Path
               ) -> tuple[BipartiteGraph, dict[str, str]]:
    """Round-trip counterpart of :func:`save_graph`."""
    g = BipartiteGraph()
    categories: dict[str, str] = {}
    for obj in _iter_jsonl(nodes_path):
        if obj["kind"] == "session":
            g.add_session_node(obj["key"])
        else:
            g.add_url_node(obj["key"])
            if "category" in obj:
                categories[obj["key"]] = obj["category"]
    with open(edges_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            skey, url = line.split("\t", 1)
            g.add_edge(g.session_node(skey), g.url_node(url))
    return g, categories


def _iter_jsonl(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
