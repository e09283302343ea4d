"""Bounded-latency scoring endpoint.

POST /score takes a JSON array of log records (one session's requests),
inserts the session into the live graph, and returns a bot probability,
flag, wall-clock scoring latency, and a 1-hop neighborhood explanation that
uses exactly the sampled neighbors of the forward pass. POST /swap replaces
the model checkpoint atomically; GET /health reports versions and sizes.

Graph writes serialize through a single lock; the model snapshot is an
immutable object replaced in one reference assignment, so every response is
attributable to exactly one checkpoint version.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (BadPayload, BotgraphError, CorruptCheckpoint,
                     DuplicateSession, ModelUnavailable, SchemaVersionMismatch)
from .features import (CategoryLookup, FeaturePack, extract_session_features,
                       extract_url_features)
from .graph import (BipartiteGraph, RefinementPolicy, add_session,
                    k_hop_subgraph_keyed, remove_session)
from .logs import record_from_json, sessionize
from .nn import sigmoid
from .sage import GraphSageClassifier, load_checkpoint, params_digest

DEFAULT_HORIZON_MS = 14 * 24 * 3600 * 1000


@dataclass(frozen=True)
class ModelSnapshot:
    model: GraphSageClassifier
    version: str  # parameter digest; stable id for torn-read audits


class ScoringEngine:
    """Live graph + frozen feature statistics + swappable model snapshot."""

    def __init__(self, graph: BipartiteGraph, pack: FeaturePack,
                 model: GraphSageClassifier | None = None,
                 category_of: CategoryLookup | None = None,
                 policy: RefinementPolicy | None = RefinementPolicy(),
                 horizon_ms: int = DEFAULT_HORIZON_MS):
        self._graph = graph
        self._pack = pack
        self._category_of = category_of
        self._policy = policy
        self._horizon_ms = horizon_ms
        self._lock = threading.Lock()
        self._session_start: dict[str, int] = {}
        self._latest_ms = 0
        self._snapshot: ModelSnapshot | None = None
        if model is not None:
            self._install(model)

    def _install(self, model: GraphSageClassifier):
        if not isinstance(model, GraphSageClassifier):
            raise CorruptCheckpoint("service requires a graphsage checkpoint")
        self._snapshot = ModelSnapshot(model=model,
                                       version=params_digest(model.net_))

    # -- scoring -----------------------------------------------------------

    def score_records(self, payload: list[dict]) -> dict:
        """Sessionize the payload, insert the newest session, score it.

        The forward pass runs on the subgraph sampled under the graph lock,
        so the 1-hop explanation lists exactly the neighbors the model saw.
        """
        snapshot = self._snapshot  # one atomic read; used throughout
        if snapshot is None:
            raise ModelUnavailable("no checkpoint loaded")
        try:
            records = [record_from_json(obj) for obj in payload]
        except (BotgraphError, TypeError, KeyError) as exc:
            raise BadPayload(f"unparseable records: {exc}") from None
        if not records:
            raise BadPayload("empty record list")
        sessions = sessionize(records, min_requests=1)
        session = sessions[-1]  # most recent when gaps split the payload

        model = snapshot.model
        t0 = time.perf_counter()
        with self._lock:
            try:
                v = add_session(self._graph, session, policy=self._policy,
                                category_of=self._category_of)
            except DuplicateSession as exc:
                raise BadPayload(str(exc)) from None
            row = extract_session_features(session, self._category_of)
            self._pack.append_session(row)
            self._append_url_rows()
            self._session_start[session.session_id] = session.start
            self._latest_ms = max(self._latest_ms, session.end)
            sub = k_hop_subgraph_keyed(self._graph, [v], 2, model.fanout,
                                       base_seed=model.infer_seed_)
            explanation = self._explain(sub.samp_outer[v])
            (logits, _), _ = model._forward_subgraph(self._graph, self._pack,
                                                     sub)
            self._evict_expired()
        prob = float(sigmoid(logits)[0])
        latency_ms = (time.perf_counter() - t0) * 1000.0

        threshold = model.threshold_ if model.threshold_ is not None else 0.5
        return {
            "session_id": session.session_id,
            "probability": prob,
            "flagged": bool(prob >= threshold),
            "latency_ms": latency_ms,
            "explanation": explanation,
            "model_version": snapshot.version,
        }

    def _explain(self, neighbor_ids: Sequence[int]) -> list[dict]:
        out = []
        for u in neighbor_ids:
            pos = self._graph.kind_pos(u)
            raw_row = self._pack.url_x[pos]
            out.append({"url": self._graph.node_key(u),
                        "degree": self._graph.degree(u),
                        "rarity": float(raw_row[10])})
        return out

    def _append_url_rows(self):
        n_have = self._pack.url_x.shape[0]
        n_need = self._graph.n_urls
        if n_need <= n_have:
            return
        by_pos = {self._graph.kind_pos(v): v
                  for v in self._graph.url_nodes()
                  if self._graph.kind_pos(v) >= n_have}
        for pos in range(n_have, n_need):
            url = self._graph.node_key(by_pos[pos])
            self._pack.append_url(extract_url_features(url, 0,
                                                       self._category_of))

    def _evict_expired(self):
        """Drop session nodes older than the horizon (bounded memory)."""
        if self._horizon_ms <= 0 or not self._session_start:
            return
        cutoff = self._latest_ms - self._horizon_ms
        expired = [sid for sid, start in self._session_start.items()
                   if start < cutoff]
        for sid in expired:
            if self._graph.has_session(sid):
                remove_session(self._graph, sid)
            del self._session_start[sid]
        if expired:
            self._maybe_compact()

    def _maybe_compact(self):
        """Rebuild graph and feature rows once tombstones dominate."""
        dead = len(self._graph._dead)
        if dead <= 64 or dead < self._graph.n_sessions:
            return
        old = self._graph
        pack = self._pack
        g = BipartiteGraph()
        url_nodes = sorted(old.url_nodes(), key=old.kind_pos)
        session_nodes = sorted(old.session_nodes(), key=old.kind_pos)
        for v in session_nodes:
            g.add_session_node(old.node_key(v))
        url_rows = []
        for v in url_nodes:
            g.add_url_node(old.node_key(v))
            url_rows.append(pack.url_x[old.kind_pos(v)])
        session_rows = []
        for v in session_nodes:
            nv = g.session_node(old.node_key(v))
            session_rows.append(pack.session_x[old.kind_pos(v)])
            for u in old.neighbors(v):
                g.add_edge(nv, g.url_node(old.node_key(u)))
        self._graph = g
        self._pack = FeaturePack(
            session_x=np.asarray(session_rows) if session_rows
            else np.zeros((0, pack.session_x.shape[1])),
            url_x=np.asarray(url_rows) if url_rows
            else np.zeros((0, pack.url_x.shape[1])))

    # -- management ----------------------------------------------------------

    def swap(self, path: str | Path) -> dict:
        """Validate and atomically install a new checkpoint.

        On any load failure the old snapshot keeps serving.
        """
        model = load_checkpoint(path)  # raises before any state changes
        if not isinstance(model, GraphSageClassifier):
            raise CorruptCheckpoint("service requires a graphsage checkpoint")
        snapshot = ModelSnapshot(model=model, version=params_digest(model.net_))
        self._snapshot = snapshot
        return {"model_version": snapshot.version}

    def health(self) -> dict:
        snapshot = self._snapshot
        return {
            "model_version": snapshot.version if snapshot else None,
            "graph_nodes": self._graph.n_nodes,
            "graph_edges": self._graph.edge_count,
            "graph_sessions": self._graph.n_sessions,
            "graph_urls": self._graph.n_urls,
        }


class _Handler(BaseHTTPRequestHandler):
    engine: ScoringEngine  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    def _reply(self, code: int, obj: dict):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BadPayload(f"bad json body: {exc}") from None

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, self.engine.health())
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        try:
            if self.path == "/score":
                payload = self._read_json()
                if not isinstance(payload, list):
                    raise BadPayload("expected a JSON array of records")
                self._reply(200, self.engine.score_records(payload))
            elif self.path == "/swap":
                obj = self._read_json()
                if not isinstance(obj, dict) or "path" not in obj:
                    raise BadPayload("expected {\"path\": ...}")
                self._reply(200, self.engine.swap(obj["path"]))
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})
        except BadPayload as exc:
            self._reply(400, {"error": str(exc)})
        except (SchemaVersionMismatch, CorruptCheckpoint, FileNotFoundError,
                IsADirectoryError) as exc:
            self._reply(400, {"error": f"swap refused: {exc}"})
        except ModelUnavailable as exc:
            self._reply(503, {"error": str(exc)})


def make_server(engine: ScoringEngine, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    """HTTP server bound to (host, port); port 0 picks a free one."""
    handler = type("BoundHandler", (_Handler,), {"engine": engine})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(engine: ScoringEngine, host: str, port: int):
    server = make_server(engine, host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
