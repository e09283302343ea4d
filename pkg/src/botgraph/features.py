"""Per-node behavioral features and train-split standardization.

Session vectors are 11-dimensional, URL vectors 12-dimensional; the model's
type-specific encoders absorb the mismatch. Everything here is a pure
function of the session's own records plus catalog statistics frozen at
training time, so features never depend on labels or later traffic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .graph import BipartiteGraph
from .logs import Session, UserAgentClass

URL_CATEGORIES = ("home", "category_page", "product", "search", "cart",
                  "login", "api", "static_asset", "trap")
_CATEGORY_POS = {c: i for i, c in enumerate(URL_CATEGORIES)}
_UA_POS = {UserAgentClass.BROWSER: 0, UserAgentClass.SCRIPTED: 1,
           UserAgentClass.HEADLESS: 2, UserAgentClass.UNKNOWN: 3}
_SENSITIVE = frozenset({"trap", "login", "api"})

SESSION_FEATURE_NAMES = (
    "duration_s", "request_count", "request_rate", "distinct_urls",
    "distinct_categories", "has_cart", "has_login",
    "ua_browser", "ua_scripted", "ua_headless", "ua_unknown",
)
URL_FEATURE_NAMES = tuple(f"cat_{c}" for c in URL_CATEGORIES) + (
    "popularity_log1p", "rarity", "sensitivity",
)

SESSION_DIM = len(SESSION_FEATURE_NAMES)
URL_DIM = len(URL_FEATURE_NAMES)

CategoryLookup = Callable[[str], "str | None"]


def guess_category(url: str) -> str | None:
    """Path heuristic for URLs missing from the catalog (cold start)."""
    segments = [s for s in url.split("/") if s]
    if "cart" in segments:
        return "cart"
    if "login" in segments or "signin" in segments:
        return "login"
    if segments and segments[0] == "api":
        return "api"
    return None


def extract_session_features(s: Session,
                             category_of: CategoryLookup | None = None) -> np.ndarray:
    """11-dim vector from the session's records alone."""
    duration_s = s.duration_ms / 1000.0
    count = float(len(s.records))
    categories = set()
    urls = set()
    has_cart = 0.0
    has_login = 0.0
    for rec in s.records:
        urls.add(rec.url)
        cat = category_of(rec.url) if category_of else None
        if cat is None:
            cat = guess_category(rec.url) or "unknown"
        categories.add(cat)
        if cat == "cart":
            has_cart = 1.0
        elif cat == "login":
            has_login = 1.0
    x = np.zeros(SESSION_DIM)
    x[0] = duration_s
    x[1] = count
    x[2] = count / max(duration_s, 1.0)
    x[3] = float(len(urls))
    x[4] = float(len(categories))
    x[5] = has_cart
    x[6] = has_login
    x[7 + _UA_POS[s.records[0].user_agent_class]] = 1.0
    return x


def extract_url_features(url: str, distinct_session_count: int,
                         category_of: CategoryLookup | None = None) -> np.ndarray:
    """12-dim vector: category one-hot, log1p popularity, rarity, sensitivity.

    Popularity counts distinct visiting sessions (edge degree), not raw
    requests. Unknown categories yield an all-zero category block plus a
    path-based sensitivity heuristic so cold-start scoring never fails.
    """
    x = np.zeros(URL_DIM)
    cat = category_of(url) if category_of else None
    if cat is None:
        cat = guess_category(url)
    if cat in _CATEGORY_POS:
        x[_CATEGORY_POS[cat]] = 1.0
    pop = float(distinct_session_count)
    x[9] = np.log1p(pop)
    x[10] = 1.0 / (1.0 + pop)
    x[11] = 1.0 if cat in _SENSITIVE else 0.0
    return x


class ColumnStandardizer(BaseEstimator, TransformerMixin):
    """Per-column z-scoring with statistics from a designated row subset.

    Zero-variance columns get scale 1, so fitted rows map to exactly 0
    there. Statistics are frozen at fit time for reuse at inference.
    """

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def fit(self, X, y=None, fit_rows: Sequence[int] | None = None):
        X = np.asarray(X, dtype=float)
        rows = X if fit_rows is None else X[np.asarray(fit_rows, dtype=np.int64)]
        if rows.shape[0] == 0:
            raise ValueError("fit requires at least one row")
        self.mean_ = rows.mean(axis=0)
        std = rows.std(axis=0)
        self.scale_ = np.where(std > self.eps, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.mean_) / self.scale_

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean_.copy(), self.scale_.copy()

    @classmethod
    def from_arrays(cls, mean, scale) -> "ColumnStandardizer":
        obj = cls()
        obj.mean_ = np.asarray(mean, dtype=float)
        obj.scale_ = np.asarray(scale, dtype=float)
        obj.n_features_in_ = obj.mean_.shape[0]
        return obj


@dataclass
class FeaturePack:
    """Raw (unstandardized) feature rows aligned with graph kind positions."""

    session_x: np.ndarray  # (n_sessions, SESSION_DIM)
    url_x: np.ndarray      # (n_urls, URL_DIM)

    def copy(self) -> "FeaturePack":
        return FeaturePack(self.session_x.copy(), self.url_x.copy())

    def append_session(self, row: np.ndarray) -> int:
        self.session_x = np.vstack([self.session_x, row[None, :]])
        return self.session_x.shape[0] - 1

    def append_url(self, row: np.ndarray) -> int:
        self.url_x = np.vstack([self.url_x, row[None, :]])
        return self.url_x.shape[0] - 1


def session_feature_matrix(sessions: Iterable[Session],
                           category_of: CategoryLookup | None = None) -> np.ndarray:
    rows = [extract_session_features(s, category_of) for s in sessions]
    return np.asarray(rows) if rows else np.zeros((0, SESSION_DIM))


def url_feature_matrix(g: BipartiteGraph,
                       category_of: CategoryLookup | None = None) -> np.ndarray:
    """URL rows in kind-position order; popularity = degree in this graph."""
    nodes = sorted(g.url_nodes(), key=g.kind_pos)
    rows = [extract_url_features(g.node_key(v), g.degree(v), category_of)
            for v in nodes]
    return np.asarray(rows) if rows else np.zeros((0, URL_DIM))


def feature_pack_for_graph(g: BipartiteGraph, sessions_by_id: dict[str, Session],
                           category_of: CategoryLookup | None = None) -> FeaturePack:
    """Build aligned raw feature rows for every node of ``g``."""
    nodes = sorted(g.session_nodes(), key=g.kind_pos)
    sx = [extract_session_features(sessions_by_id[g.node_key(v)], category_of)
          for v in nodes]
    session_x = np.asarray(sx) if sx else np.zeros((0, SESSION_DIM))
    return FeaturePack(session_x=session_x, url_x=url_feature_matrix(g, category_of))


@dataclass
class NormStats:
    """Frozen train-split standardization statistics for both node kinds."""

    session_mean: np.ndarray
    session_scale: np.ndarray
    url_mean: np.ndarray
    url_scale: np.ndarray

    def session_scaler(self) -> ColumnStandardizer:
        return ColumnStandardizer.from_arrays(self.session_mean, self.session_scale)

    def url_scaler(self) -> ColumnStandardizer:
        return ColumnStandardizer.from_arrays(self.url_mean, self.url_scale)

    def to_json(self) -> dict:
        return {"session_mean": self.session_mean.tolist(),
                "session_scale": self.session_scale.tolist(),
                "url_mean": self.url_mean.tolist(),
                "url_scale": self.url_scale.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NormStats":
        return cls(np.asarray(obj["session_mean"]), np.asarray(obj["session_scale"]),
                   np.asarray(obj["url_mean"]), np.asarray(obj["url_scale"]))


def fit_norm_stats(pack: FeaturePack, train_session_rows: Sequence[int]) -> NormStats:
    """Session stats from the training split only; URL stats over all URL
    nodes visible in the training graph."""
    s = ColumnStandardizer().fit(pack.session_x, fit_rows=train_session_rows)
    if pack.url_x.shape[0] == 0:
        u_mean, u_scale = np.zeros(URL_DIM), np.ones(URL_DIM)
    else:
        u_mean, u_scale = ColumnStandardizer().fit(pack.url_x).to_arrays()
    return NormStats(*s.to_arrays(), u_mean, u_scale)
