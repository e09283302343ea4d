"""Deterministic semi-synthetic traffic corpus: Zipf-popular URL catalog,
Markov-walk human sessions, and five injected bot archetypes.

Week 2 (when configured) introduces entirely new sessions, optional catalog
churn (new URLs), and optional behavioral drift so that cold-start
experiments have something to generalize across. Humans never visit trap
URLs; any trap visit marks the session's label source as trap evidence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigInvalid
from .logs import (Label, LabelSource, LogRecord, Method, Session,
                   UserAgentClass, make_session, record_to_json,
                   session_to_json)
from .util import write_jsonl

ARCHETYPES = ("scraper", "hoarder", "credential", "trap_hitter",
              "feature_normal")

DEFAULT_BOT_MIX = {"scraper": 0.35, "hoarder": 0.20, "credential": 0.15,
                   "trap_hitter": 0.10, "feature_normal": 0.20}

# Bot mix used for week-2 drift in the cold-start experiment: the easy,
# feature-loud archetypes recede and mimicry grows.
DRIFTED_BOT_MIX = {"scraper": 0.20, "hoarder": 0.15, "credential": 0.10,
                   "trap_hitter": 0.15, "feature_normal": 0.40}

WEEK_MS = 7 * 24 * 3600 * 1000
BASE_TS = 1_700_000_000_000

HUMAN_TRANSITIONS = {
    "home":          (("category_page", 0.45), ("search", 0.30),
                      ("product", 0.20), ("login", 0.05)),
    "category_page": (("product", 0.60), ("category_page", 0.15),
                      ("search", 0.15), ("home", 0.10)),
    "product":       (("product", 0.30), ("category_page", 0.25),
                      ("search", 0.18), ("cart", 0.15), ("api", 0.12)),
    "search":        (("product", 0.55), ("search", 0.25),
                      ("category_page", 0.15), ("home", 0.05)),
    "cart":          (("product", 0.40), ("login", 0.25), ("api", 0.20),
                      ("home", 0.15)),
    "login":         (("product", 0.40), ("api", 0.30), ("home", 0.30)),
    "api":           (("product", 0.60), ("api", 0.20), ("cart", 0.20)),
}
HUMAN_START = (("home", 0.70), ("search", 0.15), ("category_page", 0.10),
               ("product", 0.05))

_ASSET_EXTS = (".css", ".js", ".png")


@dataclass
class TrafficConfig:
    n_urls: int = 500
    n_human_sessions: int = 5000
    bot_fraction: float = 0.05
    zipf_exponent: float = 1.1
    week_count: int = 1
    new_url_fraction_week2: float = 0.0
    seed: int = 42
    bot_mix: dict = field(default_factory=lambda: dict(DEFAULT_BOT_MIX))
    week2_gap_scale: float = 1.0
    week2_bot_mix: dict | None = None
    rare_pool_size: int = 14

    def validate(self) -> "TrafficConfig":
        if self.n_urls < 20:
            raise ConfigInvalid("n_urls must be >= 20")
        if self.n_human_sessions < 1:
            raise ConfigInvalid("n_human_sessions must be >= 1")
        if not (0.0 < self.bot_fraction <= 0.5):
            raise ConfigInvalid("bot_fraction must be in (0, 0.5]")
        if self.zipf_exponent <= 0:
            raise ConfigInvalid("zipf_exponent must be > 0")
        if self.week_count < 1:
            raise ConfigInvalid("week_count must be >= 1")
        if not (0.0 <= self.new_url_fraction_week2 < 1.0):
            raise ConfigInvalid("new_url_fraction_week2 must be in [0, 1)")
        for mix in filter(None, (self.bot_mix, self.week2_bot_mix)):
            if set(mix) != set(ARCHETYPES):
                raise ConfigInvalid(f"bot mix must cover {ARCHETYPES}")
            if abs(sum(mix.values()) - 1.0) > 1e-9:
                raise ConfigInvalid("bot mix weights must sum to 1")
        return self


@dataclass(frozen=True)
class CatalogEntry:
    url: str
    category: str
    base_popularity: float
    week: int = 1  # first week this URL exists
    stale: bool = False  # delisted page: no inbound links, so organic
    #                      navigation never reaches it; automation still can


class UrlCatalog:
    """Rank-ordered URL entries with Zipf base popularity."""

    def __init__(self, entries: Sequence[CatalogEntry]):
        self.entries = list(entries)
        self._by_url = {e.url: e for e in self.entries}
        homes = [e for e in self.entries if e.category == "home"]
        traps = [e for e in self.entries if e.category == "trap"]
        if len(homes) != 1:
            raise ConfigInvalid("catalog must contain exactly one home entry")
        if not traps:
            raise ConfigInvalid("catalog must contain at least one trap entry")

    def category_of(self, url: str) -> str | None:
        e = self._by_url.get(url)
        return e.category if e else None

    def week1_category_of(self, url: str) -> str | None:
        """Catalog view available at week-1 training time."""
        e = self._by_url.get(url)
        return e.category if e and e.week == 1 else None

    def by_category(self, category: str, max_week: int = 1) -> list[CatalogEntry]:
        return [e for e in self.entries
                if e.category == category and e.week <= max_week]

    def categories(self) -> dict[str, str]:
        return {e.url: e.category for e in self.entries}

    def rare_product_pool(self, size: int, week: int = 1,
                          new_only: bool = False) -> list[str]:
        """Least-popular (preferring stale) products; the coordination pool
        reused across mimicry-bot sessions."""
        products = [e for e in self.entries if e.category == "product"
                    and (e.week == 2 if new_only else e.week <= week)]
        products.sort(key=lambda e: (not e.stale, e.base_popularity, e.url))
        return [e.url for e in products[:size]]


def _category_counts(n_urls: int) -> dict[str, int]:
    counts = {
        "home": 1, "search": 1, "cart": 1, "login": 1,
        "trap": max(1, round(0.01 * n_urls)),
        "api": max(1, round(0.04 * n_urls)),
        "static_asset": max(2, round(0.12 * n_urls)),
        "category_page": max(1, round(0.06 * n_urls)),
    }
    used = sum(counts.values())
    if used >= n_urls:
        raise ConfigInvalid(f"n_urls={n_urls} too small for category quota")
    counts["product"] = n_urls - used
    return counts


def _make_urls(category: str, count: int, rng: np.random.Generator,
               tag: str = "") -> list[str]:
    if category == "home":
        return ["/"]
    if category == "search":
        return ["/search"]
    if category == "cart":
        return ["/cart"]
    if category == "login":
        return ["/login"]
    words = ("alpha", "bravo", "cedar", "delta", "ember", "flint", "gale",
             "harbor", "iris", "juniper", "krill", "lumen", "maple", "noble",
             "opal", "pine", "quartz", "reef", "sable", "tide")
    out = []
    for i in range(count):
        w = words[int(rng.integers(0, len(words)))]
        if category == "product":
            out.append(f"/p/{tag}{w}-{i:04d}")
        elif category == "category_page":
            out.append(f"/c/{tag}{w}-{i:03d}")
        elif category == "api":
            out.append(f"/api/v1/{tag}{w}-{i:03d}")
        elif category == "static_asset":
            out.append(f"/static/{tag}{w}-{i:03d}{_ASSET_EXTS[i % len(_ASSET_EXTS)]}")
        elif category == "trap":
            out.append(f"/.well-known/{tag}honeypot-{w}-{i:03d}")
        else:
            raise ValueError(category)
    return out


def generate_catalog(cfg: TrafficConfig) -> UrlCatalog:
    """Deterministic catalog; popularity is rank**(-zipf_exponent).

    Rank order roughly tracks expected organic traffic: home, static
    assets, the search/cart/login singletons, category pages, API
    endpoints, products, and finally traps (which humans never reach).
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101)))
    counts = _category_counts(cfg.n_urls)
    ordered: list[tuple[str, str]] = [("/", "home")]
    for cat in ("static_asset",):
        ordered += [(u, cat) for u in _make_urls(cat, counts[cat], rng)]
    ordered += [("/search", "search"), ("/cart", "cart"), ("/login", "login")]
    for cat in ("category_page", "api", "product", "trap"):
        ordered += [(u, cat) for u in _make_urls(cat, counts[cat], rng)]
    # the deepest-ranked products are delisted ("stale"): still reachable by
    # direct URL, invisible to organic navigation
    n_stale = max(4, round(0.04 * cfg.n_urls))
    product_ranks = [r for r, (_, cat) in enumerate(ordered) if cat == "product"]
    stale_ranks = set(product_ranks[-n_stale:])
    entries = [CatalogEntry(url=url, category=cat,
                            base_popularity=float((rank + 1) ** -cfg.zipf_exponent),
                            stale=rank in stale_ranks)
               for rank, (url, cat) in enumerate(ordered)]
    catalog = UrlCatalog(entries)
    if cfg.week_count >= 2 and cfg.new_url_fraction_week2 > 0.0:
        _extend_for_week2(catalog, cfg, rng)
    return catalog


def _extend_for_week2(catalog: UrlCatalog, cfg: TrafficConfig,
                      rng: np.random.Generator) -> None:
    n = len(catalog.entries)
    n_new_products = max(1, round(0.12 * cfg.n_urls))
    n_new_categories = max(1, round(0.02 * cfg.n_urls))
    new = [(u, "product") for u in _make_urls("product", n_new_products, rng, tag="w2-")]
    new += [(u, "category_page")
            for u in _make_urls("category_page", n_new_categories, rng, tag="w2-")]
    for i, (url, cat) in enumerate(new):
        pop = float((n + i + 1) ** -cfg.zipf_exponent)
        entry = CatalogEntry(url=url, category=cat, base_popularity=pop, week=2)
        catalog.entries.append(entry)
        catalog._by_url[url] = entry


class _CatalogSampler:
    """Popularity-weighted URL choice with optional week-2 redirection."""

    def __init__(self, catalog: UrlCatalog, week: int, new_frac: float):
        self.week = week
        self.new_frac = new_frac if week >= 2 else 0.0
        self._old: dict[str, tuple[list[str], np.ndarray]] = {}
        self._new: dict[str, tuple[list[str], np.ndarray]] = {}
        self._all_new: list[str] = []
        for cat in ("home", "category_page", "product", "search", "cart",
                    "login", "api", "static_asset", "trap"):
            # organic navigation never reaches stale (delisted) pages
            old = [e for e in catalog.by_category(cat, max_week=1)
                   if not e.stale]
            self._old[cat] = ([e.url for e in old],
                              np.cumsum([e.base_popularity for e in old]))
            if week >= 2:
                newer = [e for e in catalog.entries
                         if e.category == cat and e.week == 2 and not e.stale]
                if newer:
                    self._new[cat] = ([e.url for e in newer],
                                      np.cumsum([e.base_popularity for e in newer]))
                    self._all_new.extend(e.url for e in newer)
        self._crawlable = [e.url for e in catalog.entries
                           if e.category == "product" and
                           (e.week <= week if week >= 2 else e.week == 1)]

    def _draw(self, table, rng) -> str:
        urls, cumw = table
        r = rng.random() * cumw[-1]
        return urls[int(np.searchsorted(cumw, r, side="right"))]

    def page(self, category: str, rng: np.random.Generator) -> str:
        """One page visit; with prob new_frac it targets a week-2 URL."""
        if self.new_frac > 0.0 and rng.random() < self.new_frac:
            if category in self._new:
                return self._draw(self._new[category], rng)
            if self._all_new:
                return self._all_new[int(rng.integers(0, len(self._all_new)))]
        return self._draw(self._old[category], rng)

    def asset(self, rng: np.random.Generator) -> str:
        return self._draw(self._old["static_asset"], rng)

    def products(self, include_new: bool) -> list[str]:
        urls = list(self._old["product"][0])
        if include_new and "product" in self._new:
            urls += self._new["product"][0]
        return urls

    def traps(self) -> list[str]:
        return list(self._old["trap"][0])


def _weighted(pairs, rng: np.random.Generator) -> str:
    r = rng.random()
    acc = 0.0
    for value, w in pairs:
        acc += w
        if r < acc:
            return value
    return pairs[-1][0]


def _lognormal_gap_ms(rng, median_s: float, sigma: float,
                      lo_s: float = 0.05, hi_s: float = 1500.0) -> int:
    gap = float(np.exp(np.log(median_s) + sigma * rng.standard_normal()))
    return int(1000 * min(max(gap, lo_s), hi_s))


def _truncated_geometric(rng, p: float, lo: int, hi: int) -> int:
    for _ in range(1000):
        k = int(rng.geometric(p))
        if lo <= k <= hi:
            return k
    return lo


def _ua(rng, pairs) -> UserAgentClass:
    return UserAgentClass(_weighted(pairs, rng))


def _emit(records, ts, ck, url, ua, method=Method.GET, status=200, ref=None):
    records.append(LogRecord(timestamp=ts, client_key=ck, url=url,
                             method=method, status=status, referrer=ref,
                             user_agent_class=ua))


MAX_SESSION_RECORDS = 480  # stay clear of the 500-request outlier cut


def _attach_assets(records, rng, sampler, ts, ck, ua, p_asset: float,
                   force: bool = False):
    if not force and rng.random() >= p_asset:
        return
    for _ in range(int(rng.integers(2, 6))):
        if len(records) >= MAX_SESSION_RECORDS:
            return
        _emit(records, ts + int(rng.integers(40, 400)), ck,
              sampler.asset(rng), ua)


def generate_human_session(catalog: UrlCatalog, rng: np.random.Generator, *,
                           client_key: str = "h0", start_ms: int = BASE_TS,
                           sampler: _CatalogSampler | None = None,
                           gap_scale: float = 1.0) -> Session:
    """Markov walk over page categories with popularity-biased URL choice.

    Geometric page count (mean 8, floored at 2 so hygiene filters keep the
    session), lognormal inter-request gaps (median 5 s), static assets
    attached to most page views. Never visits trap URLs.
    """
    sampler = sampler or _CatalogSampler(catalog, week=1, new_frac=0.0)
    n_pages = _truncated_geometric(rng, 1.0 / 8.0, 2, 150)
    ua = _ua(rng, (("browser", 0.92), ("unknown", 0.06), ("scripted", 0.02)))
    records: list[LogRecord] = []
    ts = start_ms
    category = _weighted(HUMAN_START, rng)
    prev_url = None
    for i in range(n_pages):
        if len(records) >= MAX_SESSION_RECORDS:
            break
        url = sampler.page(category, rng)
        method = Method.POST if category in ("login", "cart") and rng.random() < 0.5 \
            else Method.GET
        _emit(records, ts, client_key, url, ua, method=method, ref=prev_url)
        _attach_assets(records, rng, sampler, ts, client_key, ua, 0.9)
        prev_url = url
        category = _weighted(HUMAN_TRANSITIONS[category], rng)
        if i < n_pages - 1:
            ts += _lognormal_gap_ms(rng, 5.0 * gap_scale, 1.0)
    return make_session(client_key, records, label=Label.HUMAN,
                        label_source=LabelSource.BACKGROUND)


def generate_bot_session(catalog: UrlCatalog, archetype: str,
                         rng: np.random.Generator, *,
                         client_key: str = "b0", start_ms: int = BASE_TS,
                         sampler: _CatalogSampler | None = None,
                         rare_pool: Sequence[str] = (),
                         gap_scale: float = 1.0) -> Session:
    """One bot session of the given archetype, labeled by trap evidence.

    scraper: broad uniform product coverage at high rate. hoarder: repeated
    product+cart loops. credential: login/api concentration. trap_hitter:
    human-like walk that touches at least one trap. feature_normal:
    human-like volume/timing but URLs drawn from the shared rare-page pool.
    """
    sampler = sampler or _CatalogSampler(catalog, week=1, new_frac=0.0)
    records: list[LogRecord] = []
    ck, ts = client_key, start_ms

    if archetype == "scraper":
        ua = _ua(rng, (("scripted", 0.6), ("browser", 0.4)))
        n = 30 + _truncated_geometric(rng, 1.0 / 60.0, 1, 290)
        products = sampler.products(include_new=True)
        for i in range(n):
            url = products[int(rng.integers(0, len(products)))]
            _emit(records, ts, ck, url, ua)
            _attach_assets(records, rng, sampler, ts, ck, ua, 0.05)
            if i < n - 1:
                ts += max(30, int(1000 * rng.exponential(0.4)))

    elif archetype == "hoarder":
        ua = _ua(rng, (("headless", 0.5), ("browser", 0.5)))
        targets = [sampler.page("product", rng)
                   for _ in range(int(rng.integers(1, 4)))]
        loops = int(rng.integers(5, 26))
        for i in range(loops):
            target = targets[i % len(targets)]
            _emit(records, ts, ck, target, ua)
            _attach_assets(records, rng, sampler, ts, ck, ua, 0.3)
            ts += _lognormal_gap_ms(rng, 1.5, 0.6)
            _emit(records, ts, ck, "/cart", ua,
                  method=Method.POST, status=200)
            if rng.random() < 0.3:
                ts += _lognormal_gap_ms(rng, 1.5, 0.6)
                _emit(records, ts, ck, sampler.page("api", rng), ua,
                      method=Method.POST)
            if i < loops - 1:
                ts += _lognormal_gap_ms(rng, 1.5, 0.6)

    elif archetype == "credential":
        ua = _ua(rng, (("scripted", 0.7), ("browser", 0.3)))
        n = int(rng.integers(8, 31))
        for i in range(n):
            r = rng.random()
            if r < 0.6:
                _emit(records, ts, ck, "/login", ua, method=Method.POST,
                      status=401 if rng.random() < 0.8 else 302)
            elif r < 0.9:
                _emit(records, ts, ck, sampler.page("api", rng), ua,
                      method=Method.POST)
            else:
                _emit(records, ts, ck, sampler.page("product", rng), ua)
            if i < n - 1:
                ts += max(30, int(1000 * rng.exponential(0.8)))

    elif archetype == "trap_hitter":
        base = generate_human_session(catalog, rng, client_key=ck,
                                      start_ms=ts, sampler=sampler,
                                      gap_scale=gap_scale)
        recs = list(base.records)
        traps = sampler.traps()
        ua = recs[0].user_agent_class
        for _ in range(int(rng.integers(1, 3))):
            anchor = recs[int(rng.integers(0, len(recs)))]
            trap = traps[int(rng.integers(0, len(traps)))]
            _emit(recs, anchor.timestamp + int(rng.integers(200, 2000)),
                  ck, trap, ua)
        records = recs

    elif archetype == "feature_normal":
        if not rare_pool:
            rare_pool = catalog.rare_product_pool(14)
        # Mimic human fingerprints: same UA mix, gap distribution restricted
        # to its central 80%, and generic navigation cover (home/search/
        # category pages) so aggregate coverage looks organic. The tell is
        # only relational: the product pages come from a pool shared across
        # coordinated sessions.
        ua = _ua(rng, (("browser", 0.92), ("unknown", 0.06), ("scripted", 0.02)))
        n_pages = _truncated_geometric(rng, 1.0 / 8.0, 4, 12)
        k = int(rng.integers(4, min(10, len(rare_pool) + 1)))
        chosen = [rare_pool[int(i)] for i in
                  rng.choice(len(rare_pool), size=k, replace=False)]
        prev = None
        n_pool = 0
        for i in range(n_pages):
            remaining = n_pages - i
            must_pool = (2 - n_pool) >= remaining
            if i == 0 and not must_pool:
                url = "/" if rng.random() < 0.7 else "/search"
            elif not must_pool and rng.random() < 0.20:
                url = _weighted((
                    (sampler.page("category_page", rng), 0.50),
                    (sampler.page("api", rng), 0.18),
                    ("/search", 0.12), ("/", 0.08),
                    ("/cart", 0.07), ("/login", 0.05)), rng)
            else:
                url = chosen[int(rng.integers(0, len(chosen)))]
                n_pool += 1
            _emit(records, ts, ck, url, ua, ref=prev)
            _attach_assets(records, rng, sampler, ts, ck, ua, 0.9,
                           force=(i == 0))
            prev = url
            if i < n_pages - 1:
                z = rng.standard_normal()
                while abs(z) > 1.2816:
                    z = rng.standard_normal()
                ts += int(1000 * 5.0 * gap_scale * np.exp(z))
    else:
        raise ValueError(f"unknown archetype {archetype!r}")

    visited_trap = any(
        catalog.category_of(r.url) == "trap" for r in records)
    return make_session(
        ck, records, label=Label.BOT,
        label_source=LabelSource.TRAP_URL if visited_trap
        else LabelSource.INJECTED)


def generate_corpus(cfg: TrafficConfig) -> tuple[list[list[Session]], UrlCatalog]:
    """Per-week session lists plus the catalog; deterministic per seed.

    Total bot share tracks ``bot_fraction`` exactly up to rounding; week 2
    contains entirely new sessions and (when configured) targets week-2-only
    URLs for roughly ``new_url_fraction_week2`` of its page visits.
    """
    cfg.validate()
    catalog = generate_catalog(cfg)
    weeks: list[list[Session]] = []
    for week in range(1, cfg.week_count + 1):
        weeks.append(_generate_week(cfg, catalog, week))
    return weeks, catalog


def _generate_week(cfg: TrafficConfig, catalog: UrlCatalog,
                   week: int) -> list[Session]:
    drift = week >= 2
    new_frac = cfg.new_url_fraction_week2 if drift else 0.0
    gap_scale = cfg.week2_gap_scale if drift else 1.0
    mix = (cfg.week2_bot_mix or cfg.bot_mix) if drift else cfg.bot_mix
    sampler = _CatalogSampler(catalog, week=week, new_frac=new_frac)
    pool = catalog.rare_product_pool(cfg.rare_pool_size, week=week,
                                     new_only=drift and new_frac > 0.0)
    if not pool:
        pool = catalog.rare_product_pool(cfg.rare_pool_size)

    n_h = cfg.n_human_sessions
    n_b = round(n_h * cfg.bot_fraction / (1.0 - cfg.bot_fraction))
    week_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, week, 7)))
    week_start = BASE_TS + (week - 1) * WEEK_MS
    span = WEEK_MS - 4 * 3600 * 1000  # leave room for long sessions
    starts_h = np.sort(week_rng.integers(0, span, size=n_h))
    starts_b = np.sort(week_rng.integers(0, span, size=n_b))
    mix_names = list(ARCHETYPES)
    mix_w = np.array([mix[a] for a in mix_names])
    arch_draws = week_rng.choice(len(mix_names), size=n_b, p=mix_w / mix_w.sum())

    sessions: list[Session] = []
    for i in range(n_h):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, week, 0, i)))
        sessions.append(generate_human_session(
            catalog, rng, client_key=f"w{week}h{i:06d}",
            start_ms=int(week_start + starts_h[i]), sampler=sampler,
            gap_scale=gap_scale))
    for j in range(n_b):
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, week, 1, j)))
        sessions.append(generate_bot_session(
            catalog, mix_names[int(arch_draws[j])], rng,
            client_key=f"w{week}b{j:06d}",
            start_ms=int(week_start + starts_b[j]), sampler=sampler,
            rare_pool=pool, gap_scale=gap_scale))
    sessions.sort(key=lambda s: (s.start, s.session_id))
    return sessions


def write_corpus(weeks: list[list[Session]], catalog: UrlCatalog,
                 out_dir: str | Path) -> dict[str, list[str]]:
    """Emit per-week JSON Lines logs plus labels sidecars and the catalog."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, list[str]] = {"logs": [], "labels": []}
    for w, sessions in enumerate(weeks, start=1):
        records = [r for s in sessions for r in s.records]
        records.sort(key=lambda r: (r.timestamp, r.client_key, r.url))
        log_path = out / f"log-week{w}.jsonl"
        write_jsonl(log_path, (record_to_json(r) for r in records))
        label_path = out / f"labels-week{w}.jsonl"
        write_jsonl(label_path, ({"sid": s.session_id, "label": s.label.value,
                                  "source": s.label_source.value}
                                 for s in sessions))
        paths["logs"].append(str(log_path))
        paths["labels"].append(str(label_path))
    catalog_path = out / "catalog.jsonl"
    write_jsonl(catalog_path, ({"url": e.url, "category": e.category,
                                "base_popularity": e.base_popularity,
                                "week": e.week} for e in catalog.entries))
    paths["catalog"] = [str(catalog_path)]
    return paths


def load_catalog(path: str | Path) -> UrlCatalog:
    from .util import read_jsonl
    entries = [CatalogEntry(url=o["url"], category=o["category"],
                            base_popularity=o["base_popularity"],
                            week=o.get("week", 1))
               for o in read_jsonl(path)]
    return UrlCatalog(entries)
