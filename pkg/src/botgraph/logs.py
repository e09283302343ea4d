"""Server-log parsing, URL canonicalization, and sessionization.

Input is either JSON Lines (fields: ts, ck, url, m, st, ref, uac) or the
classic combined log format. Output is a stream of :class:`LogRecord` grouped
into :class:`Session` objects by client key and inactivity gap.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Iterable, Iterator
from urllib.parse import unquote, urlsplit

from .errors import MalformedLine, MissingField

DEFAULT_INACTIVITY_WINDOW_MS = 30 * 60 * 1000
DEFAULT_MIN_REQUESTS = 2
DEFAULT_MAX_REQUESTS = 500


class Method(str, Enum):
    GET = "GET"
    POST = "POST"
    PUT = "PUT"
    DELETE = "DELETE"
    HEAD = "HEAD"
    OPTIONS = "OPTIONS"
    PATCH = "PATCH"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, raw: str) -> "Method":
        try:
            return cls(raw.upper())
        except ValueError:
            return cls.OTHER


class UserAgentClass(str, Enum):
    BROWSER = "browser"
    SCRIPTED = "scripted"
    HEADLESS = "headless"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, raw: str | None) -> "UserAgentClass":
        if not raw:
            return cls.UNKNOWN
        try:
            return cls(raw.lower())
        except ValueError:
            return cls.UNKNOWN


class Label(str, Enum):
    HUMAN = "human"
    BOT = "bot"


class LabelSource(str, Enum):
    TRAP_URL = "trap_url"
    INJECTED = "injected"
    BACKGROUND = "background"


@dataclass(frozen=True, slots=True)
class LogRecord:
    """One canonicalized request line."""

    timestamp: int  # epoch milliseconds
    client_key: str
    url: str
    method: Method = Method.GET
    status: int = 200
    referrer: str | None = None
    user_agent_class: UserAgentClass = UserAgentClass.UNKNOWN

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if not self.client_key:
            raise ValueError("client_key must be non-empty")
        if not self.url.startswith("/"):
            raise ValueError("url must start with '/'")


@dataclass(frozen=True, slots=True)
class Session:
    """A windowed group of requests from one client key."""

    session_id: str
    client_key: str
    records: tuple[LogRecord, ...]
    start: int
    end: int
    label: Label | None = None
    label_source: LabelSource | None = None

    def __post_init__(self):
        if not self.records:
            raise ValueError("session must contain at least one record")
        if self.end < self.start:
            raise ValueError("end must be >= start")

    @property
    def duration_ms(self) -> int:
        return self.end - self.start

    @property
    def urls(self) -> tuple[str, ...]:
        return tuple(r.url for r in self.records)


def make_session_id(client_key: str, start_ms: int) -> str:
    return f"{client_key}:{start_ms}"


def make_session(client_key: str, records: Iterable[LogRecord],
                 label: Label | None = None,
                 label_source: LabelSource | None = None) -> Session:
    """Build a session with start/end derived from the (sorted) records."""
    recs = tuple(sorted(records, key=lambda r: r.timestamp))
    return Session(
        session_id=make_session_id(client_key, recs[0].timestamp),
        client_key=client_key,
        records=recs,
        start=recs[0].timestamp,
        end=recs[-1].timestamp,
        label=label,
        label_source=label_source,
    )


def canonicalize_url(raw: str) -> str:
    """Strip query string and fragment, percent-decode, then lowercase."""
    if not raw:
        raise MissingField("empty url")
    parts = urlsplit(raw)
    path = unquote(parts.path).lower()
    if not path:
        path = "/"
    if not path.startswith("/"):
        raise MalformedLine(f"url path does not start with '/': {raw!r}")
    return path


def hash_client_key(*parts: str) -> str:
    """Anonymized client key: short hex digest over host + user agent."""
    h = hashlib.sha256("|".join(parts).encode("utf-8", "replace"))
    return h.hexdigest()[:16]


def classify_user_agent(ua: str | None) -> UserAgentClass:
    """Coarse UA bucket; conservative, substring based."""
    if not ua or ua == "-":
        return UserAgentClass.UNKNOWN
    low = ua.lower()
    if "headless" in low or "phantomjs" in low or "puppeteer" in low:
        return UserAgentClass.HEADLESS
    for marker in ("curl", "wget", "python", "scrapy", "bot", "spider",
                   "crawler", "httpclient", "libwww", "java/"):
        if marker in low:
            return UserAgentClass.SCRIPTED
    return UserAgentClass.BROWSER


_COMBINED_RE = re.compile(
    r'^(?P<host>\S+) (?P<ident>\S+) (?P<user>\S+) \[(?P<time>[^\]]+)\] '
    r'"(?P<request>[^"]*)" (?P<status>\d{3}) (?P<size>\S+)'
    r'(?: "(?P<referrer>[^"]*)" "(?P<ua>[^"]*)")?\s*$'
)

_JSON_FIELDS = ("ts", "ck", "url")


def parse_log_line(line: str, format: str = "json-lines") -> LogRecord:
    """Parse one raw log line into a canonicalized record.

    Raises MalformedLine when the line does not parse at all and MissingField
    when a required field (timestamp, url, client key) is absent.
    """
    fmt = format.replace("_", "-")
    if fmt in ("json-lines", "json"):
        return _parse_json_line(line)
    if fmt in ("combined-log", "combined"):
        return _parse_combined_line(line)
    raise ValueError(f"unknown log format: {format!r}")


def _parse_json_line(line: str) -> LogRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"bad json: {line[:80]!r}") from exc
    if not isinstance(obj, dict):
        raise MalformedLine(f"expected object: {line[:80]!r}")
    return record_from_json(obj)


def record_from_json(obj: dict) -> LogRecord:
    """Build a record from the JSON Lines schema (ts/ck/url/m/st/ref/uac)."""
    for field in _JSON_FIELDS:
        if obj.get(field) in (None, ""):
            raise MissingField(f"missing field {field!r}")
    try:
        ts = int(obj["ts"])
        record = LogRecord(
            timestamp=ts,
            client_key=str(obj["ck"]),
            url=canonicalize_url(str(obj["url"])),
            method=Method.parse(str(obj.get("m", "GET"))),
            status=int(obj.get("st", 200)),
            referrer=canonicalize_url(obj["ref"]) if obj.get("ref") else None,
            user_agent_class=UserAgentClass.parse(obj.get("uac")),
        )
    except MalformedLine:
        raise
    except (TypeError, ValueError) as exc:
        raise MalformedLine(str(exc)) from None
    return record


def record_to_json(r: LogRecord) -> dict:
    obj = {"ts": r.timestamp, "ck": r.client_key, "url": r.url,
           "m": r.method.value, "st": r.status}
    if r.referrer is not None:
        obj["ref"] = r.referrer
    if r.user_agent_class is not UserAgentClass.UNKNOWN:
        obj["uac"] = r.user_agent_class.value
    return obj


def _parse_combined_line(line: str) -> LogRecord:
    m = _COMBINED_RE.match(line)
    if m is None:
        raise MalformedLine(f"not combined log format: {line[:80]!r}")
    request = m.group("request").split()
    if len(request) < 2:
        raise MissingField(f"unparseable request field: {m.group('request')!r}")
    try:
        dt = datetime.strptime(m.group("time"), "%d/%b/%Y:%H:%M:%S %z")
    except ValueError as exc:
        raise MissingField(f"bad timestamp: {m.group('time')!r}") from exc
    ua = m.group("ua")
    referrer = m.group("referrer")
    if referrer in (None, "-", ""):
        ref = None
    else:
        try:
            ref = canonicalize_url(urlsplit(referrer).path or "/")
        except MalformedLine:
            ref = None
    return LogRecord(
        timestamp=int(dt.timestamp() * 1000),
        client_key=hash_client_key(m.group("host"), ua or "-"),
        url=canonicalize_url(request[1]),
        method=Method.parse(request[0]),
        status=int(m.group("status")),
        referrer=ref,
        user_agent_class=classify_user_agent(ua),
    )


@dataclass
class ParseStats:
    parsed: int = 0
    malformed: int = 0
    missing_field: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.missing_field


def parse_log_lines(lines: Iterable[str], format: str = "json-lines",
                    stats: ParseStats | None = None) -> Iterator[LogRecord]:
    """Parse lines, skipping (and counting) malformed ones; never fatal."""
    stats = stats if stats is not None else ParseStats()
    for line in lines:
        if not line.strip():
            continue
        try:
            rec = parse_log_line(line, format)
        except MissingField:
            stats.missing_field += 1
            continue
        except MalformedLine:
            stats.malformed += 1
            continue
        stats.parsed += 1
        yield rec


def sessionize(records: Iterable[LogRecord],
               inactivity_window_ms: int = DEFAULT_INACTIVITY_WINDOW_MS,
               min_requests: int = DEFAULT_MIN_REQUESTS) -> list[Session]:
    """Group records into sessions per client key.

    Records may arrive in any order; sorting is internal. A gap strictly
    greater than the inactivity window starts a new session. Sessions with
    fewer than ``min_requests`` records are dropped. Output is sorted by
    session start time.
    """
    if inactivity_window_ms <= 0:
        raise ValueError("inactivity_window_ms must be > 0")
    if min_requests < 1:
        raise ValueError("min_requests must be >= 1")

    by_client: dict[str, list[LogRecord]] = {}
    for rec in records:
        by_client.setdefault(rec.client_key, []).append(rec)

    sessions: list[Session] = []
    for client_key in sorted(by_client):
        recs = sorted(by_client[client_key], key=lambda r: (r.timestamp, r.url))
        chunk: list[LogRecord] = []
        for rec in recs:
            if chunk and rec.timestamp - chunk[-1].timestamp > inactivity_window_ms:
                if len(chunk) >= min_requests:
                    sessions.append(make_session(client_key, chunk))
                chunk = []
            chunk.append(rec)
        if len(chunk) >= min_requests:
            sessions.append(make_session(client_key, chunk))

    sessions.sort(key=lambda s: (s.start, s.session_id))
    return sessions


def truncate_outliers(sessions: Iterable[Session],
                      max_requests: int = DEFAULT_MAX_REQUESTS) -> list[Session]:
    """Keep only the first ``max_requests`` records of oversized sessions."""
    if max_requests < 1:
        raise ValueError("max_requests must be >= 1")
    out = []
    for s in sessions:
        if len(s.records) <= max_requests:
            out.append(s)
        else:
            kept = s.records[:max_requests]
            out.append(replace(s, records=kept, end=kept[-1].timestamp))
    return out


def session_to_json(s: Session) -> dict:
    obj = {
        "sid": s.session_id,
        "ck": s.client_key,
        "records": [record_to_json(r) for r in s.records],
    }
    if s.label is not None:
        obj["label"] = s.label.value
    if s.label_source is not None:
        obj["source"] = s.label_source.value
    return obj


def session_from_json(obj: dict) -> Session:
    recs = [record_from_json(r) for r in obj["records"]]
    label = Label(obj["label"]) if obj.get("label") else None
    source = LabelSource(obj["source"]) if obj.get("source") else None
    return make_session(obj["ck"], recs, label=label, label_source=source)
