"""Small shared helpers: JSONL io, seed derivation, key=value configs."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def write_jsonl(path: str | Path, objects: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(master_seed: int, label: str) -> int:
    """Deterministic per-component seed from a master seed and a label."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse flat key=value config text; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text(encoding="utf-8"))


def coerce_kv(raw: dict[str, str], defaults: dict[str, Any]) -> dict[str, Any]:
    """Coerce string config values to the types of the matching defaults."""
    out = dict(defaults)
    for key, value in raw.items():
        if key not in defaults:
            raise ValueError(f"unknown config key: {key!r}")
        ref = defaults[key]
        if isinstance(ref, bool):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(ref, int):
            out[key] = int(value)
        elif isinstance(ref, float):
            out[key] = float(value)
        else:
            out[key] = value
    return out
