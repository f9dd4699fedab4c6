"""Small shared helpers: stable hashing, exact rounding, atomic file writes."""
from __future__ import annotations

import hashlib
import json
import os
from decimal import ROUND_HALF_UP, Decimal, localcontext
from pathlib import Path


def stable_digest(*parts: object) -> bytes:
    """Deterministic digest of the given parts, independent of process and platform."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        raw = repr(part).encode("utf-8")
        h.update(len(raw).to_bytes(8, "big"))
        h.update(raw)
    return h.digest()


def stable_bits(*parts: object) -> int:
    """64-bit unsigned integer derived from stable_digest."""
    return int.from_bytes(stable_digest(*parts)[:8], "big")


def stable_hex(*parts: object) -> str:
    """Hex form of stable_digest, handy for ids."""
    return stable_digest(*parts).hex()


def unit_float(*parts: object) -> float:
    """Deterministic float in [0, 1) derived from the parts."""
    return stable_bits(*parts) / 2**64


def round_half_up(value: float, places: int = 2) -> float:
    """Round with ties away from zero (0.125 -> 0.13), not banker's rounding."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def ratio_round(numerator: int, denominator: int, places: int = 2) -> float:
    """Exact integer ratio rounded half-up to `places` decimals."""
    if denominator == 0:
        raise ZeroDivisionError("ratio of an empty denominator")
    with localcontext() as ctx:
        ctx.prec = 50
        value = Decimal(numerator) / Decimal(denominator)
    quantum = Decimal(1).scaleb(-places)
    return float(value.quantize(quantum, rounding=ROUND_HALF_UP))


def percent(numerator: int, denominator: int, places: int = 2) -> float:
    """Exact percentage of two integers, rounded half-up to `places` decimals."""
    return ratio_round(numerator * 100, denominator, places)


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to a sibling temp file, fsync, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_json(path: Path, obj: object) -> None:
    """Atomically write an object as stable, sorted-key JSON."""
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def json_line(obj: object) -> str:
    """One compact, key-stable JSONL line (no trailing newline)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
