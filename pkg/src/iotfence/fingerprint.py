"""Device fingerprints built from setup-phase traffic.

A fingerprint F is the ordered sequence of per-packet feature vectors with
consecutive duplicates collapsed.  Its fixed-width form F' keeps the first
12 globally unique vectors, concatenates their 23 values and zero-pads to
exactly 276 numbers, which is what the classifiers consume.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CorruptFile, EmptyInput, EmptySession, SchemaMismatch
from .ingest import FEATURE_NAMES, PacketFeatures, TimedFeatures

FIXED_PACKETS = 12
VECTOR_LEN = len(FEATURE_NAMES)
FIXED_LEN = FIXED_PACKETS * VECTOR_LEN  # 276

DB_SCHEMA = "iotfence-fingerprints/1"


@dataclass(frozen=True)
class SetupSessionConfig:
    """Knobs for cutting the setup phase out of a capture.

    The setup window ends at the first of: an idle gap of idle_timeout
    seconds, the packet rate over the trailing rate_window falling below
    rate_drop_factor times the session's peak rate, or max_packets packets.
    """

    idle_timeout: float = 30.0
    rate_window: float = 10.0
    rate_drop_factor: float = 0.1
    max_packets: int = 500

    def __post_init__(self):
        if self.idle_timeout <= 0 or self.rate_window <= 0:
            raise ValueError("idle_timeout and rate_window must be positive")
        if not 0 < self.rate_drop_factor < 1:
            raise ValueError("rate_drop_factor must be in (0, 1)")
        if self.max_packets < FIXED_PACKETS:
            raise ValueError(f"max_packets must be at least {FIXED_PACKETS}")


def segment_setup(stream: Iterable[TimedFeatures],
                  config: SetupSessionConfig | None = None) -> list[PacketFeatures]:
    """Return the setup-phase prefix of a timestamped packet stream.

    Timestamps must be non-decreasing.  Raises EmptySession when the stream
    is empty or the very first packet already violates the config.
    """
    cfg = config or SetupSessionConfig()
    taken: list[PacketFeatures] = []
    window: deque[float] = deque()
    peak_rate = 0.0
    last_ts: float | None = None

    for ts, feats in stream:
        if last_ts is not None:
            if ts < last_ts:
                raise ValueError("timestamps must be non-decreasing")
            if ts - last_ts >= cfg.idle_timeout:
                break
        while window and ts - window[0] > cfg.rate_window:
            window.popleft()
        window.append(ts)
        rate = len(window) / cfg.rate_window
        # a drop is judged against the peak of the traffic seen so far;
        # the packet that reveals the drop belongs to the steady phase
        if peak_rate > 0 and rate < cfg.rate_drop_factor * peak_rate:
            break
        peak_rate = max(peak_rate, rate)
        taken.append(feats)
        last_ts = ts
        if len(taken) >= cfg.max_packets:
            break

    if not taken:
        raise EmptySession("no packets in setup phase")
    return taken


@dataclass(frozen=True)
class Fingerprint:
    """Ordered feature vectors of one setup session, dedup'd consecutively."""

    device_mac: str
    columns: tuple[PacketFeatures, ...]
    label: str | None = None

    def __post_init__(self):
        if not self.columns:
            raise ValueError("fingerprint must have at least one column")
        for a, b in zip(self.columns, self.columns[1:]):
            if a == b:
                raise ValueError("consecutive duplicate columns")

    def __len__(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class FixedFingerprint:
    """Flattened, zero-padded 276-value form consumed by the classifiers."""

    values: tuple[int, ...]
    label: str | None = None

    def __post_init__(self):
        if len(self.values) != FIXED_LEN:
            raise ValueError(f"fixed fingerprint must have {FIXED_LEN} values")


def build_fingerprint(device_mac: str, packets: Sequence[PacketFeatures],
                      label: str | None = None) -> Fingerprint:
    """Collapse runs of identical vectors and wrap the result."""
    if not packets:
        raise EmptyInput("cannot fingerprint an empty packet list")
    cols: list[PacketFeatures] = [packets[0]]
    for feats in packets[1:]:
        if feats != cols[-1]:
            cols.append(feats)
    return Fingerprint(device_mac=device_mac, columns=tuple(cols), label=label)


def to_fixed(fp: Fingerprint) -> FixedFingerprint:
    """First 12 globally unique columns, flattened and zero-padded to 276."""
    seen: set[tuple[int, ...]] = set()
    flat: list[int] = []
    for col in fp.columns:
        key = col.as_tuple()
        if key in seen:
            continue
        seen.add(key)
        flat.extend(key)
        if len(seen) == FIXED_PACKETS:
            break
    flat.extend([0] * (FIXED_LEN - len(flat)))
    return FixedFingerprint(values=tuple(flat), label=fp.label)


def save_fingerprints(db: Sequence[Fingerprint], path) -> None:
    """Write the fingerprint database as a schema-versioned JSON document."""
    records = []
    for fp in db:
        rec: dict = {
            "mac": fp.device_mac,
            "columns": [list(col.as_tuple()) for col in fp.columns],
        }
        if fp.label is not None:
            rec["label"] = fp.label
        records.append(rec)
    doc = {"schema": DB_SCHEMA, "fingerprints": records}
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)


def load_fingerprints(path) -> list[Fingerprint]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"fingerprint db is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "schema" not in doc:
        raise CorruptFile("fingerprint db has no schema marker")
    if doc["schema"] != DB_SCHEMA:
        raise SchemaMismatch(f"expected {DB_SCHEMA}, found {doc['schema']!r}")
    out: list[Fingerprint] = []
    try:
        for rec in doc["fingerprints"]:
            cols = tuple(PacketFeatures.from_values(col) for col in rec["columns"])
            out.append(Fingerprint(device_mac=rec["mac"], columns=cols,
                                   label=rec.get("label")))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"fingerprint db record malformed: {exc}") from exc
    return out


def write_fixed_csv(db: Sequence[Fingerprint], path) -> None:
    """Export the fixed-width form: label plus 276 value columns per line."""
    with open(path, "w") as fh:
        header = ["label"] + [f"v{i}" for i in range(FIXED_LEN)]
        fh.write(",".join(header) + "\n")
        for fp in db:
            fixed = to_fixed(fp)
            row = [fp.label or ""] + [str(v) for v in fixed.values]
            fh.write(",".join(row) + "\n")
