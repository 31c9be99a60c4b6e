"""Manifest-driven corpus handling: ingestion, splits, multi-source sampling.

A corpus is a line-delimited JSON manifest, one track per line; every track
must carry all three modalities (audio, MIDI, text) because the trimodal
objective needs complete triples. Weakly and strongly aligned sources are
kept distinct so training can mix them with a controlled ratio or run them
as separate pretrain / fine-tune phases.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .text import TextElement, TextKind

SCHEMA_VERSION = 1


class Source(Enum):
    WEAK = "weak"
    STRONG = "strong"


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestError(Exception):
    pass


class MissingFile(ManifestError):
    pass


class SchemaError(ManifestError):
    def __init__(self, line: int, field_name: str, message: str = ""):
        self.line = line
        self.field = field_name
        super().__init__(f"line {line}, field '{field_name}': {message}")


class DuplicateId(ManifestError):
    def __init__(self, track_id: str, line: int = -1):
        self.id = track_id
        super().__init__(f"duplicate track id '{track_id}' (line {line})")


class RatioError(ManifestError):
    pass


class EmptyPool(ManifestError):
    pass


@dataclass(frozen=True)
class TrackRecord:
    id: str
    audio_uri: str
    midi_uri: str
    texts: tuple[TextElement, ...]
    source: Source
    duration_sec: float
    split: Split | None = None

    def __post_init__(self):
        if self.duration_sec <= 0:
            raise ValueError(f"track '{self.id}': duration must be positive")
        if not self.texts:
            raise ValueError(f"track '{self.id}': needs at least one text element")
        if not self.audio_uri or not self.midi_uri:
            raise ValueError(f"track '{self.id}': audio and midi URIs both required")


@dataclass
class DatasetManifest:
    records: list[TrackRecord] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def by_source(self, source: Source) -> list[TrackRecord]:
        return [r for r in self.records if r.source == source]

    def by_split(self, split: Split) -> list[TrackRecord]:
        return [r for r in self.records if r.split == split]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class MixtureSpec:
    weak_weight: float
    strong_weight: float

    def __post_init__(self):
        if self.weak_weight < 0 or self.strong_weight < 0:
            raise ValueError("mixture weights must be non-negative")
        if self.weak_weight == 0 and self.strong_weight == 0:
            raise ValueError("mixture weights must not both be zero")

    @property
    def weak_fraction(self) -> float:
        return self.weak_weight / (self.weak_weight + self.strong_weight)


def resolve_uri(uri: str, data_root: str | Path | None = None) -> Path:
    """Resolve a manifest URI; relative paths hang off TRIBIND_DATA_ROOT."""
    p = Path(uri)
    if p.is_absolute():
        return p
    root = data_root if data_root is not None else os.environ.get("TRIBIND_DATA_ROOT", ".")
    return Path(root) / p


def _record_from_json(obj: dict, line: int) -> TrackRecord:
    def need(key: str):
        if key not in obj:
            raise SchemaError(line, key, "missing")
        return obj[key]

    texts_raw = need("texts")
    if not isinstance(texts_raw, list) or not texts_raw:
        raise SchemaError(line, "texts", "must be a non-empty array")
    texts = []
    for t in texts_raw:
        try:
            texts.append(TextElement(kind=TextKind(t["kind"]), content=t["content"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(line, "texts", str(exc)) from exc
    try:
        source = Source(need("source"))
    except ValueError as exc:
        raise SchemaError(line, "source", str(exc)) from exc
    split = None
    if obj.get("split") is not None:
        try:
            split = Split(obj["split"])
        except ValueError as exc:
            raise SchemaError(line, "split", str(exc)) from exc
    for key in ("id", "audio", "midi"):
        value = need(key)
        if not isinstance(value, str) or not value:
            raise SchemaError(line, key, "must be a non-empty string")
    if not isinstance(need("duration_sec"), (int, float)):
        raise SchemaError(line, "duration_sec", "must be a number")
    try:
        return TrackRecord(
            id=obj["id"],
            audio_uri=obj["audio"],
            midi_uri=obj["midi"],
            texts=tuple(texts),
            source=source,
            duration_sec=float(obj["duration_sec"]),
            split=split,
        )
    except ValueError as exc:
        raise SchemaError(line, "record", str(exc)) from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a line-delimited JSON manifest, validating every record."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    records: list[TrackRecord] = []
    seen: dict[str, int] = {}
    violations: list[ManifestError] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                violations.append(SchemaError(lineno, "<json>", str(exc)))
                continue
            try:
                rec = _record_from_json(obj, lineno)
            except ManifestError as exc:
                violations.append(exc)
                continue
            if rec.id in seen:
                violations.append(DuplicateId(rec.id, lineno))
                continue
            seen[rec.id] = lineno
            records.append(rec)
    if violations:
        first = violations[0]
        first.violations = violations
        raise first
    return DatasetManifest(records=records)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            obj = {
                "id": r.id,
                "audio": r.audio_uri,
                "midi": r.midi_uri,
                "texts": [{"kind": t.kind.value, "content": t.content} for t in r.texts],
                "source": r.source.value,
                "duration_sec": r.duration_sec,
            }
            if r.split is not None:
                obj["split"] = r.split.value
            fh.write(json.dumps(obj) + "\n")


def _apportion(n: int, ratios: list[float]) -> list[int]:
    """Largest-remainder apportionment of n items over ratios."""
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    remainder = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def make_split(
    manifest: DatasetManifest, ratios: list[float], seed: int
) -> DatasetManifest:
    """Assign splits stratified per source, deterministic in the seed.

    Each source's records are shuffled and sliced by largest-remainder counts,
    so 10 strong records at [0.8, 0.1, 0.1] land exactly 8/1/1.
    """
    if not ratios or len(ratios) > len(Split):
        raise RatioError(f"need 1..{len(Split)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise RatioError("ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RatioError(f"ratios must sum to 1, got {sum(ratios)}")
    if any(r.split is not None for r in manifest.records):
        raise ManifestError("manifest already has split assignments")

    splits = list(Split)[: len(ratios)]
    rng = np.random.default_rng(seed)
    assigned: dict[str, Split] = {}
    for source in Source:
        pool = manifest.by_source(source)
        idx = rng.permutation(len(pool))
        counts = _apportion(len(pool), ratios)
        cursor = 0
        for split, count in zip(splits, counts):
            for i in idx[cursor : cursor + count]:
                assigned[pool[i].id] = split
            cursor += count
    records = [replace(r, split=assigned[r.id]) for r in manifest.records]
    return DatasetManifest(records=records, schema_version=manifest.schema_version)


def sample_mixed_batch(
    weak_pool: list[TrackRecord],
    strong_pool: list[TrackRecord],
    mixture: MixtureSpec,
    batch_size: int,
    rng: np.random.Generator,
) -> list[TrackRecord]:
    """Draw a batch with per-slot source choice (weighted, with replacement).

    Every slot independently picks WEAK with probability weak/(weak+strong),
    then a uniform record from the chosen pool.
    """
    if mixture.weak_weight > 0 and not weak_pool:
        raise EmptyPool("weak source has positive weight but no records")
    if mixture.strong_weight > 0 and not strong_pool:
        raise EmptyPool("strong source has positive weight but no records")
    p_weak = mixture.weak_fraction
    batch = []
    for _ in range(batch_size):
        pool = weak_pool if rng.random() < p_weak else strong_pool
        batch.append(pool[rng.integers(len(pool))])
    return batch
