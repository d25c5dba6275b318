"""Dataset model: recordings, annotations, manifest I/O, cleansing, splitting.

A dataset is described by a manifest (CSV or JSON-lines) with one row per
10-second recording.  Each row carries the recording metadata (id, audio path,
GPS position, datetime), the seven sound-source audibility scores (how well
each source class was heard, 1..5), the eight soundscape-attribute ratings,
and two optional overall-assessment answers that are stored but never used.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .impressions import AttributeScores, Scale
from .tiles import MAX_LATITUDE, quadkey_for_location

MANIFEST_COLUMNS = (
    "id",
    "audio_path",
    "lat",
    "lon",
    "datetime",
    "s1",
    "s2",
    "s3",
    "s4",
    "s5",
    "s6",
    "s7",
    "pl",
    "ev",
    "ca",
    "vi",
    "an",
    "un",
    "ch",
    "mo",
    "q3",
    "q4",
    "scale",
)

SOURCE_CLASS_LABELS = {
    "s1": "Technology-traffic",
    "s2": "Technology-others",
    "s3": "Human-voice",
    "s4": "Human-others",
    "s5": "Nature-creature",
    "s6": "Nature-others",
    "s7": "Noise",
}

SOURCE_KEYS = tuple(SOURCE_CLASS_LABELS)


class ManifestError(ValueError):
    """Malformed or invariant-violating manifest content."""


@dataclass(frozen=True)
class Recording:
    """One 10-second clip plus its capture metadata."""

    id: str
    audio_path: str
    latitude: float
    longitude: float
    datetime: str
    quadkey: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("empty recording id")
        if not -MAX_LATITUDE <= self.latitude <= MAX_LATITUDE:
            raise ManifestError(f"latitude out of range at lat: {self.latitude}")
        if not -180.0 <= self.longitude < 180.0:
            raise ManifestError(f"longitude out of range at lon: {self.longitude}")
        if not self.quadkey:
            object.__setattr__(
                self, "quadkey", quadkey_for_location(self.latitude, self.longitude)
            )
        if len(self.quadkey) != 20:
            raise ManifestError(f"quadkey must have length 20, got {len(self.quadkey)}")


@dataclass(frozen=True)
class SoundSourceScores:
    """Audibility of the seven source classes, each 1 (not at all) .. 5 (dominates)."""

    s1: int
    s2: int
    s3: int
    s4: int
    s5: int
    s6: int
    s7: int

    def __post_init__(self) -> None:
        for key in SOURCE_KEYS:
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ManifestError(f"score out of range 1..5 at {key}: {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, key) for key in SOURCE_KEYS], dtype=float)


@dataclass(frozen=True)
class ManifestEntry:
    recording: Recording
    sources: SoundSourceScores
    attributes: AttributeScores
    q3: int | None = None
    q4: int | None = None

    def __post_init__(self) -> None:
        for name, value in (("q3", self.q3), ("q4", self.q4)):
            if value is not None and not 1 <= value <= 7:
                raise ManifestError(f"{name} out of range 1..7: {value}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    scale: Scale = Scale.SEVEN_POINT

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[str]:
        return [entry.recording.id for entry in self.entries]

    def entry_by_id(self, rec_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.recording.id == rec_id:
                return entry
        raise KeyError(rec_id)


# A noise rule decides whether an entry is a recording-artifact-only clip that
# should be dropped before modeling.
NoiseRulePredicate = Callable[[SoundSourceScores], bool]


@dataclass(frozen=True)
class NoiseRule:
    """Entry is noise-only when the Noise class is loud and nothing else is heard."""

    min_noise_score: int = 4
    max_other_score: int = 1

    def __call__(self, scores: SoundSourceScores) -> bool:
        others = [getattr(scores, key) for key in SOURCE_KEYS[:-1]]
        return scores.s7 >= self.min_noise_score and all(
            value <= self.max_other_score for value in others
        )

    def describe(self) -> str:
        return (
            f"s7 >= {self.min_noise_score} and s1..s6 all <= {self.max_other_score}"
        )


DEFAULT_NOISE_RULE = NoiseRule()


def _parse_int(raw: str | int | None, column: str, row: int) -> int:
    if raw is None or raw == "":
        raise ManifestError(f"missing value for {column} at row {row}")
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ManifestError(f"could not parse {column}={raw!r} at row {row}") from None
    return value


def _parse_optional_int(raw, column: str, row: int) -> int | None:
    if raw is None or raw == "":
        return None
    return _parse_int(raw, column, row)


def _parse_float(raw, column: str, row: int) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ManifestError(f"could not parse {column}={raw!r} at row {row}") from None


def _entry_from_record(record: dict, row: int, scale: Scale) -> ManifestEntry:
    try:
        recording = Recording(
            id=str(record.get("id", "")),
            audio_path=str(record.get("audio_path", "")),
            latitude=_parse_float(record.get("lat"), "lat", row),
            longitude=_parse_float(record.get("lon"), "lon", row),
            datetime=_validate_datetime(record.get("datetime"), row),
        )
        sources = SoundSourceScores(
            **{key: _parse_int(record.get(key), key, row) for key in SOURCE_KEYS}
        )
        attributes = AttributeScores(
            scale=scale,
            **{
                key: _parse_int(record.get(key), key, row)
                for key in ("pl", "ev", "ca", "vi", "an", "un", "ch", "mo")
            },
        )
        return ManifestEntry(
            recording=recording,
            sources=sources,
            attributes=attributes,
            q3=_parse_optional_int(record.get("q3"), "q3", row),
            q4=_parse_optional_int(record.get("q4"), "q4", row),
        )
    except ManifestError as exc:
        raise ManifestError(f"row {row}: {exc}") from None
    except ValueError as exc:  # attribute-range errors from AttributeScores
        raise ManifestError(f"row {row}: {exc}") from None


def _validate_datetime(raw, row: int) -> str:
    if raw is None or raw == "":
        raise ManifestError(f"missing datetime at row {row}")
    text = str(raw)
    try:
        datetime.fromisoformat(text)
    except ValueError:
        raise ManifestError(f"datetime not ISO-8601 at row {row}: {text!r}") from None
    return text


def _iter_records(path: Path) -> Iterable[dict]:
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        with path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"row {lineno}: invalid JSON ({exc})") from None
                if not isinstance(record, dict):
                    raise ManifestError(f"row {lineno}: expected a JSON object")
                yield record
    else:
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None:
                raise ManifestError("manifest has no header row")
            missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames and c not in ("q3", "q4")]
            if missing:
                raise ManifestError(f"manifest missing columns: {', '.join(missing)}")
            for record in reader:
                yield record


def load_manifest(
    path: str | Path,
    check_audio: bool = True,
    audio_root: str | Path | None = None,
) -> DatasetManifest:
    """Load and validate a manifest file (CSV or JSON-lines by extension).

    Every row is checked against the type invariants; errors carry the
    offending row number and field.  ``check_audio`` verifies that each
    referenced audio file resolves (relative paths resolve against
    ``audio_root``, default the manifest's directory).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = Path(audio_root) if audio_root is not None else path.parent

    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    scale: Scale | None = None
    for row, record in enumerate(_iter_records(path), start=1):
        declared = _parse_int(record.get("scale"), "scale", row)
        row_scale = Scale.from_points(declared)
        if scale is None:
            scale = row_scale
        elif row_scale is not scale:
            raise ManifestError(
                f"row {row}: scale {declared} differs from dataset scale {scale.value}"
            )
        entry = _entry_from_record(record, row, row_scale)
        rec_id = entry.recording.id
        if rec_id in seen_ids:
            raise ManifestError(f"row {row}: duplicate id {rec_id!r}")
        seen_ids.add(rec_id)
        if check_audio:
            audio = Path(entry.recording.audio_path)
            if not audio.is_absolute():
                audio = root / audio
            if not audio.exists():
                raise ManifestError(
                    f"row {row}: audio file not found: {entry.recording.audio_path}"
                )
        entries.append(entry)

    if scale is None:
        raise ManifestError("manifest has no rows")
    return DatasetManifest(entries=tuple(entries), scale=scale)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as CSV with the canonical column order."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_COLUMNS)
        for entry in manifest.entries:
            rec, src, attr = entry.recording, entry.sources, entry.attributes
            writer.writerow(
                [
                    rec.id,
                    rec.audio_path,
                    repr(rec.latitude),
                    repr(rec.longitude),
                    rec.datetime,
                    *[getattr(src, key) for key in SOURCE_KEYS],
                    *[getattr(attr, key) for key in ("pl", "ev", "ca", "vi", "an", "un", "ch", "mo")],
                    "" if entry.q3 is None else entry.q3,
                    "" if entry.q4 is None else entry.q4,
                    manifest.scale.value,
                ]
            )


def cleanse_noise_only(
    manifest: DatasetManifest, predicate: NoiseRulePredicate = DEFAULT_NOISE_RULE
) -> DatasetManifest:
    """Drop entries the noise rule flags as recording-artifact-only clips."""
    kept = tuple(entry for entry in manifest.entries if not predicate(entry.sources))
    return replace(manifest, entries=kept)


def train_test_split(
    manifest: DatasetManifest, n_train: int, n_test: int, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded uniform random split into disjoint train/test manifests."""
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be non-negative")
    total = len(manifest.entries)
    if n_train + n_test > total:
        raise ValueError(
            f"insufficient entries: need {n_train}+{n_test}, have {total}"
        )
    order = np.random.default_rng(seed).permutation(total)
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train : n_train + n_test].tolist())
    train = tuple(manifest.entries[i] for i in train_idx)
    test = tuple(manifest.entries[i] for i in test_idx)
    return replace(manifest, entries=train), replace(manifest, entries=test)
