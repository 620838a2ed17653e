"""Canonical data model and file I/O shared by all pipeline stages.

Three formats make up the toolkit's on-disk contract:

* catalog: JSON-lines, one image record per line (streamable at millions
  of records);
* features: binary, little-endian float32 rows behind a magic/version/
  dim/count header;
* ratings: CSV with a fixed header, allowed answers encoded ``2|3|4``.

Readers raise structured errors (never bare struct/JSON exceptions) on
truncated or malformed input.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CatalogError, DuplicateIdError, FeatureFileError, RatingsError

FEATURE_MAGIC = b"FTRS"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count

RATINGS_HEADER = ["worker_id", "image_id", "score", "is_test", "allowed_answers", "timestamp"]


@dataclass
class ImageRecord:
    """One catalog entry: identity, geometry, size, and machine tags."""

    id: str
    uri: str
    width: int
    height: int
    byte_size: int
    tags: list[tuple[str, float]] = field(default_factory=list)
    exif_blob: bytes | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"record {self.id!r}: dimensions must be >= 1")
        for tag, conf in self.tags:
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"record {self.id!r}: confidence {conf} for tag {tag!r} outside [0,1]")

    def to_json_dict(self) -> dict:
        d = {
            "id": self.id,
            "uri": self.uri,
            "width": self.width,
            "height": self.height,
            "byte_size": self.byte_size,
            "tags": [[t, c] for t, c in self.tags],
        }
        if self.exif_blob is not None:
            d["exif"] = base64.b64encode(self.exif_blob).decode("ascii")
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ImageRecord":
        exif = d.get("exif")
        return cls(
            id=d["id"],
            uri=d.get("uri", ""),
            width=int(d["width"]),
            height=int(d["height"]),
            byte_size=int(d["byte_size"]),
            tags=[(str(t), float(c)) for t, c in d.get("tags", [])],
            exif_blob=base64.b64decode(exif) if exif is not None else None,
        )


@dataclass
class FeatureVector:
    """A single image's feature row; values are stored as float32."""

    image_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ValueError("feature values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"feature vector {self.image_id!r} has non-finite values")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class RatingEvent:
    """One raw crowd score, possibly a test question with known answers."""

    worker_id: str
    image_id: str
    score: int
    is_test: bool = False
    allowed_answers: frozenset[int] | None = None
    timestamp: int | None = None

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"score must be in 1..5, got {self.score}")
        if self.is_test:
            if not self.allowed_answers:
                raise ValueError("test events require a non-empty allowed_answers set")
            if len(self.allowed_answers) > 3:
                raise ValueError("allowed_answers may contain at most 3 choices")
            if not set(self.allowed_answers) <= {1, 2, 3, 4, 5}:
                raise ValueError("allowed_answers must be a subset of {1..5}")


# ---------------------------------------------------------------------------
# catalog (JSON-lines)


def iter_catalog(path: str | Path) -> Iterator[ImageRecord]:
    """Stream records from a JSON-lines catalog, validating ids on the fly."""
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                rec = ImageRecord.from_json_dict(d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CatalogError(str(exc), line=lineno) from exc
            if rec.id in seen:
                raise DuplicateIdError(rec.id, line=lineno)
            seen.add(rec.id)
            yield rec


def read_catalog(path: str | Path) -> list[ImageRecord]:
    """Read a whole catalog file; records come back in file order."""
    return list(iter_catalog(path))


def write_catalog(path: str | Path, records: Iterable[ImageRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# features (binary)


def write_features(path: str | Path, vectors: Sequence[FeatureVector]) -> None:
    """Write feature rows; all vectors must share one dimensionality."""
    vectors = list(vectors)
    if vectors:
        dim = vectors[0].dim
        for v in vectors:
            if v.dim != dim:
                raise FeatureFileError(
                    f"mixed dimensionality: {v.image_id!r} has dim {v.dim}, expected {dim}"
                )
    else:
        dim = 0
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, dim, len(vectors)))
        for v in vectors:
            ident = v.image_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise FeatureFileError(f"image id too long: {v.image_id[:32]!r}...")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(v.values.astype("<f4", copy=False).tobytes())


def read_features(path: str | Path) -> list[FeatureVector]:
    """Read a feature file written by :func:`write_features`, bit-for-bit."""
    with open(path, "rb") as fh:
        header = fh.read(_FEATURE_HEADER.size)
        if len(header) < _FEATURE_HEADER.size:
            raise FeatureFileError("truncated header")
        magic, version, dim, count = _FEATURE_HEADER.unpack(header)
        if magic != FEATURE_MAGIC:
            raise FeatureFileError(f"bad magic {magic!r}; not a feature file")
        if version != FEATURE_VERSION:
            raise FeatureFileError(f"unsupported feature file version {version}")
        row_bytes = 4 * dim
        out: list[FeatureVector] = []
        for i in range(count):
            raw_len = fh.read(2)
            if len(raw_len) < 2:
                raise FeatureFileError(f"truncated at record {i} (id length)")
            (id_len,) = struct.unpack("<H", raw_len)
            ident = fh.read(id_len)
            if len(ident) < id_len:
                raise FeatureFileError(f"truncated at record {i} (id)")
            raw = fh.read(row_bytes)
            if len(raw) < row_bytes:
                raise FeatureFileError(f"truncated at record {i} (values)")
            values = np.frombuffer(raw, dtype="<f4").copy()
            out.append(FeatureVector(image_id=ident.decode("utf-8"), values=values))
        return out


# ---------------------------------------------------------------------------
# ratings (CSV)


def _format_allowed(allowed: frozenset[int] | None) -> str:
    if not allowed:
        return ""
    return "|".join(str(a) for a in sorted(allowed))


def _parse_allowed(text: str) -> frozenset[int] | None:
    text = text.strip()
    if not text:
        return None
    return frozenset(int(part) for part in text.split("|"))


def write_ratings(path: str | Path, events: Iterable[RatingEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RATINGS_HEADER)
        for ev in events:
            writer.writerow(
                [
                    ev.worker_id,
                    ev.image_id,
                    ev.score,
                    "true" if ev.is_test else "false",
                    _format_allowed(ev.allowed_answers),
                    "" if ev.timestamp is None else ev.timestamp,
                ]
            )


def read_ratings(path: str | Path) -> list[RatingEvent]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if [h.strip() for h in header] != RATINGS_HEADER:
            raise RatingsError(f"unexpected ratings header: {header!r}")
        events: list[RatingEvent] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                worker_id, image_id, score, is_test, allowed, timestamp = row
                events.append(
                    RatingEvent(
                        worker_id=worker_id,
                        image_id=image_id,
                        score=int(score),
                        is_test=is_test.strip().lower() in ("true", "1"),
                        allowed_answers=_parse_allowed(allowed),
                        timestamp=int(timestamp) if timestamp.strip() else None,
                    )
                )
            except (ValueError, TypeError) as exc:
                raise RatingsError(f"line {lineno}: {exc}") from exc
        return events


def ratings_to_csv_bytes(events: Iterable[RatingEvent]) -> bytes:
    """Serialize events to CSV in memory (used for digests and tests)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(RATINGS_HEADER)
    for ev in events:
        writer.writerow(
            [
                ev.worker_id,
                ev.image_id,
                ev.score,
                "true" if ev.is_test else "false",
                _format_allowed(ev.allowed_answers),
                "" if ev.timestamp is None else ev.timestamp,
            ]
        )
    return buf.getvalue().encode("utf-8")
