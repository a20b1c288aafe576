"""On-disk embedding/label formats, the run manifest, and storage cost estimation.

Embedding file layout (all integers little-endian):
    magic "LEF1" | version u16=1 | dtype u16=1 (f32) | n_samples u64 | dim u64
    followed by the row-major float32 payload.

Label file layout:
    magic "LBL1" | version u16=1 | n_classes u16 | n_samples u64
    followed by one u32 class id per sample.

A manifest is a UTF-8 JSON document with an "entries" array (keys: dataset,
split, model, layer, dim, n_samples, path) and a "labels" map split -> path.
Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"LEF1"
LABEL_MAGIC = b"LBL1"
FORMAT_VERSION = 1
DTYPE_F32 = 1

_EMBED_HEADER = struct.Struct("<4sHHQQ")  # 24 bytes
_LABEL_HEADER = struct.Struct("<4sHHQ")  # 16 bytes


class StoreError(Exception):
    """Base error for embedding/label/manifest I/O."""


class BadMagicError(StoreError):
    pass


class UnsupportedVersionError(StoreError):
    pass


class TruncatedFileError(StoreError):
    pass


class NonFiniteError(StoreError):
    pass


class ManifestError(StoreError):
    pass


def write_embedding_file(matrix: np.ndarray, path) -> None:
    """Write an n_samples x dim float32 matrix; refuses non-finite values."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise StoreError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteError(f"refusing to write non-finite values to {path}")
    n, d = matrix.shape
    header = _EMBED_HEADER.pack(EMBED_MAGIC, FORMAT_VERSION, DTYPE_F32, n, d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.astype("<f4", copy=False).tobytes())


def read_embedding_header(path) -> tuple[int, int]:
    """Return (n_samples, dim) from the file header without loading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_EMBED_HEADER.size)
    if len(raw) < _EMBED_HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, dtype, n, d = _EMBED_HEADER.unpack(raw)
    if magic != EMBED_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {EMBED_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if dtype != DTYPE_F32:
        raise UnsupportedVersionError(f"{path}: dtype code {dtype}, expected {DTYPE_F32} (f32)")
    return n, d


def read_embedding_file(path) -> np.ndarray:
    """Load a float32 embedding matrix, validating header, size, and finiteness."""
    n, d = read_embedding_header(path)
    with open(path, "rb") as fh:
        fh.seek(_EMBED_HEADER.size)
        payload = fh.read()
    expected = n * d * 4
    if len(payload) != expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteError(f"{path}: payload contains NaN or Inf")
    return np.array(matrix)  # own, writable copy


def write_label_file(labels: np.ndarray, n_classes: int, path) -> None:
    """Write a class-id vector; every label must lie in [0, n_classes)."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise StoreError(f"expected a 1-D label vector, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise StoreError(f"labels outside [0, {n_classes})")
    header = _LABEL_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, n_classes, labels.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(labels.astype("<u4").tobytes())


def read_label_file(path) -> tuple[np.ndarray, int]:
    """Load (labels, n_classes) from a label file."""
    with open(path, "rb") as fh:
        raw = fh.read(_LABEL_HEADER.size)
        if len(raw) < _LABEL_HEADER.size:
            raise TruncatedFileError(f"{path}: header truncated")
        magic, version, n_classes, n = _LABEL_HEADER.unpack(raw)
        if magic != LABEL_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"{path}: version {version}")
        payload = fh.read()
    if len(payload) != n * 4:
        raise TruncatedFileError(f"{path}: payload is {len(payload)} bytes, expected {n * 4}")
    labels = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    if labels.size and labels.max() >= n_classes:
        raise StoreError(f"{path}: label {labels.max()} outside [0, {n_classes})")
    return labels, n_classes


@dataclass(frozen=True)
class ManifestEntry:
    dataset: str
    split: str
    model: str
    layer: int
    dim: int
    n_samples: int
    path: Path

    @staticmethod
    def from_json(obj: dict, base: Path) -> "ManifestEntry":
        try:
            return ManifestEntry(
                dataset=obj["dataset"],
                split=obj["split"],
                model=obj["model"],
                layer=int(obj["layer"]),
                dim=int(obj["dim"]),
                n_samples=int(obj["n_samples"]),
                path=_resolve(obj["path"], base),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest entry missing key {exc}") from exc


def _resolve(path_str: str, base: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else base / p


class Manifest:
    """Catalog of (dataset, split, model, layer) -> embedding file, plus label files."""

    def __init__(self, entries: list[ManifestEntry], labels: dict[str, Path], path=None):
        self.entries = entries
        self.labels = labels
        self.path = Path(path) if path is not None else None

    def datasets(self) -> list[str]:
        return sorted({e.dataset for e in self.entries})

    def models(self) -> list[str]:
        return sorted({e.model for e in self.entries})

    def layers(self, model: str, split: str = "train") -> list[int]:
        out = sorted(e.layer for e in self.entries if e.model == model and e.split == split)
        if not out:
            raise ManifestError(f"no entries for model {model!r}, split {split!r}")
        return out

    def last_layer(self, model: str, split: str = "train") -> int:
        return self.layers(model, split)[-1]

    def entry(self, model: str, layer: int, split: str) -> ManifestEntry:
        for e in self.entries:
            if e.model == model and e.layer == layer and e.split == split:
                return e
        raise ManifestError(f"no entry for ({model!r}, layer {layer}, {split!r})")

    def load_matrix(self, model: str, layer: int, split: str) -> np.ndarray:
        return read_embedding_file(self.entry(model, layer, split).path)

    def load_labels(self, split: str) -> tuple[np.ndarray, int]:
        if split not in self.labels:
            raise ManifestError(f"no label file for split {split!r}")
        return read_label_file(self.labels[split])

    def n_samples(self, split: str) -> int:
        counts = {e.n_samples for e in self.entries if e.split == split}
        if not counts:
            raise ManifestError(f"no entries for split {split!r}")
        return counts.pop()

    def dim(self, model: str, split: str = "train") -> int:
        dims = {e.dim for e in self.entries if e.model == model and e.split == split}
        if not dims:
            raise ManifestError(f"no entries for model {model!r}")
        return dims.pop()


def load_manifest(path) -> Manifest:
    """Load and validate a manifest against the files it references."""
    path = Path(path)
    base = path.parent
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ManifestError(f"{path}: expected an object with an 'entries' array")
    entries = [ManifestEntry.from_json(obj, base) for obj in doc["entries"]]
    labels = {split: _resolve(p, base) for split, p in doc.get("labels", {}).items()}
    _validate(entries, labels, path)
    return Manifest(entries, labels, path=path)


def save_manifest(entries: list[dict], labels: dict[str, str], path) -> None:
    """Write a manifest document; entry paths are kept as given (ideally relative)."""
    doc = {"entries": entries, "labels": labels}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _validate(entries, labels, manifest_path) -> None:
    counts: dict[tuple[str, str], int] = {}
    for e in entries:
        if not e.path.exists():
            raise ManifestError(f"{manifest_path}: missing file {e.path}")
        n, d = read_embedding_header(e.path)
        if d != e.dim:
            raise ManifestError(
                f"{manifest_path}: dim mismatch for {e.path}: header {d}, entry {e.dim}"
            )
        if n != e.n_samples:
            raise ManifestError(
                f"{manifest_path}: sample-count mismatch for {e.path}: "
                f"header {n}, entry {e.n_samples}"
            )
        key = (e.dataset, e.split)
        if key in counts and counts[key] != e.n_samples:
            raise ManifestError(
                f"{manifest_path}: entries of {key} disagree on n_samples "
                f"({counts[key]} vs {e.n_samples})"
            )
        counts.setdefault(key, e.n_samples)
    for split, label_path in labels.items():
        if not label_path.exists():
            raise ManifestError(f"{manifest_path}: missing label file {label_path}")
        lab, _ = read_label_file(label_path)
        split_counts = {n for (ds, sp), n in counts.items() if sp == split}
        if split_counts and lab.size not in split_counts:
            raise ManifestError(
                f"{manifest_path}: label file {label_path} has {lab.size} samples, "
                f"entries have {sorted(split_counts)}"
            )


def estimate_memory(n_samples: int, dims: list[int]) -> int:
    """Bytes needed to store n_samples rows of float32 at each dim: n * sum(dims) * 4."""
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    if not dims:
        raise ValueError("dims must be non-empty")
    return n_samples * sum(dims) * 4


def round_half_up(value: float, places: int) -> str:
    """Render a float with fixed decimals, rounding halves up (0.97935 -> '0.9794')."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def format_gib(n_bytes: int) -> str:
    """Render a byte count in GiB to one decimal."""
    return round_half_up(n_bytes / 2**30, 1)
