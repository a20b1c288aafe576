"""Writers for the layerfuse store wire formats.

Implemented against the documented formats (not the layerfuse code) so this
package stays decoupled from the consumer: embedding files are
magic "LEF1" | version u16=1 | dtype u16=1 | n_samples u64 | dim u64 | f32 LE
payload; label files are magic "LBL1" | version u16=1 | n_classes u16 |
n_samples u64 | u32 LE ids. All writes go through a temp file plus rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

_EMBED_HEADER = struct.Struct("<4sHHQQ")
_LABEL_HEADER = struct.Struct("<4sHHQ")


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embedding_file(matrix: np.ndarray, path) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"refusing to write non-finite values to {path}")
    n, d = matrix.shape
    header = _EMBED_HEADER.pack(b"LEF1", 1, 1, n, d)
    _atomic_write(Path(path), header + matrix.tobytes())


def write_label_file(labels: np.ndarray, n_classes: int, path) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    header = _LABEL_HEADER.pack(b"LBL1", 1, n_classes, labels.size)
    _atomic_write(Path(path), header + labels.astype("<u4").tobytes())


def write_manifest(entries: list[dict], labels: dict[str, str], metadata: dict, path) -> None:
    doc = {"entries": entries, "labels": labels, "metadata": metadata}
    payload = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    _atomic_write(Path(path), payload)
