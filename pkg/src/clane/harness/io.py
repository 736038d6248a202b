"""Feature files (``FEAT``) and class manifests."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FEAT_MAGIC = b"FEAT"


def write_features(path, features_by_class: dict) -> None:
    """``FEAT`` | D u32 | count u32 | per sample: label u32, D x f32 (little-endian)."""
    items = [(c, np.asarray(x, dtype=np.float64)) for c in sorted(features_by_class)
             for x in features_by_class[c]]
    dims = {x.shape[0] for _, x in items}
    if len(dims) > 1:
        raise ValueError("features have mixed dimensions")
    d = dims.pop() if dims else 0
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (d,))])
    arr = np.empty(len(items), dtype=rec)
    for i, (c, x) in enumerate(items):
        arr[i] = (c, x)
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", d, len(items)) + arr.tobytes())


def read_features(path) -> dict[int, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: not a FEAT file")
    d, count = struct.unpack_from("<II", data, 4)
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (d,))])
    if len(data) - 12 != rec.itemsize * count:
        raise ValueError(f"{path}: payload size does not match header")
    arr = np.frombuffer(data, dtype=rec, count=count, offset=12)
    out = {}
    for c in np.unique(arr["label"]):
        out[int(c)] = arr["x"][arr["label"] == c].astype(np.float64).reshape(-1, d)
    return out


def read_manifest(path) -> list[tuple[int, Path]]:
    """Lines ``class_id<TAB>path``; relative paths resolve against the manifest's folder."""
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            cid, p = line.split("\t", 1)
            entries.append((int(cid), base / p.strip()))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected 'class_id<TAB>path'") from None
    return entries


def write_manifest(path, entries) -> None:
    base = Path(path).parent
    lines = []
    for cid, p in entries:
        p = Path(p)
        try:
            p = p.relative_to(base)
        except ValueError:
            pass
        lines.append(f"{cid}\t{p.as_posix()}")
    Path(path).write_text("\n".join(lines) + "\n")
