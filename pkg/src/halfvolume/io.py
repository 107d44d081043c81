"""File formats: binary fields, run-length encoded voxel sets, atomic writes."""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import ScalarField, TorusGrid

FIELD_MAGIC = b"HVF1"


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# binary scalar fields


def field_to_bytes(u: ScalarField, eps: float) -> bytes:
    g = u.grid
    head = FIELD_MAGIC + struct.pack("<I", g.dim)
    head += struct.pack(f"<{g.dim}I", *g.res)
    head += struct.pack(f"<{g.dim}d", *g.sides)
    head += struct.pack("<d", float(eps))
    return head + np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")


def field_from_bytes(data: bytes) -> tuple[ScalarField, float]:
    if data[:4] != FIELD_MAGIC:
        raise FormatError("not a field file (bad magic)")
    off = 4
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    if not 1 <= dim <= 3:
        raise FormatError(f"unsupported dimension {dim}")
    res = struct.unpack_from(f"<{dim}I", data, off)
    off += 4 * dim
    sides = struct.unpack_from(f"<{dim}d", data, off)
    off += 8 * dim
    (eps,) = struct.unpack_from("<d", data, off)
    off += 8
    n = int(np.prod(res))
    if len(data) - off != 8 * n:
        raise FormatError(f"payload has {len(data) - off} bytes, expected {8 * n}")
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(res)
    return ScalarField(TorusGrid(sides, res), vals.astype(float)), eps


def save_field(path, u: ScalarField, eps: float) -> Path:
    return atomic_write_bytes(path, field_to_bytes(u, eps))


def load_field(path) -> tuple[ScalarField, float]:
    return field_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# voxel sets


def rle_encode(bits) -> dict:
    """Run-length code of a flat boolean sequence: first bit plus run lengths."""
    b = np.asarray(bits, dtype=bool).ravel()
    if b.size == 0:
        return {"first": 0, "runs": []}
    change = np.flatnonzero(b[1:] != b[:-1]) + 1
    edges = np.concatenate([[0], change, [b.size]])
    return {"first": int(b[0]), "runs": np.diff(edges).astype(int).tolist()}


def rle_decode(code: dict, size: int) -> np.ndarray:
    runs = [int(r) for r in code["runs"]]
    if sum(runs) != size or any(r <= 0 for r in runs):
        raise FormatError("run lengths do not add up to the grid size")
    out = np.empty(size, dtype=bool)
    bit = bool(code["first"])
    pos = 0
    for r in runs:
        out[pos : pos + r] = bit
        pos += r
        bit = not bit
    return out


def voxel_document(masks, dims, sides, order: str, half_volume: float) -> dict:
    return {
        "dims": [int(d) for d in dims],
        "sides": [float(s) for s in sides],
        "order": order,
        "half_volume": float(half_volume),
        "sets": [rle_encode(m) for m in masks],
    }


def save_voxel_sets(path, masks, dims, sides, order: str, half_volume: float) -> Path:
    return atomic_write_json(path, voxel_document(masks, dims, sides, order, half_volume))


def load_voxel_sets(path) -> tuple[dict, list[np.ndarray]]:
    doc = json.loads(Path(path).read_text())
    for key in ("dims", "sides", "order", "half_volume", "sets"):
        if key not in doc:
            raise FormatError(f"voxel document lacks '{key}'")
    dims = tuple(int(d) for d in doc["dims"])
    size = int(np.prod(dims))
    masks = [rle_decode(c, size).reshape(dims) for c in doc["sets"]]
    header = {k: doc[k] for k in ("dims", "sides", "order", "half_volume")}
    return header, masks
