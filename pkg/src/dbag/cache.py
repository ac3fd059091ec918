"""Binary artifact containers (feature caches, landmark caches, reference sets,
checkpoints).

All containers open with the magic ``DBAG`` and a little-endian ``uint32``
format version. Payloads are raw row-major arrays, so a write/read round trip
is bit-exact. Caches carry a JSON sidecar (``<file>.json``) with provenance
(backend versions, config hashes); reference sets and checkpoints embed their
metadata in the file itself. Writes go through a temp file plus ``os.replace``
so concurrent readers never observe a partial file.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCache, MissingArtifact

MAGIC = b"DBAG"
FORMAT_VERSION = 1

LANDMARK_POINTS = 478
LANDMARK_DIMS = 3
FRAME_DIM = 600


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values; caches reject NaN/inf at write time")


def _read_exact(f, n: int, path: Path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptCache(f"{path}: truncated (wanted {n} bytes, got {len(data)})")
    return data


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_sidecar(path: str | Path, meta: dict) -> Path:
    sc = sidecar_path(path)
    payload = json.dumps(meta, sort_keys=True, indent=2).encode("utf-8")
    _atomic_write(sc, payload)
    return sc


def read_sidecar(path: str | Path) -> dict:
    sc = sidecar_path(path)
    if not sc.exists():
        raise MissingArtifact(f"sidecar not found: {sc}")
    with open(sc, "r", encoding="utf-8") as f:
        return json.load(f)


# --- landmark cache: header {magic, version, n_frames, points_per_frame, dims} ---

def write_landmark_cache(path: str | Path, landmarks: np.ndarray, meta: dict) -> Path:
    """Write an (N, 478, 3) float32 landmark sequence plus its sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(landmarks, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[1:] != (LANDMARK_POINTS, LANDMARK_DIMS):
        raise ValueError(f"landmark array must be (N, {LANDMARK_POINTS}, {LANDMARK_DIMS}), got {arr.shape}")
    _require_finite(arr, "landmark cache")
    header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, arr.shape[0], LANDMARK_POINTS, LANDMARK_DIMS)
    _atomic_write(path, header + arr.tobytes())
    write_sidecar(path, meta)
    return path


def read_landmark_cache(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"landmark cache not found: {path}")
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != MAGIC:
            raise CorruptCache(f"{path}: bad magic {magic!r}")
        version, n_frames, points, dims = struct.unpack("<IIII", _read_exact(f, 16, path))
        if version != FORMAT_VERSION:
            raise CorruptCache(f"{path}: unsupported format version {version}")
        if points != LANDMARK_POINTS or dims != LANDMARK_DIMS:
            raise CorruptCache(f"{path}: header declares {points}x{dims}, expected {LANDMARK_POINTS}x{LANDMARK_DIMS}")
        data = _read_exact(f, 4 * n_frames * points * dims, path)
        if f.read(1):
            raise CorruptCache(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(data, dtype="<f4").reshape(n_frames, points, dims).copy()
    return arr, read_sidecar(path)


# --- feature cache: header {magic, version, n_frames, dims} ---

def write_feature_cache(path: str | Path, features: np.ndarray, meta: dict) -> Path:
    """Write an (N, 600) float32 per-frame feature matrix plus its sidecar.

    ``meta`` should carry video_id, label, dataset, backend versions, the
    region-spec hash, and a standardization-stats reference when known.
    """
    path = Path(path)
    arr = np.ascontiguousarray(features, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    _require_finite(arr, "feature cache")
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, arr.shape[0], arr.shape[1])
    _atomic_write(path, header + arr.tobytes())
    write_sidecar(path, meta)
    return path


def read_feature_cache(path: str | Path, expected_dim: int = FRAME_DIM) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"feature cache not found: {path}")
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != MAGIC:
            raise CorruptCache(f"{path}: bad magic {magic!r}")
        version, n_frames, dims = struct.unpack("<III", _read_exact(f, 12, path))
        if version != FORMAT_VERSION:
            raise CorruptCache(f"{path}: unsupported format version {version}")
        if expected_dim is not None and dims != expected_dim:
            raise CorruptCache(f"{path}: header declares dims={dims}, expected {expected_dim}")
        data = _read_exact(f, 4 * n_frames * dims, path)
        if f.read(1):
            raise CorruptCache(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(data, dtype="<f4").reshape(n_frames, dims).copy()
    return arr, read_sidecar(path)


# --- self-describing containers (embedded JSON meta + raw buffers) ---

def _write_meta_container(path: Path, meta: dict, buffers: list[bytes]) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = MAGIC + struct.pack("<II", FORMAT_VERSION, len(meta_bytes)) + meta_bytes
    _atomic_write(path, payload + b"".join(buffers))


def _read_meta_container(path: Path, kind: str) -> tuple[dict, bytes]:
    if not path.exists():
        raise MissingArtifact(f"{kind} not found: {path}")
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path)
        if magic != MAGIC:
            raise CorruptCache(f"{path}: bad magic {magic!r}")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8, path))
        if version != FORMAT_VERSION:
            raise CorruptCache(f"{path}: unsupported format version {version}")
        try:
            meta = json.loads(_read_exact(f, meta_len, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCache(f"{path}: unreadable metadata block: {exc}") from exc
        rest = f.read()
    if meta.get("kind") != kind:
        raise CorruptCache(f"{path}: container kind {meta.get('kind')!r}, expected {kind!r}")
    return meta, rest


def write_reference_set(path: str | Path, embeddings: np.ndarray, labels: list[str], meta: dict) -> Path:
    """Persist an (n, dim) embedding bank with per-row labels and hash metadata."""
    path = Path(path)
    emb = np.ascontiguousarray(embeddings, dtype=np.float32)
    if emb.ndim != 2 or emb.shape[0] != len(labels):
        raise ValueError(f"embeddings {emb.shape} do not align with {len(labels)} labels")
    _require_finite(emb, "reference set")
    label_names = sorted(set(labels))
    codes = np.array([label_names.index(l) for l in labels], dtype=np.uint8)
    full_meta = dict(meta)
    full_meta.update(
        kind="reference-set",
        n=int(emb.shape[0]),
        dim=int(emb.shape[1]),
        label_names=label_names,
    )
    _write_meta_container(path, full_meta, [emb.tobytes(), codes.tobytes()])
    return path


def read_reference_set(path: str | Path) -> tuple[np.ndarray, list[str], dict]:
    path = Path(path)
    meta, rest = _read_meta_container(path, "reference-set")
    n, dim = meta["n"], meta["dim"]
    want = 4 * n * dim + n
    if len(rest) != want:
        raise CorruptCache(f"{path}: payload is {len(rest)} bytes, expected {want}")
    emb = np.frombuffer(rest[: 4 * n * dim], dtype="<f4").reshape(n, dim).copy()
    codes = np.frombuffer(rest[4 * n * dim :], dtype=np.uint8)
    names = meta["label_names"]
    labels = [names[c] for c in codes]
    return emb, labels, meta


def write_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    """Persist named weight arrays plus model config / stats metadata."""
    path = Path(path)
    manifest = []
    buffers = []
    for name in tensors:
        arr = np.asarray(tensors[name])
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        buffers.append(np.ascontiguousarray(arr).tobytes())
    full_meta = dict(meta)
    full_meta.update(kind="checkpoint", tensors=manifest)
    _write_meta_container(path, full_meta, buffers)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    meta, rest = _read_meta_container(path, "checkpoint")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in meta["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        chunk = rest[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptCache(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(rest):
        raise CorruptCache(f"{path}: trailing bytes after tensors")
    return tensors, meta
