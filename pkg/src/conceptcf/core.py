"""Dense embedding storage, deterministic RNG, and the on-disk interchange format.

In memory every matrix is a C-contiguous float64 numpy array, one row per
embedding; all entries must be finite.  On disk two formats are understood:

* EBF (embedding binary format), little-endian::

      bytes 0-3   magic, ASCII "CXEB"
      bytes 4-7   version, u32, currently 1
      bytes 8-11  dtype code, u32: 0 = float32, 1 = float64
      bytes 12-19 rows, u64
      bytes 20-27 cols, u64
      then        rows*cols values, row-major

  Each EBF file has a JSON sidecar at ``<path>.manifest.json`` recording what
  the matrix is (see :class:`Manifest`).  float32 payloads are widened to
  float64 on load.

* CSV, accepted for small hand-written fixtures and detected by the ``.csv``
  extension.  The header row carries the names of the logical matrix rows
  (one CSV column per named row); each data line holds one coordinate of
  every named row, i.e. the file stores the transpose of the logical matrix.
  No sidecar is used; names travel in the header.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    ManifestError,
    NonFiniteEntry,
    TruncatedPayload,
    VersionMismatch,
    ZeroVector,
)

EBF_MAGIC = b"CXEB"
EBF_VERSION = 1
_HEADER = struct.Struct("<4sIIQQ")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 0, "f64": 1}

#: Manifest kinds used by the pipeline.  ``kind`` is an open set; composite
#: artifacts extend it (e.g. "projector_pair").
MATRIX_KINDS = ("concept_bank", "features", "vlm_embeddings", "head", "prompt_pairs")


def as_matrix(values, what: str = "matrix") -> np.ndarray:
    """Coerce ``values`` to a finite, C-contiguous float64 2-D array."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if arr.ndim != 2:
        raise DimensionMismatch(f"{what} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry(f"{what} contains NaN or infinite entries")
    return arr


def as_vector(values, what: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a finite, contiguous float64 1-D array."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{what} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry(f"{what} contains NaN or infinite entries")
    return arr


@dataclass
class Manifest:
    """Sidecar metadata for a stored matrix.

    ``names``, when present, labels the rows of the companion matrix and must
    match its row count.  ``dim`` is the column count (embedding dimension).
    ``extra`` carries free-form provenance (layouts, prompt templates,
    resolved CLI config, ...).
    """

    kind: str
    dim: int
    names: list[str] | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": int(self.dim),
            "names": list(self.names) if self.names is not None else None,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Manifest":
        try:
            kind = payload["kind"]
            dim = int(payload["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest missing or malformed field: {exc}") from exc
        names = payload.get("names")
        if names is not None:
            names = [str(n) for n in names]
        return cls(kind=str(kind), dim=dim, names=names, extra=dict(payload.get("extra") or {}))


def manifest_path(path) -> Path:
    """Sidecar location for a matrix file: the same path plus ``.manifest.json``."""
    return Path(str(path) + ".manifest.json")


def write_json(payload: dict, path) -> None:
    """Write JSON deterministically (sorted keys, fixed layout, trailing newline)."""
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def save_matrix(matrix, manifest: Manifest, path, precision: str = "f64") -> None:
    """Write ``matrix`` to ``path`` in EBF (or CSV when the path ends in .csv).

    ``precision`` selects the on-disk payload width for EBF files; in-memory
    data stays float64 either way.  The sidecar manifest is written next to
    the EBF file.
    """
    arr = as_matrix(matrix)
    rows, cols = arr.shape
    if manifest.names is not None and len(manifest.names) != rows:
        raise ManifestError(
            f"manifest names {len(manifest.names)} != matrix rows {rows}"
        )
    if int(manifest.dim) != cols:
        raise ManifestError(f"manifest dim {manifest.dim} != matrix cols {cols}")
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(arr, manifest, path)
        return
    if precision not in _DTYPE_CODES:
        raise ManifestError(f"unknown precision {precision!r}; expected f32 or f64")
    code = _DTYPE_CODES[precision]
    with np.errstate(over="ignore"):  # overflow is detected and raised below
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    if code == 0 and not np.all(np.isfinite(payload)):
        raise NonFiniteEntry("matrix overflows float32 storage; use precision='f64'")
    header = _HEADER.pack(EBF_MAGIC, EBF_VERSION, code, rows, cols)
    path.write_bytes(header + payload.tobytes(order="C"))
    write_json(manifest.to_dict(), manifest_path(path))


def load_matrix(path) -> tuple[np.ndarray, Manifest]:
    """Read an EBF or CSV matrix plus its manifest.

    EBF files missing a sidecar get a bare ``Manifest(kind="features")``.
    Raises :class:`BadMagic`, :class:`VersionMismatch`,
    :class:`TruncatedPayload` or :class:`NonFiniteEntry` on malformed files.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, code, rows, cols = _HEADER.unpack_from(blob)
    if magic != EBF_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}, expected {EBF_MAGIC!r}")
    if version != EBF_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {EBF_VERSION}")
    if code not in _DTYPES:
        raise ManifestError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = rows * cols * dtype.itemsize
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise TruncatedPayload(
            f"{path}: payload is {actual} bytes, header implies {expected}"
        )
    flat = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=_HEADER.size)
    arr = np.ascontiguousarray(flat.astype(np.float64).reshape(rows, cols))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry(f"{path}: payload contains NaN or infinite entries")
    mpath = manifest_path(path)
    if mpath.exists():
        try:
            manifest = Manifest.from_dict(json.loads(mpath.read_text()))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{mpath}: not valid JSON: {exc}") from exc
        if manifest.names is not None and len(manifest.names) != rows:
            raise ManifestError(
                f"{mpath}: names length {len(manifest.names)} != rows {rows}"
            )
        if manifest.dim != cols:
            raise ManifestError(f"{mpath}: dim {manifest.dim} != cols {cols}")
    else:
        manifest = Manifest(kind="features", dim=cols)
    return arr, manifest


def _save_csv(arr: np.ndarray, manifest: Manifest, path: Path) -> None:
    rows, cols = arr.shape
    names = manifest.names if manifest.names is not None else [f"row{i}" for i in range(rows)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for j in range(cols):
            # repr(float) round-trips exactly, so CSV keeps full f64 precision
            writer.writerow([repr(float(arr[i, j])) for i in range(rows)])


def _load_csv(path: Path) -> tuple[np.ndarray, Manifest]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        lines = [line for line in reader if line]
    if not lines:
        raise DataError(f"{path}: empty CSV file")
    names = [cell.strip() for cell in lines[0]]
    width = len(names)
    data = []
    for lineno, line in enumerate(lines[1:], start=2):
        if len(line) != width:
            raise DataError(f"{path}:{lineno}: expected {width} values, got {len(line)}")
        try:
            data.append([float(cell) for cell in line])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not data:
        raise DataError(f"{path}: CSV has a header but no data rows")
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64).T)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntry(f"{path}: CSV contains NaN or infinite entries")
    return arr, Manifest(kind="features", dim=arr.shape[1], names=names)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator.

    The algorithm is pinned to PCG64 so an identical seed yields an identical
    stream on every platform.  No global RNG state is used anywhere in the
    package; pass generators explicitly.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent PCG64 streams derived from one seed (stable order)."""
    return [np.random.Generator(np.random.PCG64(c)) for c in np.random.SeedSequence(int(seed)).spawn(n)]


NORM_EPS = 1e-12


def l2_normalize(v, eps: float = NORM_EPS) -> np.ndarray:
    """Scale a vector to unit Euclidean length.

    Raises :class:`ZeroVector` when the norm is at or below ``eps``; the
    direction of anything shorter is meaningless.
    """
    vec = as_vector(v)
    norm = float(np.linalg.norm(vec))
    if norm <= eps:
        raise ZeroVector(f"cannot normalize vector with norm {norm:g}")
    return vec / norm
