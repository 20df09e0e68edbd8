"""
Persistence of precomputed embeddings, deterministic splits and batches.

EMB1 layout (little-endian throughout)::

    offset  size  field
    0       4     magic "EMB1"
    4       4     u32 version (1)
    8       8     u64 n_rows
    16      4     u32 n_cols
    20      1     u8 dtype (1 = IEEE-754 binary32)
    21      7     zero padding
    28      ...   n_rows * n_cols binary32 values, row-major

An optional label block follows the payload: magic "LBL1", u8 kind
(0 = class ids as u32, 1 = regression targets as binary32), then n_rows values.

Values are stored at 32-bit and promoted to 64-bit on load.
"""

import csv
import logging
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data_models import Labels, SplitSpec
from .errors import (
    BadMagicError,
    DataFormatError,
    NumericFailure,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    UsageError,
)
from .numkit import Matrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EMB_MAGIC = b"EMB1"
LABEL_MAGIC = b"LBL1"
EMB_VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sIQIB7x")
LABEL_HEADER = struct.Struct("<4sB")
LABEL_KIND_CODES = {"classification": 0, "regression": 1}
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over path."""
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_embeddings(matrix: Matrix, labels: Optional[Labels] = None) -> bytes:
    """Serialize a matrix (and labels) to EMB1 bytes.

    Raises:
        ShapeError: If matrix is not 2-D or labels are misaligned
        NumericFailure: If a value is not finite at 32-bit precision
    """
    values = np.asarray(matrix)
    if values.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got shape {values.shape}")
    payload = values.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NumericFailure("Cannot store non-finite values")
    n_rows, n_cols = payload.shape
    parts = [
        HEADER.pack(EMB_MAGIC, EMB_VERSION, n_rows, n_cols, DTYPE_FLOAT32),
        payload.tobytes(order="C"),
    ]
    if labels is not None:
        if labels.values.shape[0] != n_rows:
            raise ShapeError(f"{labels.values.shape[0]} labels for {n_rows} rows")
        dtype = "<u4" if labels.kind == "classification" else "<f4"
        parts.append(LABEL_HEADER.pack(LABEL_MAGIC, LABEL_KIND_CODES[labels.kind]))
        parts.append(labels.values.astype(dtype).tobytes())
    return b"".join(parts)


def decode_embeddings(
    blob: bytes, source: str = "<bytes>"
) -> Tuple[Matrix, Optional[Labels]]:
    """Parse EMB1 bytes; never returns partial data."""
    if len(blob) < HEADER.size:
        raise TruncatedPayloadError(source, HEADER.size, len(blob))
    magic, version, n_rows, n_cols, dtype = HEADER.unpack_from(blob, 0)
    if magic != EMB_MAGIC:
        raise BadMagicError(
            f"{source}: bad magic {magic.decode('latin-1')!r}, expected 'EMB1'"
        )
    if version != EMB_VERSION:
        raise UnsupportedFormatError(f"{source}: unknown EMB1 version {version}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedFormatError(f"{source}: unknown dtype code {dtype}")

    payload_size = n_rows * n_cols * 4
    available = len(blob) - HEADER.size
    if available < payload_size:
        raise TruncatedPayloadError(source, payload_size, available)
    offset = HEADER.size
    matrix = np.frombuffer(blob, dtype="<f4", count=n_rows * n_cols, offset=offset)
    matrix = matrix.reshape(n_rows, n_cols).astype(np.float64)
    offset += payload_size

    labels = None
    if offset < len(blob):
        labels, offset = _decode_labels(blob, offset, n_rows, source)
    if offset != len(blob):
        raise DataFormatError(f"{source}: {len(blob) - offset} trailing bytes")
    return matrix, labels


def _decode_labels(
    blob: bytes, offset: int, n_rows: int, source: str
) -> Tuple[Labels, int]:
    if len(blob) - offset < LABEL_HEADER.size:
        raise TruncatedPayloadError(source, LABEL_HEADER.size, len(blob) - offset)
    magic, kind_code = LABEL_HEADER.unpack_from(blob, offset)
    if magic != LABEL_MAGIC:
        raise BadMagicError(
            f"{source}: bad label magic {magic.decode('latin-1')!r}, expected 'LBL1'"
        )
    kinds = {code: kind for kind, code in LABEL_KIND_CODES.items()}
    if kind_code not in kinds:
        raise UnsupportedFormatError(f"{source}: unknown label kind {kind_code}")
    offset += LABEL_HEADER.size
    size = n_rows * 4
    if len(blob) - offset < size:
        raise TruncatedPayloadError(source, size, len(blob) - offset)
    dtype = "<u4" if kinds[kind_code] == "classification" else "<f4"
    values = np.frombuffer(blob, dtype=dtype, count=n_rows, offset=offset)
    return Labels(kinds[kind_code], values.copy()), offset + size


def write_embeddings(
    path: PathLike, matrix: Matrix, labels: Optional[Labels] = None
) -> None:
    """Write a matrix (and optional labels) as an EMB1 file, atomically."""
    atomic_write_bytes(path, encode_embeddings(matrix, labels))
    logger.debug("Wrote %s rows to %s", np.asarray(matrix).shape[0], path)


def read_embeddings(path: PathLike) -> Tuple[Matrix, Optional[Labels]]:
    """Read an EMB1 file as a float64 matrix plus optional labels."""
    blob = Path(path).read_bytes()
    return decode_embeddings(blob, str(path))


def read_csv_matrix(
    path: PathLike, label_column: Optional[str] = None, label_kind: str = "regression"
) -> Tuple[Matrix, Optional[Labels], List[str]]:
    """Read a header-first, comma-separated numeric CSV.

    Returns:
        Feature matrix, labels taken from ``label_column`` (if given) and the
        feature column names.
    """
    header: Optional[List[str]] = None
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, skipinitialspace=True)
        try:
            for cells in reader:
                if not any(cell.strip() for cell in cells):
                    continue
                if header is None:
                    header = [name.strip() for name in cells]
                    continue
                if len(cells) != len(header):
                    raise DataFormatError(
                        f"{path}:{reader.line_num}: {len(cells)} cells, "
                        f"header has {len(header)}"
                    )
                try:
                    rows.append([float(cell) for cell in cells])
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{reader.line_num}: {exc}") from exc
        except csv.Error as exc:
            raise DataFormatError(f"{path}:{reader.line_num}: {exc}") from exc
    if header is None:
        raise DataFormatError(f"{path}: empty CSV")
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))

    labels = None
    names = header
    if label_column is not None:
        if label_column not in header:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        column = header.index(label_column)
        labels = Labels(label_kind, table[:, column])
        table = np.delete(table, column, axis=1)
        names = [name for name in header if name != label_column]
    return table, labels, names


def ingest_csv(
    csv_path: PathLike,
    out_path: PathLike,
    label_column: Optional[str] = None,
    label_kind: str = "regression",
) -> Matrix:
    """Convert a CSV fixture into an EMB1 file."""
    matrix, labels, _ = read_csv_matrix(csv_path, label_column, label_kind)
    write_embeddings(out_path, matrix, labels)
    logger.info("Ingested %s (%d x %d) into %s", csv_path, *matrix.shape, out_path)
    return matrix


def make_splits(
    n: int, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0
) -> SplitSpec:
    """Seeded train/val/test partition of range(n).

    Val and test sizes are floor(n * ratio); the remainder goes to train.

    Raises:
        UsageError: If ratios are malformed or a split would be empty
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise UsageError(f"Expected three non-negative ratios, got {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"Split ratios must sum to 1, got {sum(ratios)}")
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if n < 3 or min(n_train, n_val, n_test) < 1:
        raise UsageError(f"n={n} is too small for non-empty {list(ratios)} splits")

    order = np.random.default_rng(seed).permutation(n)
    return SplitSpec(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train : n_train + n_val]),
        test=np.sort(order[n_train + n_val :]),
        seed=seed,
        ratios=tuple(float(r) for r in ratios),
    )


def holdout_split(n: int, fraction: float, seed: int) -> SplitSpec:
    """Train/val split with an empty test set (validation carve-out)."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"Validation fraction must be in (0, 1), got {fraction}")
    n_val = max(1, int(math.floor(n * fraction + 1e-9)))
    if n - n_val < 1:
        raise UsageError(f"n={n} is too small for a {fraction} validation split")
    order = np.random.default_rng(seed).permutation(n)
    return SplitSpec(
        train=np.sort(order[n_val:]),
        val=np.sort(order[:n_val]),
        test=np.empty(0, dtype=np.int64),
        seed=seed,
        ratios=(1.0 - fraction, fraction, 0.0),
    )


def batch_indices(
    indices: Sequence[int], batch_size: int, epoch: int, seed: int
) -> List[np.ndarray]:
    """One epoch of batches: a permutation seeded by (seed, epoch), chunked.

    The last batch may be short; no index repeats within an epoch.
    """
    if batch_size < 1:
        raise UsageError("Batch size must be at least 1")
    pool = np.asarray(indices, dtype=np.int64)
    if pool.size == 0:
        raise UsageError("Cannot batch an empty split")
    order = np.random.default_rng([seed, epoch]).permutation(pool)
    starts = range(0, pool.size, batch_size)
    return [order[start : start + batch_size] for start in starts]
