"""Binary file formats for embedding matrices and label vectors.

Matrix files (``VLF1``)::

    bytes 0..3   magic b"VLF1"
    bytes 4..7   row count, uint32 little-endian (>= 1)
    bytes 8..11  column count, uint32 little-endian (>= 1)
    bytes 12..   rows*cols float32 little-endian values, row-major

Label files (``VLL1``)::

    bytes 0..3   magic b"VLL1"
    bytes 4..7   count, uint32 little-endian
    bytes 8..    count uint32 little-endian class indices

Values are stored single precision; everything is promoted to double
precision on load. Writes go through a temporary file in the destination
directory and are renamed into place, so a crashed write never leaves a
half-written file behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from ._validation import as_float_matrix, check_labels, check_unit_rows
from .errors import CorruptFileError, FileFormatError, InvalidHeaderError, ValidationError

MATRIX_MAGIC = b"VLF1"
LABEL_MAGIC = b"VLL1"


@dataclass
class Dataset:
    """Embeddings with aligned labels.

    Attributes
    ----------
    features : ndarray of shape (n, d)
        Unit-norm rows, float64.
    labels : ndarray of shape (n,)
        Integer class indices in ``[0, class_count)``.
    class_count : int
        Number of classes, >= 2.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __len__(self) -> int:
        return self.features.shape[0]


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path: str, matrix) -> None:
    """Write a 2-D float matrix to ``path`` in VLF1 layout (float32 payload)."""
    m = as_float_matrix(matrix, "matrix")
    rows, cols = m.shape
    header = MATRIX_MAGIC + struct.pack("<II", rows, cols)
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def read_matrix(path: str) -> np.ndarray:
    """Read a VLF1 matrix file, returning a float64 array of shape (rows, cols).

    Raises
    ------
    FileFormatError
        If the magic bytes are wrong.
    InvalidHeaderError
        If the header declares zero rows or columns.
    CorruptFileError
        If the payload is shorter or longer than the header promises.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MATRIX_MAGIC:
        raise FileFormatError(f"{path}: not a VLF1 matrix file")
    if len(blob) < 12:
        raise CorruptFileError(f"{path}: truncated VLF1 header")
    rows, cols = struct.unpack("<II", blob[4:12])
    if rows == 0 or cols == 0:
        raise InvalidHeaderError(f"{path}: header declares {rows}x{cols} matrix")
    expected = 12 + 4 * rows * cols
    if len(blob) != expected:
        raise CorruptFileError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=12)
    return data.reshape(rows, cols).astype(np.float64)


def write_labels(path: str, labels) -> None:
    """Write integer class labels to ``path`` in VLL1 layout."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size and (np.any(arr < 0) or np.any(arr > 0xFFFFFFFF)):
        raise ValidationError("labels must fit in uint32")
    header = LABEL_MAGIC + struct.pack("<I", arr.size)
    payload = arr.astype("<u4").tobytes()
    _atomic_write(path, header + payload)


def read_labels(path: str) -> np.ndarray:
    """Read a VLL1 label file, returning an int64 array of shape (count,)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != LABEL_MAGIC:
        raise FileFormatError(f"{path}: not a VLL1 label file")
    if len(blob) < 8:
        raise CorruptFileError(f"{path}: truncated VLL1 header")
    (count,) = struct.unpack("<I", blob[4:8])
    expected = 8 + 4 * count
    if len(blob) != expected:
        raise CorruptFileError(
            f"{path}: expected {expected} bytes for {count} labels, got {len(blob)}"
        )
    return np.frombuffer(blob, dtype="<u4", offset=8).astype(np.int64)


def load_dataset(features_path: str, labels_path: str, class_count: int) -> Dataset:
    """Assemble a :class:`Dataset` from a matrix file and a label file.

    Feature rows are renormalized to unit norm; rows further than 1e-3 from
    unit norm trigger a :class:`UserWarning` first, and zero-norm rows are
    rejected.
    """
    if class_count < 2:
        raise ValidationError(f"class_count must be >= 2, got {class_count}")
    features = read_matrix(features_path)
    if features.shape[1] < 2:
        raise ValidationError(f"{features_path}: need at least 2 feature dimensions")
    labels = read_labels(labels_path)
    if labels.size == 0:
        raise ValidationError(f"{labels_path}: label file is empty")
    if labels.size != features.shape[0]:
        raise ValidationError(
            f"feature/label count mismatch: {features.shape[0]} rows vs "
            f"{labels.size} labels"
        )
    labels = check_labels(labels, class_count)
    features = check_unit_rows(features, "features", warn=True)
    return Dataset(features=features, labels=labels, class_count=int(class_count))
