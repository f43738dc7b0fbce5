"""Matrix and metrics I/O: headerless CSV, a small binary format, JSONL.

CSV values are written with 17 significant digits so a write/read round
trip is faithful.  The binary format is magic ``GCAM``, a version byte,
two little-endian u64 dims, then row-major little-endian f64 data.
"""

import json
import struct

import numpy as np

MAGIC = b"GCAM"
VERSION = 1

# Known metric names for JSONL records.
METRIC_REGISTRY = frozenset(
    {
        "step",
        "epoch",
        "loss",
        "alignment",
        "uniformity",
        "marginal_error",
        "probe_accuracy",
        "class_accuracy",
        "domain_accuracy",
        "alpha",
        "beta",
        "seed",
        "lr",
        "dual_objective",
        "row_residual",
        "col_residual",
        "iterations",
        "compactness",
        "wall_time",
    }
)


class MatrixIOError(Exception):
    """Raised for malformed matrix files or records."""


def read_matrix_csv(path):
    """Parse a rectangular headerless numeric CSV into a 2-D float array."""
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise MatrixIOError(f"ragged row {i + 1}: expected {width} columns, got {len(fields)}")
            parsed = []
            for j, tok in enumerate(fields):
                try:
                    val = float(tok)
                except ValueError:
                    raise MatrixIOError(f"parse error at row {i + 1}, column {j + 1}: {tok!r}") from None
                if not np.isfinite(val):
                    raise MatrixIOError(f"non-finite value at row {i + 1}, column {j + 1}")
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise MatrixIOError(f"empty matrix file: {path}")
    return np.array(rows, dtype=np.float64)


def write_matrix_csv(matrix, path):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise MatrixIOError("expected a 2-D matrix")
    if not np.all(np.isfinite(matrix)):
        raise MatrixIOError("refusing to write non-finite values")
    with open(path, "w", encoding="ascii") as fh:
        for row in matrix:
            fh.write(",".join("%.17g" % x for x in row))
            fh.write("\n")


def read_matrix_bin(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise MatrixIOError(f"bad magic in {path}: {raw[:4]!r}")
    if len(raw) < 5 or raw[4] != VERSION:
        raise MatrixIOError("unsupported version")
    if len(raw) < 21:
        raise MatrixIOError("truncated header")
    rows, cols = struct.unpack("<QQ", raw[5:21])
    need = 21 + 8 * rows * cols
    if len(raw) < need:
        raise MatrixIOError(f"truncated payload: expected {need} bytes, got {len(raw)}")
    data = np.frombuffer(raw[21:need], dtype="<f8").reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise MatrixIOError("non-finite value in binary payload")
    return data.astype(np.float64)


def write_matrix_bin(matrix, path):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise MatrixIOError("expected a 2-D matrix")
    if not np.all(np.isfinite(matrix)):
        raise MatrixIOError("refusing to write non-finite values")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(matrix.astype("<f8").tobytes())


def append_metrics_jsonl(record, path):
    """Append one metrics record as a single sorted-key JSON line."""
    clean = {}
    for key, val in record.items():
        if key not in METRIC_REGISTRY:
            raise MatrixIOError(f"unknown metric name: {key}")
        val = float(val)
        if not np.isfinite(val):
            raise MatrixIOError(f"non-finite metric {key}")
        if val == int(val) and abs(val) < 2**53:
            val = int(val)
        clean[key] = val
    line = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    with open(path, "a", encoding="ascii") as fh:
        fh.write(line + "\n")
