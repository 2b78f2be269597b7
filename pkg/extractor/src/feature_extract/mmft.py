"""Writer for the MMFT feature-matrix container.

Wire format, little-endian throughout:

    magic   4 bytes  b"MMFT"
    version u32      currently 1
    rows    u32
    cols    u32
    payload rows*cols float32, C row-major

A companion text file ``<path>.ids`` carries one entity label per line;
line i labels row i. Readers match rows to their own vocabulary through
the ids file, so row order in the payload is not significant beyond that
correspondence.
"""

import struct

import numpy as np

MMFT_MAGIC = b"MMFT"
MMFT_VERSION = 1


def write_mmft(path, matrix, labels):
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if matrix.shape[0] != len(labels):
        raise ValueError(
            f"{matrix.shape[0]} rows but {len(labels)} labels")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("feature matrix contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(MMFT_MAGIC)
        fh.write(struct.pack("<III", MMFT_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))
    with open(str(path) + ".ids", "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(label + "\n")
