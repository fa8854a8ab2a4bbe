"""Columnar text serialization for grid fields.

Format: one header line ``dim N type_tag rank`` followed by one line per
grid point in row-major order, each holding the field's complex entries as
``re im`` pairs (row-major within the matrix for matrix-valued fields).
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .torus import AffineTorus

TYPE_TAGS = ("scalar", "metric", "hermitian", "endo")


def dump_field(path, torus: AffineTorus, values: np.ndarray, tag: str) -> None:
    if tag not in TYPE_TAGS:
        raise ValidationError(f"unknown field tag {tag!r}")
    values = np.asarray(values, dtype=complex)
    n, N = torus.dim, torus.resolution
    if tag == "scalar":
        rank = 1
        flat = values.reshape(N**n, 1)
    else:
        rank = values.shape[-1]
        flat = values.reshape(N**n, rank * rank)
    with open(path, "w") as fh:
        fh.write(f"{n} {N} {tag} {rank}\n")
        for row in flat:
            fh.write(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
            fh.write("\n")


def load_field(path):
    """Returns (dim, N, tag, rank, array)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValidationError(f"malformed field header in {path}")
        n, N, tag, rank = int(header[0]), int(header[1]), header[2], int(header[3])
        if tag not in TYPE_TAGS:
            raise ValidationError(f"unknown field tag {tag!r} in {path}")
        rows = []
        for line in fh:
            nums = [float(x) for x in line.split()]
            rows.append([complex(nums[2 * i], nums[2 * i + 1])
                         for i in range(len(nums) // 2)])
    data = np.array(rows, dtype=complex)
    if data.shape[0] != N**n:
        raise ValidationError(
            f"{path}: expected {N**n} grid rows, found {data.shape[0]}"
        )
    shape = (N,) * n
    if tag == "scalar":
        return n, N, tag, rank, data[:, 0].reshape(shape)
    return n, N, tag, rank, data.reshape(shape + (rank, rank))
