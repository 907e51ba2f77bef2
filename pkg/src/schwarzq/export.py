"""File export helpers: MatrixMarket matrices, plain CSV vectors and states."""
from __future__ import annotations

import csv

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "write_matrix_market",
    "write_vector_csv",
    "write_statevector_csv",
    "write_rows_csv",
]


def write_matrix_market(path, M) -> None:
    """Matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(M))


def write_vector_csv(path, v: np.ndarray) -> None:
    """One value per line, 17 significant digits."""
    np.savetxt(path, np.asarray(v, dtype=float), fmt="%.17g")


def write_statevector_csv(path, state: np.ndarray) -> None:
    """Rows of (basis index, amplitude)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "amplitude"])
        for i, a in enumerate(np.asarray(state)):
            w.writerow([i, f"{a:.17g}"])


def write_rows_csv(path, rows: list[dict], fieldnames=None) -> None:
    """Dictionaries as CSV; floats with 6 significant digits."""
    if not rows:
        return
    if fieldnames is None:
        fieldnames = list(rows[0].keys())

    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else v

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt(v) for k, v in row.items() if k in fieldnames})
