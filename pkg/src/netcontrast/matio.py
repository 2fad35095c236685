"""Plain-text square-matrix files.

Format: first line is the dimension n, followed by n lines of n
whitespace-separated decimal floats.  Readers reject asymmetric input.
"""

import numpy as np

SYMMETRY_ATOL = 1e-9


def write_matrix(path, mat):
    """Write a square matrix in the text format (17 significant digits)."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    n = mat.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix(path, require_symmetric=True):
    """Read a matrix written by write_matrix.

    Parameters
    ----------
    path : str or Path
    require_symmetric : bool
        When True (default), reject matrices whose max |A - A.T| entry
        exceeds 1e-9.

    Returns
    -------
    (n, n) ndarray
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        try:
            n = int(header.strip())
        except ValueError:
            raise ValueError(f"{path}: first line must be the dimension") from None
        if n < 1:
            raise ValueError(f"{path}: dimension must be positive, got {n}")
        mat = np.loadtxt(fh, ndmin=2)
    if mat.shape != (n, n):
        raise ValueError(f"{path}: expected a {n}x{n} matrix, got {mat.shape}")
    if require_symmetric:
        dev = float(np.max(np.abs(mat - mat.T)))
        if dev > SYMMETRY_ATOL:
            raise ValueError(f"{path}: matrix is asymmetric (max deviation {dev:.3g})")
    return mat
