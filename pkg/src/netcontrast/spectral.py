"""Stage one: spectral estimate of the shared matrix, node screening, residuals,
and the data-driven noise scale."""

from dataclasses import dataclass
import math

import numpy as np


@dataclass
class RankDecomposition:
    """Leading rank-r eigenpairs: right/left vectors and real eigenvalues.

    For symmetric input left is right; values are sorted by magnitude
    descending.  reconstruct() returns the symmetrized right-side
    reconstruction U diag(values) U^T.
    """

    right: np.ndarray
    left: np.ndarray
    values: np.ndarray

    @property
    def n(self):
        return self.right.shape[0]

    @property
    def rank(self):
        return self.right.shape[1]

    def reconstruct(self):
        a = (self.right * self.values) @ self.right.T
        return 0.5 * (a + a.T)


def _sign_fix(vecs):
    # make each column's first maximal-magnitude entry nonnegative
    for l in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, l]))
        if vecs[j, l] < 0:
            vecs[:, l] = -vecs[:, l]
    return vecs


def spectral_init(g0, rank):
    """Average the control group and keep the top-`rank` eigenpairs by |λ|.

    Parameters
    ----------
    g0 : matrix or list of matrices
        Control observations; averaged elementwise before decomposition.
    rank : int
        Number of leading eigenpairs (by magnitude), 0 <= rank <= n.

    Returns
    -------
    RankDecomposition
    """
    mats = g0 if isinstance(g0, (list, tuple)) else [g0]
    if not mats:
        raise ValueError("need at least one control matrix")
    mean = np.mean(np.stack([np.asarray(y, dtype=float) for y in mats]), axis=0)
    n = mean.shape[0]
    if rank > n:
        raise ValueError(f"rank {rank} exceeds dimension {n}")
    w, v = np.linalg.eigh(mean)
    order = np.argsort(-np.abs(w), kind="stable")[:rank]
    vecs = _sign_fix(v[:, order].copy())
    return RankDecomposition(right=vecs, left=vecs, values=w[order])


@dataclass
class ScreeningResult:
    """Low-coherence node filter: kept indices, row norms, threshold used."""

    kept: np.ndarray
    row_norms: np.ndarray
    threshold: float

    @property
    def kept_count(self):
        return self.kept.size


def select_low_coherence(dec, c_screen=2.0):
    """Keep nodes whose eigenvector row norm is at most c_screen * n^{-1/4}."""
    row_norms = np.linalg.norm(dec.right, axis=1)
    threshold = c_screen * dec.n ** -0.25
    kept = np.flatnonzero(row_norms <= threshold)
    if kept.size == 0:
        raise ValueError(
            f"screening kept no nodes at c_screen={c_screen:g}; "
            "raise the constant or disable screening"
        )
    return ScreeningResult(kept=kept, row_norms=row_norms, threshold=threshold)


def form_residual(y1, dec, kept=None):
    """Treatment minus the reconstructed shared estimate, on kept x kept.

    kept may be a ScreeningResult or an index array; None keeps every node.
    Returned matrix is reindexed to |kept| x |kept|; the kept array itself is
    the local-to-global index map.
    """
    y1 = np.asarray(y1, dtype=float)
    resid = y1 - dec.reconstruct()
    if kept is None:
        return resid
    idx = kept.kept if isinstance(kept, ScreeningResult) else np.asarray(kept, dtype=int)
    return resid[np.ix_(idx, idx)]


def estimate_noise_scale(y0, dec, c_s=2.0):
    """Noise scale from low-leverage rows of one control residual.

    tau = ||(Y0 - M0)_{SxS}||_F / |S| over S = rows with sqrt(n) * row norm
    <= c_s * sqrt(log n).  Within a constant band of the true per-copy sigma
    with high probability.
    """
    y0 = np.asarray(y0, dtype=float)
    n = dec.n
    row_norms = np.linalg.norm(dec.right, axis=1)
    s = np.flatnonzero(math.sqrt(n) * row_norms <= c_s * math.sqrt(max(math.log(n), 0.0)))
    if s.size < 2:
        raise ValueError(
            f"noise-scale index set has {s.size} rows (< 2) at c_s={c_s:g}"
        )
    resid = (y0 - dec.reconstruct())[np.ix_(s, s)]
    return float(np.linalg.norm(resid)) / s.size
