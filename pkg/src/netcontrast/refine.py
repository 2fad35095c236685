"""Stage three: debiased refinement of the shared low-rank matrix.

After the node support is removed, two independent views of the shared
matrix are spliced into one asymmetric composite whose left/right eigenpairs
carry a multiplicative bias that cancels in the product of left and right
linear forms.  This module provides the splicing, the asymmetric eigen
decomposition, the entrywise debiased estimator, an eigenspace whitening
correction built from two extra independent copies, and the error metrics
used to compare estimators.
"""

import itertools
import logging
import math

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spectral import RankDecomposition, _sign_fix, spectral_init

logger = logging.getLogger(__name__)


def mask_support(mat, support):
    """Zero out the support rows and columns, keeping the complement block."""
    mat = np.asarray(mat, dtype=float)
    idx = support.indices if hasattr(support, "indices") else np.asarray(support, dtype=int)
    out = mat.copy()
    if idx.size:
        out[idx, :] = 0.0
        out[:, idx] = 0.0
    return out


def asymmetric_combine(upper, lower):
    """Strict upper triangle from the first view, lower triangle and diagonal
    from the second."""
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    if upper.shape != lower.shape or upper.ndim != 2 or upper.shape[0] != upper.shape[1]:
        raise ValueError("views must be square matrices of equal shape")
    return np.triu(upper, 1) + np.tril(lower, 0)


def asymmetric_eigenpairs(mat, rank):
    """Top-rank left/right eigenpairs of a (generally asymmetric) matrix.

    Eigenvalues are ordered by decreasing magnitude.  Imaginary parts below
    1e-6 * |eigenvalue| are dropped; larger ones raise LinAlgError.  Right
    vectors get the usual sign convention (first largest-magnitude entry
    nonnegative) and each left vector is flipped so its overlap with the
    matching right vector is positive.
    """
    mat = np.asarray(mat, dtype=float)
    nt = mat.shape[0]
    if not 1 <= rank <= nt:
        raise ValueError(f"need 1 <= rank <= n, got rank={rank}")
    w, vl, vr = scipy.linalg.eig(mat, left=True, right=True)
    order = np.argsort(-np.abs(w), kind="stable")[:rank]
    w = w[order]
    vl = vl[:, order]
    vr = vr[:, order]
    bad = np.abs(w.imag) > 1e-6 * np.maximum(np.abs(w), 1e-300)
    if np.any(bad):
        raise np.linalg.LinAlgError(
            f"top-{rank} eigenvalues are not real: {w[bad]}"
        )
    w = w.real
    vl = vl.real.copy()
    vr = vr.real.copy()
    vr /= np.linalg.norm(vr, axis=0)
    vl /= np.linalg.norm(vl, axis=0)
    _sign_fix(vr)
    flip = np.where(np.sum(vl * vr, axis=0) < 0, -1.0, 1.0)
    vl *= flip
    return RankDecomposition(right=vr, left=vl, values=w)


def _overlaps(dec):
    ov = np.sum(dec.left * dec.right, axis=0)
    if np.any(np.abs(ov) < 1e-10):
        raise ValueError("left/right eigenvector overlap is degenerate")
    return ov


def linear_form_estimate(dec, a, l):
    """Debiased |<a, u_l>| estimate from one asymmetric decomposition.

    The geometric mean of the left and right linear forms, normalized by the
    left/right overlap, cancels the first-order eigenvector bias; the result
    is capped at ||a||_2.
    """
    a = np.asarray(a, dtype=float)
    ov = _overlaps(dec)
    raw = math.sqrt(abs(float(a @ dec.right[:, l]) * float(a @ dec.left[:, l]) / ov[l]))
    return min(raw, float(np.linalg.norm(a)))


def debiased_eigenvectors(dec):
    """Entrywise debiased eigenvector matrix.

    Each entry is the coordinate linear-form estimate with the sign of the
    right eigenvector entry (zero gets +)."""
    ov = _overlaps(dec)
    raw = np.sqrt(np.abs(dec.right * dec.left / ov[None, :]))
    signs = np.where(dec.right >= 0, 1.0, -1.0)
    return signs * np.minimum(raw, 1.0)


def reconstruct_symmetric(vectors, values):
    recon = (vectors * values) @ vectors.T
    return 0.5 * (recon + recon.T)


@dataclass
class CorrectionFactor:
    """Symmetric positive-definite whitening factor for the right eigenvectors."""

    psi: np.ndarray
    g: np.ndarray
    g_symm: np.ndarray


def eigenspace_correction(dec, copy1, copy2):
    """Whitening correction from two extra independent copies of the shared
    matrix.

    Inverts the eigenvalue-scaled quadratic form of the two copies on the
    right eigenspace, symmetrizes, and takes the principal square root of
    its eigen-decomposition.  Raises LinAlgError when the quadratic form is
    numerically singular or the symmetrized inverse has a non-positive
    eigenvalue.
    """
    u = dec.right
    lam = dec.values
    copy1 = np.asarray(copy1, dtype=float)
    copy2 = np.asarray(copy2, dtype=float)
    scaled = (u.T @ copy1 @ copy2 @ u) / np.outer(lam, lam)
    if np.linalg.cond(scaled) > 1e12:
        raise np.linalg.LinAlgError("eigenspace quadratic form is numerically singular")
    g = np.linalg.inv(scaled)
    g_symm = 0.5 * (g + g.T)
    evals, gamma = np.linalg.eigh(g_symm)
    if np.any(evals <= 0):
        raise np.linalg.LinAlgError(
            f"symmetrized correction has non-positive spectrum: {evals}"
        )
    psi = (gamma * np.sqrt(evals)) @ gamma.T
    psi = 0.5 * (psi + psi.T)
    return CorrectionFactor(psi=psi, g=g, g_symm=g_symm)


def whitened_reconstruction(dec, correction):
    """Shared-matrix estimate from whitened right eigenvectors."""
    psi = correction.psi if isinstance(correction, CorrectionFactor) else np.asarray(correction)
    return reconstruct_symmetric(dec.right @ psi, dec.values)


def spectral_baseline(mats, rank):
    """Plain rank-r truncation of the (averaged) symmetric observations."""
    return spectral_init(mats, rank).reconstruct()


def subspace_error(uest, ustar):
    """Two-to-infinity distance between column spaces, minimized over the
    polar alignment and (for rank <= 10) all per-column sign flips."""
    uest = np.asarray(uest, dtype=float)
    ustar = np.asarray(ustar, dtype=float)
    if uest.shape != ustar.shape:
        raise ValueError("shapes must match")
    uu, _, vt = np.linalg.svd(uest.T @ ustar)
    candidates = [uu @ vt]
    r = ustar.shape[1]
    if r <= 10:
        for signs in itertools.product((1.0, -1.0), repeat=r):
            candidates.append(np.diag(signs))
    return min(
        float(np.max(np.linalg.norm(uest @ a - ustar, axis=1)))
        for a in candidates
    )


def entry_error(a, b):
    """Largest absolute entry difference."""
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
