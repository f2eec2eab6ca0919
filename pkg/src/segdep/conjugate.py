"""Conjugate updates for quadratic regression with unknown noise variance.

Within a segment the response is y_t = h(t) . beta + noise, where
h(t) = (1, dx, dx^2) and dx is measured from the segment's first x.
With beta | v ~ N(mean, v*cov) and v ~ InvGamma(dof/2, ssq/2), each
observation updates (dof, ssq, mean, cov) in closed form, and the
one-step-ahead predictive is a scaled Student-t.  The batched versions
operate on arrays with one row per filter particle.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .model import NIGParams, NumericalError

# eigenvalues of a coefficient covariance may round slightly negative;
# below this they indicate a real defect
_EIG_FLOOR = -1e-10


def design_row(x: np.ndarray, start: int, t: int) -> np.ndarray:
    """Regression row for observation ``t`` (1-based) in a segment whose
    first observation is ``start + 1`` (``start`` = 0-based index of the
    preceding changepoint; 0 for the first segment)."""
    dx = x[t - 1] - x[start]
    return np.array([1.0, dx, dx * dx])


def design_rows(x: np.ndarray, starts: np.ndarray, t: int) -> np.ndarray:
    """Rows for observation ``t`` under several candidate segment starts."""
    dx = x[t - 1] - x[starts]
    return np.stack([np.ones_like(dx), dx, dx * dx], axis=1)


def design_matrix(x: np.ndarray, start: int, lo: int, hi: int) -> np.ndarray:
    """Rows for observations lo..hi (1-based, inclusive) of one segment."""
    dx = x[lo - 1 : hi] - x[start]
    return np.stack([np.ones_like(dx), dx, dx * dx], axis=1)


def clamp_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrise, clamp eigenvalues in [-1e-10, 0) to zero, and reject
    anything more negative.  Batched over leading axes; only rows that
    actually need clamping are reconstructed."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    w = np.linalg.eigvalsh(cov)
    wmin = w.min(axis=-1)
    if np.any(wmin < _EIG_FLOOR):
        raise NumericalError(
            f"coefficient covariance lost positive semidefiniteness "
            f"(min eigenvalue {wmin.min():.3e})"
        )
    bad = wmin < 0.0
    if not np.any(bad):
        return cov
    if cov.ndim == 2:
        wb, vb = np.linalg.eigh(cov)
        fixed = (vb * np.maximum(wb, 0.0)) @ vb.T
        return 0.5 * (fixed + fixed.T)
    wb, vb = np.linalg.eigh(cov[bad])
    fixed = (vb * np.maximum(wb, 0.0)[..., None, :]) @ np.swapaxes(vb, -1, -2)
    cov = cov.copy()
    cov[bad] = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
    return cov


def update_arrays(
    dof: np.ndarray,
    ssq: np.ndarray,
    mean: np.ndarray,
    cov: np.ndarray,
    H: np.ndarray,
    y: float,
):
    """One-observation conjugate update, batched over the leading axis.

    Parameters
    ----------
    dof, ssq : (N,) arrays
    mean : (N, 3) array
    cov : (N, 3, 3) array
    H : (N, 3) array, one regression row per particle
    y : scalar response

    Returns (dof', ssq', mean', cov').
    """
    ch = np.einsum("nij,nj->ni", cov, H)
    q = np.einsum("ni,ni->n", H, ch) + 1.0
    e = y - np.einsum("ni,ni->n", H, mean)
    mean2 = mean + ch * (e / q)[:, None]
    cov2 = cov - ch[:, None, :] * ch[:, :, None] / q[:, None, None]
    cov2 = clamp_psd(cov2)
    return dof + 1.0, ssq + e * e / q, mean2, cov2


def posterior_update(post: NIGParams, h: np.ndarray, y: float) -> NIGParams:
    """Absorb one observation into a segment's NIG state."""
    dof, ssq, mean, cov = update_arrays(
        np.array([post.dof]),
        np.array([post.ssq]),
        post.mean[None],
        post.cov[None],
        np.asarray(h, dtype=float)[None],
        float(y),
    )
    return NIGParams(float(dof[0]), float(ssq[0]), mean[0], cov[0])


def log_predictive_arrays(
    dof: np.ndarray,
    ssq: np.ndarray,
    mean: np.ndarray,
    cov: np.ndarray,
    H: np.ndarray,
    y: float,
) -> np.ndarray:
    """Log one-step predictive density, batched; the improper state
    (dof == 0 or ssq == 0) contributes density 1 by convention."""
    ch = np.einsum("nij,nj->ni", cov, H)
    q = np.einsum("ni,ni->n", H, ch) + 1.0
    center = np.einsum("ni,ni->n", H, mean)
    proper = (dof > 0.0) & (ssq > 0.0)
    dof_s = np.where(proper, dof, 1.0)
    ssq_s = np.where(proper, ssq, 1.0)
    scale2 = ssq_s * q / dof_s
    dev2 = (y - center) ** 2
    out = (
        gammaln(0.5 * (dof_s + 1.0))
        - gammaln(0.5 * dof_s)
        - 0.5 * np.log(dof_s * np.pi * scale2)
        - 0.5 * (dof_s + 1.0) * np.log1p(dev2 / (dof_s * scale2))
    )
    return np.where(proper, out, 0.0)


def predictive_density(post: NIGParams, h: np.ndarray, y: float) -> float:
    """One-step-ahead density of ``y`` for the row ``h`` (Student-t with
    dof degrees of freedom, centred at h . mean, squared scale
    ssq * (h cov h^T + 1) / dof); returns 1.0 for the improper state."""
    out = log_predictive_arrays(
        np.array([post.dof]),
        np.array([post.ssq]),
        post.mean[None],
        post.cov[None],
        np.asarray(h, dtype=float)[None],
        float(y),
    )
    return float(np.exp(out[0]))


def batch_update_raw(
    dof: float, ssq: float, mean: np.ndarray, cov: np.ndarray, H: np.ndarray, ys: np.ndarray
):
    """Multi-observation conjugate update on raw arrays.

    Algebraically identical to folding in the rows of ``H`` one at a
    time (the rank-one updates telescope), but does a single solve
    against the k x k inner matrix, with cov factored as W W^T.
    """
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < _EIG_FLOOR:
        raise NumericalError("coefficient covariance lost positive semidefiniteness")
    W = v * np.sqrt(np.maximum(w, 0.0))
    U = H @ W
    M = U.T @ U + np.eye(W.shape[1])
    e = ys - H @ mean
    Ue = U.T @ e
    # one factorisation serves both the mean gain and the new covariance
    rhs = np.concatenate([Ue[:, None], W.T], axis=1)
    sol = np.linalg.solve(M, rhs)
    mean2 = mean + W @ sol[:, 0]
    cov2 = W @ sol[:, 1:]
    cov2 = 0.5 * (cov2 + cov2.T)
    ssq2 = ssq + float(e @ e) - float(Ue @ sol[:, 0])
    return dof + ys.size, ssq2, mean2, cov2


def batch_update(post: NIGParams, H: np.ndarray, ys: np.ndarray) -> NIGParams:
    """Absorb a block of observations at once; equals a sequence of
    single-observation updates."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    ys = np.asarray(ys, dtype=float).ravel()
    if H.shape[0] != ys.size:
        raise ValueError("H and ys disagree on the number of observations")
    if ys.size == 0:
        return post
    dof, ssq, mean, cov = batch_update_raw(post.dof, post.ssq, post.mean, post.cov, H, ys)
    return NIGParams(dof, ssq, mean, clamp_psd(cov))
