"""Shape-based distance between z-normalized series.

The distance is 1 - max_w NCC_w(x, y) where NCC is the cross-correlation over
all shifts normalized by the geometric mean of the two zero-lag
autocorrelations. Cross-correlation uses zero padding (metric series are not
periodic) and is computed via FFTs of length >= 2n-1. The maximizing shift w
is reported with the convention that a positive w means the second series lags
the first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft

_TIE_EPS = 1e-12


class DistanceError(ValueError):
    """Inputs unsuitable for shape comparison."""


@dataclass(frozen=True)
class SbdResult:
    distance: float
    shift: int


def _as_vector(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise DistanceError(f"{name} must be a 1-d vector of length >= 2")
    if not np.all(np.isfinite(arr)):
        raise DistanceError(f"{name} contains non-finite values")
    if np.ptp(arr) == 0.0:
        raise DistanceError(f"{name} is constant; shape distance is undefined")
    return arr


def cross_correlation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """CC_w = sum_t x[t] * y[t+w] for w in [-(n-1), n-1], zero padded.

    Index i of the result corresponds to shift w = i - (n - 1).
    """
    n = len(x)
    size = _fft.next_fast_len(2 * n - 1)
    cc = _fft.irfft(_fft.rfft(y, size) * _fft.rfft(x[::-1], size), size)
    return cc[: 2 * n - 1]


def ncc(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation over all shifts; values lie in [-1, 1]."""
    denom = float(np.linalg.norm(x) * np.linalg.norm(y))
    return cross_correlation(x, y) / denom


def sbd(x: np.ndarray, y: np.ndarray) -> SbdResult:
    """Shape-based distance in [0, 2] plus the maximizing shift.

    Ties on the correlation peak resolve to the smallest |w| (then the smaller
    signed w) so results are deterministic.
    """
    xa = _as_vector(x, "x")
    ya = _as_vector(y, "y")
    if len(xa) != len(ya):
        raise DistanceError(f"length mismatch: {len(xa)} vs {len(ya)}")
    values = ncc(xa, ya)
    n = len(xa)
    best = float(np.max(values))
    candidates = np.nonzero(values >= best - _TIE_EPS)[0]
    shifts = candidates - (n - 1)
    shift = int(min(shifts, key=lambda w: (abs(int(w)), int(w))))
    return SbdResult(distance=1.0 - best, shift=shift)


def shift_align(y: np.ndarray, shift: int) -> np.ndarray:
    """Slide y by ``shift`` positions, padding with zeros (no wraparound).

    A positive shift moves the series content to the right, i.e. it realizes
    "y lags by ``shift``" so that shifting by -sbd(ref, y).shift aligns y onto
    ref.
    """
    n = len(y)
    out = np.zeros(n, dtype=float)
    if shift == 0:
        out[:] = y
    elif shift > 0:
        out[shift:] = y[: n - shift]
    else:
        out[: n + shift] = y[-shift:]
    return out


def _batch_ncc_max(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max NCC and argmax shift for every row pair (X[i], Y[j]).

    Returns (best, shift) arrays of shape (len(X), len(Y)). Used for distance
    matrices and centroid assignment where calling :func:`sbd` pairwise would
    pay the FFT setup cost repeatedly.
    """
    n = X.shape[1]
    size = _fft.next_fast_len(2 * n - 1)
    fx_rev = _fft.rfft(X[:, ::-1], size, axis=1)
    fy = _fft.rfft(Y, size, axis=1)
    norms_x = np.linalg.norm(X, axis=1)
    norms_y = np.linalg.norm(Y, axis=1)
    best = np.empty((X.shape[0], Y.shape[0]))
    shift = np.empty((X.shape[0], Y.shape[0]), dtype=int)
    w = np.arange(2 * n - 1) - (n - 1)
    # tie preference: smallest |w|, then smaller signed w
    order = np.lexsort((w, np.abs(w)))
    for i in range(X.shape[0]):
        cc = _fft.irfft(fx_rev[i][None, :] * fy, size, axis=1)[:, : 2 * n - 1]
        cc /= norms_x[i] * norms_y[:, None]
        peak = cc.max(axis=1)
        ordered = cc[:, order]
        idx = (ordered >= peak[:, None] - _TIE_EPS).argmax(axis=1)
        best[i] = peak
        shift[i] = w[order[idx]]
    return best, shift


def sbd_matrix(X: np.ndarray) -> np.ndarray:
    """Symmetric pairwise SBD matrix for the rows of X."""
    best, _ = _batch_ncc_max(X, X)
    dist = 1.0 - best
    dist = np.minimum(dist, dist.T)  # enforce exact symmetry against fp jitter
    np.fill_diagonal(dist, 0.0)
    return dist


def sbd_to_centroids(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances and aligning shifts from every row of X to every centroid."""
    best, shift = _batch_ncc_max(centroids, X)
    return 1.0 - best.T, shift.T
