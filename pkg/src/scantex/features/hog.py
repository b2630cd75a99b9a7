"""Histogram of oriented gradients on a fixed block grid."""

import numpy as np

from .._accel import USE_NUMBA, njit
from ..errors import DimensionError
from ..imgcore import as_plane

EPS = 1e-6


def gradients(plane):
    """Central differences ``f(x+1) - f(x-1)`` with replicated borders."""
    p = np.pad(plane, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def _orientation_bins(gx, gy, bins):
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.floor(angle / (np.pi / bins)).astype(np.intp)
    return np.minimum(idx, bins - 1)


@njit
def _hog_loops(mag, bin_idx, row_block, col_block, n_rows, n_cols, bins):
    hist = np.zeros((n_rows, n_cols, bins))
    h, w = mag.shape
    for y in range(h):
        by = row_block[y]
        for x in range(w):
            hist[by, col_block[x], bin_idx[y, x]] += mag[y, x]
    return hist


def _hog_numpy(mag, bin_idx, row_block, col_block, n_rows, n_cols, bins):
    flat = (row_block[:, None] * n_cols + col_block[None, :]) * bins + bin_idx
    hist = np.bincount(flat.ravel(), weights=mag.ravel(), minlength=n_rows * n_cols * bins)
    return hist.reshape(n_rows, n_cols, bins)


def _block_index(n, blocks):
    edges = np.linspace(0, n, blocks + 1).round().astype(np.intp)
    return np.repeat(np.arange(blocks), np.diff(edges))


def feat_hog(plane, blocks=(10, 12), bins=9, use_numba=None):
    """Magnitude-weighted unsigned orientation histograms, L2-normalised per block.

    ``blocks`` is (rows, cols) of the grid; output length rows * cols * bins.
    """
    plane = as_plane(plane)
    n_rows, n_cols = blocks
    if plane.shape[0] < n_rows or plane.shape[1] < n_cols:
        raise DimensionError(f"plane {plane.shape} smaller than a {n_rows}x{n_cols} block grid")
    gx, gy = gradients(plane)
    mag = np.hypot(gx, gy)
    bin_idx = _orientation_bins(gx, gy, bins)
    rb = _block_index(plane.shape[0], n_rows)
    cb = _block_index(plane.shape[1], n_cols)
    if use_numba is None:
        use_numba = USE_NUMBA
    kernel = _hog_loops if use_numba else _hog_numpy
    hist = kernel(mag, bin_idx, rb, cb, n_rows, n_cols, bins)
    norm = np.sqrt((hist ** 2).sum(axis=2, keepdims=True) + EPS ** 2)
    return (hist / norm).ravel()
