"""Local binary patterns: code images and uniform-pattern histograms."""

import numpy as np

from .._accel import USE_NUMBA, njit
from ..errors import DimensionError
from ..imgcore import as_plane

N_POINTS = 8
N_UNIFORM_BINS = 59


def _transitions(code, p=N_POINTS):
    bits = [(code >> k) & 1 for k in range(p)]
    return sum(bits[k] != bits[(k + 1) % p] for k in range(p))


UNIFORM_CODES = tuple(c for c in range(256) if _transitions(c) <= 2)
# code -> bin; the 58 uniform codes in ascending order, everything else in bin 58
UNIFORM_LUT = np.full(256, len(UNIFORM_CODES), dtype=np.intp)
for _bin, _code in enumerate(UNIFORM_CODES):
    UNIFORM_LUT[_code] = _bin
del _bin, _code


def neighbor_offsets(radius, points=N_POINTS):
    """(dy, dx) of each sampling point; angle 0 first, counter-clockwise."""
    angles = 2.0 * np.pi * np.arange(points) / points
    dx = radius * np.cos(angles)
    dy = -radius * np.sin(angles)  # rows grow downwards
    snap = lambda v: np.where(np.abs(v - np.round(v)) < 1e-9, np.round(v), v)
    return snap(dy), snap(dx)


def _sample_terms(radius, points):
    """Bilinear taps per neighbour: integer offsets and weights of 4 corners."""
    dy, dx = neighbor_offsets(radius, points)
    y0, x0 = np.floor(dy).astype(np.intp), np.floor(dx).astype(np.intp)
    fy, fx = dy - y0, dx - x0
    oy = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    ox = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    w = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
    return oy, ox, w


@njit
def _lbp_loops(plane, radius, oy, ox, w):
    h, wd = plane.shape
    out = np.zeros((h - 2 * radius, wd - 2 * radius), dtype=np.uint8)
    points = oy.shape[0]
    # keep only the taps with non-zero weight, in the same order as the numpy path
    n_taps = np.zeros(points, dtype=np.intp)
    ty = np.zeros((points, 4), dtype=np.intp)
    tx = np.zeros((points, 4), dtype=np.intp)
    tw = np.zeros((points, 4))
    for k in range(points):
        for t in range(4):
            if w[k, t] != 0.0:
                j = n_taps[k]
                ty[k, j], tx[k, j], tw[k, j] = oy[k, t], ox[k, t], w[k, t]
                n_taps[k] = j + 1
    n = wd - 2 * radius
    acc = np.empty(n)
    for y in range(radius, h - radius):
        row = out[y - radius]
        for k in range(points):
            acc[:] = 0.0
            for j in range(n_taps[k]):
                yy, xx, wt = y + ty[k, j], radius + tx[k, j], tw[k, j]
                for x in range(n):
                    acc[x] += wt * (plane[yy, xx + x] - plane[y, radius + x])
            bit = np.uint8(1 << k)
            for x in range(n):
                if acc[x] >= 0.0:
                    row[x] |= bit
    return out


def _lbp_numpy(plane, radius, oy, ox, w):
    h, wd = plane.shape
    centre = plane[radius:h - radius, radius:wd - radius]
    out = np.zeros(centre.shape, dtype=np.uint8)
    for k in range(oy.shape[0]):
        acc = np.zeros_like(centre)
        for t in range(4):
            if w[k, t] != 0.0:
                ys, xs = radius + oy[k, t], radius + ox[k, t]
                acc += w[k, t] * (plane[ys:ys + centre.shape[0], xs:xs + centre.shape[1]] - centre)
        out |= (acc >= 0.0).astype(np.uint8) << k
    return out


def lbp_code_image(plane, radius=1, points=N_POINTS, use_numba=None):
    """LBP codes of every pixel at least ``radius`` from the border.

    Bit k is set when the bilinearly sampled k-th neighbour is >= the centre.
    """
    plane = as_plane(plane)
    radius = int(radius)
    if not 1 <= radius <= 8:
        raise DimensionError(f"LBP radius must be in 1..8, got {radius}")
    if min(plane.shape) <= 2 * radius:
        raise DimensionError(f"plane {plane.shape} too small for radius {radius}")
    oy, ox, w = _sample_terms(radius, points)
    if use_numba is None:
        use_numba = USE_NUMBA
    kernel = _lbp_loops if use_numba else _lbp_numpy
    return kernel(np.ascontiguousarray(plane), radius, oy, ox, w)


def uniform_histogram(codes):
    """59-bin L1-normalised histogram of uniform LBP codes."""
    hist = np.bincount(UNIFORM_LUT[np.asarray(codes, dtype=np.intp).ravel()], minlength=N_UNIFORM_BINS)
    return hist / hist.sum()


def ulbp_hist(plane, radius=1):
    return uniform_histogram(lbp_code_image(plane, radius))


def ulbp_all(plane, radii=range(1, 9)):
    return np.concatenate([ulbp_hist(plane, r) for r in radii])


def ulbp_hor(plane, strips=8, radius=1):
    codes = lbp_code_image(plane, radius)
    if codes.shape[0] < strips:
        raise DimensionError(f"need at least {strips} code rows, got {codes.shape[0]}")
    edges = np.linspace(0, codes.shape[0], strips + 1).round().astype(int)
    return np.concatenate([uniform_histogram(codes[a:b]) for a, b in zip(edges[:-1], edges[1:])])
