"""Steganalysis rich-model noise residuals."""

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import FormatError, IoError, KernelError
from ..imgcore import as_plane

GAIN = 8.0
CLAMP = 2.0

# second-order 3x3, the 5x5 "KV" kernel and a first-order horizontal difference
DEFAULT_KERNELS = (
    np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]) / 4.0,
    np.array([[-1, 2, -2, 2, -1],
              [2, -6, 8, -6, 2],
              [-2, 8, -12, 8, -2],
              [2, -6, 8, -6, 2],
              [-1, 2, -2, 2, -1]]) / 12.0,
    np.array([[-1, 0, 1]]) / 2.0,
)


def validate_kernels(kernels):
    out = []
    for k in kernels:
        k = np.atleast_2d(np.asarray(k, dtype=np.float64))
        if k.ndim != 2 or k.size == 0 or not np.all(np.isfinite(k)):
            raise KernelError("SRM kernels must be finite 2-D matrices")
        if abs(k.sum()) > 1e-9 * max(1.0, np.abs(k).sum()):
            raise KernelError(f"SRM kernel coefficients sum to {k.sum():g}, expected 0")
        out.append(k)
    if len(out) != 3:
        raise KernelError(f"expected 3 SRM kernels, got {len(out)}")
    return tuple(out)


def load_kernels(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read kernel file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"kernel file {path} is not valid JSON: {exc}") from exc
    return validate_kernels(data)


def srm_residuals(plane, kernels=DEFAULT_KERNELS):
    """Clamped residual planes ``clip(GAIN * (plane * k), -CLAMP, CLAMP)`` (true convolution)."""
    plane = as_plane(plane)
    kernels = validate_kernels(kernels)
    # a flat plane must give exactly zero, which mean subtraction alone does not guarantee
    centred = np.zeros_like(plane) if np.ptp(plane) == 0 else plane - plane.mean()
    return [np.clip(GAIN * ndimage.convolve(centred, k, mode="reflect"), -CLAMP, CLAMP) for k in kernels]
