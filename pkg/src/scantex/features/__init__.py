"""Handcrafted feature extractors.

Every image-shaped feature follows the same order: filter the full-resolution
grayscale plane first, then resize the filter output to ``D x D`` and
vectorise it row-major.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn

from ..errors import ConvergenceError, DimensionError, DomainError, NonFiniteError
from ..imgcore import as_plane, jpeg_quantize_roundtrip, resize_bilinear, to_grayscale
from . import bsif, lbp, srm
from .hog import feat_hog as _hog_plane

DEFAULT_D = 64


@dataclass(frozen=True, eq=False)
class FeatureVector:
    method: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"{self.method}: feature contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


def method_id(name, **params):
    if not params:
        return name
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{name}[{inner}]"


def _check_side(plane, minimum=8):
    if min(plane.shape) < minimum:
        raise DimensionError(f"plane {plane.shape} is smaller than {minimum}x{minimum}")


def _vec(plane, d):
    return resize_bilinear(plane, d, d).ravel()


def _plane(img_or_plane):
    if isinstance(img_or_plane, np.ndarray):
        return as_plane(img_or_plane)
    return to_grayscale(img_or_plane)


# --------------------------------------------------------------------------- extractors


def feat_intensity(img, D=DEFAULT_D):
    if D < 1:
        raise DomainError("D must be positive")
    return FeatureVector(method_id("rgb", D=D), _vec(_plane(img), D))


def feat_lbp_image(img, R=1, D=DEFAULT_D):
    codes = lbp.lbp_code_image(_plane(img), R).astype(np.float64) / 255.0
    return FeatureVector(method_id("lbp81", R=R, D=D), _vec(codes, D))


def feat_ulbp_hist(img, R=1):
    return FeatureVector(method_id("hlbp", R=R), lbp.ulbp_hist(_plane(img), R))


def feat_ulbp_all(img):
    return FeatureVector("ulbp_all", lbp.ulbp_all(_plane(img)))


def feat_ulbp_hor(img):
    return FeatureVector("ulbp_hor", lbp.ulbp_hor(_plane(img)))


def feat_fusion_lbp(img):
    return fuse([feat_ulbp_all(img), feat_ulbp_hor(img)])


def feat_bsif_im(img, D=DEFAULT_D, bank=None):
    codes = bsif.bsif_codes(_plane(img), bank).astype(np.float64) / 511.0
    return FeatureVector(method_id("bsif_im", D=D), _vec(codes, D))


def feat_bsif_hist(img, bank=None):
    return FeatureVector("bsif_hist", bsif.bsif_histogram(bsif.bsif_codes(_plane(img), bank)))


def feat_bsif(img, D=DEFAULT_D, bank=None):
    """Both BSIF variants from one code image: (code-image vector, 512-bin histogram)."""
    codes = bsif.bsif_codes(_plane(img), bank)
    return (FeatureVector(method_id("bsif_im", D=D), _vec(codes.astype(np.float64) / 511.0, D)),
            FeatureVector("bsif_hist", bsif.bsif_histogram(codes)))


def feat_hog(img, blocks=(10, 12), bins=9):
    values = _hog_plane(_plane(img), blocks, bins)
    return FeatureVector(method_id("hog", blocks=f"{blocks[0]}x{blocks[1]}", bins=bins), values)


def feat_srm(img, D=DEFAULT_D, kernels=srm.DEFAULT_KERNELS):
    res = srm.srm_residuals(_plane(img), kernels)
    return FeatureVector(method_id("srm", D=D), np.concatenate([_vec(r, D) for r in res]))


def ela_map(plane, quality=70):
    """Per-pixel |x - JPEG(x)| on the [0, 1] scale."""
    x = as_plane(plane) * 255.0
    return np.abs(x - jpeg_quantize_roundtrip(x, quality)) / 255.0


def feat_ela(img, quality=70, D=DEFAULT_D):
    return FeatureVector(method_id("ela", q=quality, D=D), _vec(ela_map(_plane(img), quality), D))


def dft_log_magnitude(plane):
    """``log(1 + |DFT|)`` with the zero frequency shifted to the centre."""
    return np.fft.fftshift(np.log1p(np.abs(np.fft.fft2(as_plane(plane)))))


def feat_dft(img, D=DEFAULT_D):
    plane = _plane(img)
    _check_side(plane)
    return FeatureVector(method_id("dft", D=D), _vec(dft_log_magnitude(plane), D))


def dct2(plane):
    return dctn(as_plane(plane), type=2, norm="ortho")


def feat_dct2(img, D=DEFAULT_D):
    plane = _plane(img)
    _check_side(plane)
    return FeatureVector(method_id("dct2", D=D), _vec(np.log1p(np.abs(dct2(plane))), D))


def singular_values(plane):
    try:
        return np.linalg.svd(as_plane(plane), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc


def feat_svd(img, k=100):
    s = singular_values(_plane(img))
    s = s / s[0] if s[0] > 0 else np.zeros_like(s)
    out = np.zeros(k)
    out[:min(k, s.size)] = s[:k]
    return FeatureVector(method_id("svd", k=k), out)


def fuse(features):
    """Concatenate feature vectors in order; the method id records the composition."""
    features = list(features)
    if not features:
        raise DimensionError("fuse needs at least one feature vector")
    if len(features) == 1:
        return features[0]
    return FeatureVector("+".join(f.method for f in features), np.concatenate([f.values for f in features]))


# --------------------------------------------------------------------------- registry

# the twelve columns of the evaluation table
METHODS = {
    "rgb": feat_intensity,
    "ela": feat_ela,
    "srm": feat_srm,
    "dct2": feat_dct2,
    "dft": feat_dft,
    "lbp81": feat_lbp_image,
    "fusion_lbp": feat_fusion_lbp,
    "hog": feat_hog,
    "svd": feat_svd,
    "hlbp": feat_ulbp_hist,
    "bsif_im": feat_bsif_im,
    "bsif_hist": feat_bsif_hist,
}
EXTRA_METHODS = {"ulbp_all": feat_ulbp_all, "ulbp_hor": feat_ulbp_hor}
ALL_METHODS = {**METHODS, **EXTRA_METHODS}


def extract(method, img, **params):
    """Run a registered extractor by name."""
    try:
        func = ALL_METHODS[method]
    except KeyError:
        raise DomainError(f"unknown feature method {method!r}; valid: {', '.join(ALL_METHODS)}") from None
    return func(img, **params)


def feature_length(method, shape=(64, 64), **params):
    """Output length of ``method`` (independent of image content)."""
    return len(extract(method, np.zeros(shape), **params))


def params_fingerprint(method, params):
    blob = json.dumps({"method": method, "params": params}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
