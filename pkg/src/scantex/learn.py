"""Feature standardisation and an RBF-kernel SVM trained with SMO.

Labels are +1 for morph and -1 for bona fide, so the decision value grows
with "morph-likeness" and doubles as the detection score.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import USE_NUMBA, njit
from .errors import DimensionError, FormatError, IoError, NonFiniteError, SingleClassError, VersionError

STD_FLOOR = 1e-8
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray


def _as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DimensionError(f"expected a non-empty 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("feature matrix contains non-finite values")
    return X


def fit_standardizer(X):
    X = _as_matrix(X)
    std = X.std(axis=0)
    return Standardizer(X.mean(axis=0), np.maximum(std, STD_FLOOR))


def transform(std, X):
    X = _as_matrix(X)
    if X.shape[1] != std.mean.size:
        raise DimensionError(f"expected {std.mean.size} features, got {X.shape[1]}")
    out = (X - std.mean) / std.std
    # dimensions whose std hit the floor carry no information
    out[:, std.std <= STD_FLOOR] = 0.0
    return out


# --------------------------------------------------------------------------- kernel


def sq_dists(A, B):
    """Pairwise squared Euclidean distances, clipped at 0."""
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def rbf_kernel(A, B, gamma):
    return np.exp(-gamma * sq_dists(A, B))


def default_gamma(X):
    var = float(np.var(X))
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


# --------------------------------------------------------------------------- SMO


@njit
def _smo_loops(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        # maximal violating pair
        i = -1
        j = -1
        g_max = -np.inf
        g_min = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > g_max:
                    g_max = v
                    i = t
            if (y[t] < 0 and alpha[t] < C) or (y[t] > 0 and alpha[t] > 0):
                if v < g_min:
                    g_min = v
                    j = t
        if i < 0 or j < 0 or g_max - g_min <= tol:
            break
        it += 1
        old_ai = alpha[i]
        old_aj = alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = 1e-12
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            ai = alpha[i] + delta
            aj = alpha[j] + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            ai = alpha[i] - delta
            aj = alpha[j] + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - old_ai
        daj = aj - old_aj
        for t in range(n):
            grad[t] += y[i] * y[t] * K[i, t] * dai + y[j] * y[t] * K[j, t] * daj
    return alpha, grad, it


def _smo_numpy(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    pos, neg = y > 0, y < 0
    while it < max_iter:
        v = -y * grad
        up = (pos & (alpha < C)) | (neg & (alpha > 0))
        low = (neg & (alpha < C)) | (pos & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        if v[i] - v[j] <= tol:
            break
        it += 1
        old_ai, old_aj = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = 1e-12
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            ai, aj = alpha[i] + delta, alpha[j] + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            ai, aj = alpha[i] - delta, alpha[j] + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        dai, daj = ai - old_ai, aj - old_aj
        grad += y[i] * y * K[i] * dai + y[j] * y * K[j] * daj
    return alpha, grad, it


def _bias(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        ub, lb = np.inf, -np.inf
        for t in range(y.size):
            at_upper, at_lower = alpha[t] >= C, alpha[t] <= 0
            if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
                ub = min(ub, yg[t])
            elif (at_upper and y[t] > 0) or (at_lower and y[t] < 0):
                lb = max(lb, yg[t])
        rho = (ub + lb) / 2.0
    return -float(rho)


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    fingerprint: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def n_support(self):
        return self.dual_coef.size


@dataclass(frozen=True, eq=False)
class TrainResult:
    """Full dual solution alongside the compact model (used for verification)."""

    model: SvmModel
    alpha: np.ndarray
    y: np.ndarray
    kernel: np.ndarray

    def dual_objective(self):
        return dual_objective(self.alpha, self.y, self.kernel)


def dual_objective(alpha, y, K):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def svm_fit(X, y, C=1.0, gamma=None, tol=1e-3, max_passes=100000, fingerprint=None, use_numba=None):
    """Train and return a :class:`TrainResult`; see :func:`svm_train`."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != X.shape[0]:
        raise DimensionError("labels and samples differ in count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DimensionError("labels must be -1 (bona fide) or +1 (morph)")
    if np.unique(y).size < 2:
        raise SingleClassError("training data holds a single class")
    if gamma is None:
        gamma = default_gamma(X)
    if not (gamma > 0 and C > 0):
        raise DimensionError("C and gamma must be positive")
    K = rbf_kernel(X, X, gamma)
    if not np.all(np.isfinite(K)):
        raise NonFiniteError("kernel matrix is not finite")
    if use_numba is None:
        use_numba = USE_NUMBA
    solver = _smo_loops if use_numba else _smo_numpy
    alpha, grad, iters = solver(K, y, float(C), float(tol), int(max_passes))
    b = _bias(alpha, grad, y, C)
    sv = alpha > 0
    model = SvmModel(X[sv].copy(), (alpha * y)[sv], b, float(gamma), float(C), dict(fingerprint or {}), int(iters))
    return TrainResult(model, alpha, y, K)


def svm_train(X, y, C=1.0, gamma=None, tol=1e-3, max_passes=100000, fingerprint=None):
    """SMO on the RBF dual with maximal-violating-pair selection.

    Stops when the largest KKT violation is <= ``tol`` or after
    ``max_passes`` pair updates.  Deterministic for identical input.
    """
    return svm_fit(X, y, C, gamma, tol, max_passes, fingerprint).model


def svm_score(model, X):
    """Decision values; a 1-D input returns a float."""
    single = np.asarray(X).ndim == 1
    X = _as_matrix(X)
    if model.n_support and X.shape[1] != model.support_vectors.shape[1]:
        raise DimensionError(f"model expects {model.support_vectors.shape[1]} features, got {X.shape[1]}")
    if model.n_support == 0:
        out = np.full(X.shape[0], model.bias)
    else:
        out = rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coef + model.bias
    return float(out[0]) if single else out


# --------------------------------------------------------------------------- persistence


def save_model(model, path, standardizer=None):
    """Write ``<path>.svmjson`` metadata and ``<path>.bin`` float64 arrays."""
    path = Path(path)
    meta_path, bin_path = path.with_suffix(".svmjson"), path.with_suffix(".bin")
    n_sv = model.n_support
    dim = model.support_vectors.shape[1] if n_sv else (standardizer.mean.size if standardizer else 0)
    arrays = [model.support_vectors.reshape(n_sv, dim), model.dual_coef]
    if standardizer is not None:
        arrays += [standardizer.mean, standardizer.std]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    meta = {
        "format_version": MODEL_VERSION,
        "kernel": "rbf",
        "gamma": model.gamma,
        "C": model.C,
        "bias": model.bias,
        "n_support": n_sv,
        "dim": dim,
        "has_standardizer": standardizer is not None,
        "bin_sha256": hashlib.sha256(blob).hexdigest(),
        "bin_bytes": len(blob),
        "fingerprint": model.fingerprint,
        "iterations": model.iterations,
    }
    try:
        bin_path.write_bytes(blob)
        meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write model {path}: {exc}") from exc
    return meta_path


def load_model(path):
    """Return ``(SvmModel, Standardizer or None)``."""
    path = Path(path)
    meta_path, bin_path = path.with_suffix(".svmjson"), path.with_suffix(".bin")
    try:
        meta_text = meta_path.read_text()
        blob = bin_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    try:
        meta = json.loads(meta_text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: {exc}") from exc
    if meta.get("format_version") != MODEL_VERSION:
        raise VersionError(f"model format version {meta.get('format_version')} != {MODEL_VERSION}")
    try:
        n_sv, dim = int(meta["n_support"]), int(meta["dim"])
        has_std = bool(meta["has_standardizer"])
        expected = 8 * (n_sv * dim + n_sv + (2 * dim if has_std else 0))
        gamma, C, bias = float(meta["gamma"]), float(meta["C"]), float(meta["bias"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{meta_path}: malformed metadata ({exc})") from exc
    if len(blob) != expected or len(blob) != meta.get("bin_bytes"):
        raise FormatError(f"{bin_path}: expected {expected} bytes, found {len(blob)}")
    if hashlib.sha256(blob).hexdigest() != meta.get("bin_sha256"):
        raise FormatError(f"{bin_path}: checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    sv = flat[:n_sv * dim].reshape(n_sv, dim)
    coef = flat[n_sv * dim:n_sv * dim + n_sv]
    std = None
    if has_std:
        rest = flat[n_sv * dim + n_sv:]
        std = Standardizer(rest[:dim].copy(), rest[dim:].copy())
    model = SvmModel(sv.copy(), coef.copy(), bias, gamma, C, meta.get("fingerprint", {}), meta.get("iterations", 0))
    return model, std
