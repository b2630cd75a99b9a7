"""Binarised statistical image features with a bundled 9 x 5x5 filter bank."""

import json
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from ..errors import BankError, FormatError, IoError
from ..imgcore import as_plane

N_FILTERS = 9
SIZE = 5
BANK_FILE = "bsif_bank_5x5_9.json"


def natural_image(side=256, seed=13):
    """Synthetic 1/f-spectrum image standing in for natural training imagery."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(side)[:, None]
    fx = np.fft.fftfreq(side)[None, :]
    radius = np.hypot(fx, fy)
    radius[0, 0] = 1.0
    spectrum = (rng.normal(size=(side, side)) + 1j * rng.normal(size=(side, side))) / radius
    spectrum[0, 0] = 0.0
    img = np.real(np.fft.ifft2(spectrum))
    return (img - img.min()) / np.ptp(img)


def generate_bank(seed=13, n_patches=20000):
    """Learn 9 zero-mean 5x5 filters: PCA whitening then a fixed-seed rotation."""
    img = natural_image(seed=seed)
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, img.shape[0] - SIZE, n_patches)
    xs = rng.integers(0, img.shape[1] - SIZE, n_patches)
    patches = np.stack([img[y:y + SIZE, x:x + SIZE].ravel() for y, x in zip(ys, xs)])
    patches -= patches.mean(axis=1, keepdims=True)
    cov = patches.T @ patches / n_patches
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:N_FILTERS]
    whiten = v[:, order] / np.sqrt(w[order])
    q, r = np.linalg.qr(rng.normal(size=(N_FILTERS, N_FILTERS)))
    q = q * np.sign(np.diag(r))
    filters = (whiten @ q).T.reshape(N_FILTERS, SIZE, SIZE)
    filters -= filters.mean(axis=(1, 2), keepdims=True)
    return np.round(filters, 10)


def validate_bank(bank):
    bank = np.asarray(bank, dtype=np.float64)
    if bank.shape != (N_FILTERS, SIZE, SIZE):
        raise BankError(f"BSIF bank must be {N_FILTERS} filters of {SIZE}x{SIZE}, got {bank.shape}")
    if not np.all(np.isfinite(bank)):
        raise BankError("BSIF bank contains non-finite coefficients")
    sums = np.abs(bank.sum(axis=(1, 2)))
    scale = np.abs(bank).sum(axis=(1, 2))
    if np.any(sums > 1e-6 * np.maximum(scale, 1.0)):
        raise BankError("BSIF filters must be zero-mean")
    return bank


def load_bank(path=None):
    """Load a bank from JSON (list of nine 5x5 matrices); default is the bundled one."""
    try:
        if path is None:
            text = resources.files("scantex.data").joinpath(BANK_FILE).read_text()
        else:
            text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read BSIF bank: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"BSIF bank is not valid JSON: {exc}") from exc
    return validate_bank(data)


def save_bank(bank, path):
    Path(path).write_text(json.dumps(np.asarray(bank).tolist(), indent=1) + "\n")


_DEFAULT = None


def default_bank():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_bank()
    return _DEFAULT


def bsif_codes(plane, bank=None):
    """9-bit code per pixel: bit k set when the k-th filter response is positive."""
    plane = as_plane(plane)
    bank = default_bank() if bank is None else validate_bank(bank)
    # centring is a no-op for zero-mean filters but makes flat input exactly zero
    centred = np.zeros_like(plane) if np.ptp(plane) == 0 else plane - plane.mean()
    codes = np.zeros(plane.shape, dtype=np.int64)
    for k in range(N_FILTERS):
        resp = convolve2d(centred, bank[k], mode="same", boundary="symm")
        codes |= (resp > 0).astype(np.int64) << k
    return codes


def bsif_histogram(codes):
    hist = np.bincount(np.asarray(codes).ravel(), minlength=2 ** N_FILTERS).astype(np.float64)
    return hist / hist.sum()

