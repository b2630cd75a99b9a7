"""Transfer isolated print/scan textures onto images and compare noise spectra."""

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DomainError, IoError
from .evalmetrics import embed_builtin, embed_images, fid_from_vectors
from .imgcore import ImageBuffer, as_plane
from .palette import TexturePatch, load_texture, save_texture

FIT_POLICIES = ("center_crop", "mirror_tile")
_TEX_NAME = re.compile(r"^tex_(\d{3,})\.png$")


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _cover_axis(res, axis, n, policy):
    m = res.shape[axis]
    if m >= n:
        start = (m - n) // 2 if policy == "center_crop" else 0
        return np.take(res, np.arange(start, start + n), axis=axis)
    # reflect-tile; symmetric padding repeats the edge sample so no seam jumps
    if policy == "center_crop":
        before = (n - m) // 2
    else:
        before = 0
    idx = np.arange(-before, n - before)
    period = 2 * m
    idx = np.mod(idx, period)
    idx = np.where(idx < m, idx, period - 1 - idx)
    return np.take(res, idx, axis=axis)


def fit_residual(residual, height, width, fit="center_crop"):
    """Crop or reflect-tile ``residual`` to exactly ``height x width``.

    Each axis longer than the target is cropped (centred for
    ``center_crop``, from the origin for ``mirror_tile``); each shorter axis
    is extended by mirrored repeats.
    """
    if fit not in FIT_POLICIES:
        raise DomainError(f"fit must be one of {FIT_POLICIES}, got {fit!r}")
    if residual.shape[0] == 0 or residual.shape[1] == 0:
        raise DimensionError("texture has zero area")
    out = _cover_axis(residual, 0, height, fit)
    return _cover_axis(out, 1, width, fit)


def apply_texture(img, t, fit="center_crop"):
    """``clamp(round(img + residual), 0, 255)`` with the residual fitted to the image."""
    rgb = img.rgb() if isinstance(img, ImageBuffer) else ImageBuffer(img).rgb()
    res = t.residual if isinstance(t, TexturePatch) else np.asarray(t, dtype=np.float64)
    if res.ndim == 2:
        res = np.repeat(res[:, :, None], 3, axis=2)
    res = fit_residual(res, rgb.shape[0], rgb.shape[1], fit)
    out = _round_half_away(rgb.astype(np.float64) + res)
    return ImageBuffer(np.clip(out, 0, 255).astype(np.uint8))


def add_gaussian_noise(img, sigma, seed=0):
    """I.i.d. N(0, sigma^2) per pixel and channel, rounded and clamped."""
    if not sigma >= 0:
        raise DomainError("sigma must be >= 0")
    data = img.data if isinstance(img, ImageBuffer) else ImageBuffer(img).data
    if sigma == 0:
        return ImageBuffer(data.copy())
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=data.shape)
    out = _round_half_away(data.astype(np.float64) + noise)
    return ImageBuffer(np.clip(out, 0, 255).astype(np.uint8))


# --------------------------------------------------------------------------- spectra


def radial_power_spectrum(plane):
    """Mean DFT power per integer radius 1..min(H, W)//2, DC excluded.

    The plane mean is removed first; frequencies are scaled so that a radius
    unit is one cycle per image on the shorter side.
    """
    plane = as_plane(plane)
    h, w = plane.shape
    if h < 8 or w < 8:
        raise DimensionError(f"plane {plane.shape} is smaller than 8x8")
    power = np.abs(np.fft.fft2(plane - plane.mean())) ** 2
    side = min(h, w)
    fy = np.fft.fftfreq(h)[:, None] * side
    fx = np.fft.fftfreq(w)[None, :] * side
    r = np.rint(np.hypot(fy, fx)).astype(np.intp)
    n_bins = side // 2
    keep = (r >= 1) & (r <= n_bins)
    sums = np.bincount(r[keep], weights=power[keep], minlength=n_bins + 1)
    counts = np.bincount(r[keep], minlength=n_bins + 1)
    return sums[1:] / counts[1:]


def spectral_flatness(spectrum):
    """Geometric over arithmetic mean; 0 for an all-zero spectrum."""
    s = np.asarray(spectrum, dtype=np.float64).ravel()
    if s.size == 0 or np.any(s < 0):
        raise DomainError("spectrum must be a non-empty non-negative vector")
    mean = s.mean()
    if mean <= 0 or np.any(s == 0):
        return 0.0
    return float(min(np.exp(np.log(s).mean()) / mean, 1.0))


def residual_plane(t):
    """Channel-averaged residual of a texture (or HxWx3 array)."""
    res = t.residual if isinstance(t, TexturePatch) else np.asarray(t, dtype=np.float64)
    return res.mean(axis=2) if res.ndim == 3 else res


def texture_flatness(t):
    return spectral_flatness(radial_power_spectrum(residual_plane(t)))


# --------------------------------------------------------------------------- banks


@dataclass(frozen=True, eq=False)
class TextureBank:
    """Textures with ids 1..N in list order."""

    patches: tuple
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))

    def __len__(self):
        return len(self.patches)

    @property
    def ids(self):
        return list(range(1, len(self.patches) + 1))

    def get(self, tex_id):
        if not 1 <= tex_id <= len(self.patches):
            raise DomainError(f"texture id {tex_id} outside 1..{len(self.patches)}")
        return self.patches[tex_id - 1]


def texture_filename(tex_id):
    return f"tex_{tex_id:03d}.png"


def save_bank(bank, directory):
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    for tex_id, patch in zip(bank.ids, bank.patches):
        save_texture(patch, directory / texture_filename(tex_id))
    if bank.note:
        (directory / "NOTE.txt").write_text(bank.note + "\n")


def load_bank(directory):
    """Read ``tex_###.png`` files; ids must run 1..N without gaps."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"texture directory {directory} does not exist")
    found = {}
    for p in directory.iterdir():
        m = _TEX_NAME.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise IoError(f"no tex_###.png files in {directory}")
    ids = sorted(found)
    if ids != list(range(1, len(ids) + 1)):
        raise DomainError(f"texture ids in {directory} are not contiguous from 1: {ids}")
    note_path = directory / "NOTE.txt"
    note = note_path.read_text().strip() if note_path.exists() else ""
    return TextureBank([load_texture(found[i]) for i in ids], note)


def sample_bank():
    """The bundled print/scan-style sample textures."""
    with resources.as_file(resources.files("scantex.data") / "textures") as path:
        return load_bank(path)


def select_best_texture(candidates, reference, embedder=embed_builtin):
    """Return ``(texture id, FID)`` minimising FID to ``reference``.

    ``candidates`` maps texture id to the image set textured with it.  Ties
    go to the lowest id, so the result does not depend on mapping order.
    """
    if not candidates:
        raise DomainError("no candidate texture sets")
    ref = embed_images(reference, embedder)
    scores = {int(k): fid_from_vectors(embed_images(v, embedder), ref) for k, v in candidates.items()}
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores[best]


# --------------------------------------------------------------------------- synthetic print/scan


def synthetic_scan_texture(shape=(128, 128), seed=0, cast=None, grain=3.0, blotch=4.0, screen=2.5):
    """Print/scan-style residual: colour cast, low-frequency blotches, a
    periodic halftone screen per channel and fine sensor grain.

    Returns an ``HxWx3`` float array.
    """
    h, w = shape
    rng = np.random.default_rng(seed)
    if cast is None:
        cast = rng.uniform(-6.0, 6.0, size=3)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty((h, w, 3))
    period = rng.uniform(3.0, 5.0)
    base_angle = rng.uniform(0, np.pi / 2)
    for c in range(3):
        low = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=6.0, mode="wrap")
        low *= blotch / max(low.std(), 1e-12)
        angle = base_angle + c * np.pi / 6
        u = xx * np.cos(angle) + yy * np.sin(angle)
        v = -xx * np.sin(angle) + yy * np.cos(angle)
        dots = np.cos(2 * np.pi * u / period) * np.cos(2 * np.pi * v / period)
        fine = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=0.7, mode="wrap")
        fine *= grain / max(fine.std(), 1e-12)
        out[:, :, c] = cast[c] + low + screen * dots + fine
    return np.clip(out, -255.0, 255.0)


def synthetic_texture_patch(declared=(128, 128, 128), shape=(128, 128), seed=0, dpi=600, paper="glossy"):
    return TexturePatch(synthetic_scan_texture(shape, seed), declared, dpi, paper)


def simulate_print_scan(img, seed=0, blur=0.8):
    """Handcrafted print/scan degradation: tone compression, slight blur and
    a synthetic scan texture."""
    rgb = img.rgb() if isinstance(img, ImageBuffer) else ImageBuffer(img).rgb()
    x = rgb.astype(np.float64) / 255.0
    x = 0.06 + 0.88 * x ** 1.1
    x = ndimage.gaussian_filter(x * 255.0, sigma=(blur, blur, 0.0), mode="nearest")
    tex = synthetic_scan_texture(rgb.shape[:2], seed)
    return ImageBuffer(np.clip(_round_half_away(x + tex), 0, 255).astype(np.uint8))


def make_sample_bank(n=8, shape=(128, 128), seed=2024):
    """Deterministic stand-in for a scanned palette: ``n`` textures."""
    from .palette import default_colors

    colors = default_colors(n)
    patches = [synthetic_texture_patch(tuple(colors[i]), shape, seed + i) for i in range(n)]
    return TextureBank(patches, f"synthetic print/scan textures, seed {seed}")
