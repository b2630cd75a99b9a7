"""Detection error metrics, Frechet distance and reconstruction loss.

Score orientation everywhere: a higher score means "more morph-like" and a
sample is classified as a morph when ``score >= threshold``.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .container import read_records, write_records
from .errors import DimensionError, EmptyClassError, NonFiniteError
from .imgcore import resize_bilinear, to_grayscale


@dataclass(frozen=True, eq=False)
class ScoreSet:
    scores: np.ndarray
    is_morph: np.ndarray
    tools: tuple = ()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        is_morph = np.asarray(self.is_morph, dtype=bool).ravel()
        if scores.shape != is_morph.shape:
            raise DimensionError("scores and labels differ in length")
        if not np.all(np.isfinite(scores)):
            raise NonFiniteError("scores must be finite")
        tools = tuple(self.tools) if self.tools else tuple("other" if m else "none" for m in is_morph)
        if len(tools) != scores.size:
            raise DimensionError("tools and scores differ in length")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "is_morph", is_morph)
        object.__setattr__(self, "tools", tools)

    @classmethod
    def from_entries(cls, entries):
        """Build from ``(score, label, tool)`` triples; label is 'bonafide' or 'morph'."""
        entries = list(entries)
        return cls([e[0] for e in entries], [e[1] == "morph" for e in entries],
                   tuple(e[2] if len(e) > 2 else ("none" if e[1] == "bonafide" else "other") for e in entries))

    def bonafide_scores(self):
        return self.scores[~self.is_morph]

    def morph_scores(self, tool=None):
        sel = self.is_morph
        if tool is not None:
            sel = sel & np.array([t == tool for t in self.tools], dtype=bool)
        return self.scores[sel]

    def swapped(self):
        """Same scores with class labels exchanged."""
        return ScoreSet(self.scores, ~self.is_morph, tuple("none" if m else "other" for m in ~self.is_morph))


def macer(scores, tool=None, threshold=0.0):
    """Fraction of morphs (of ``tool``, or all tools) classified bona fide."""
    morph = scores.morph_scores(tool)
    if morph.size == 0:
        raise EmptyClassError(f"no morph scores for tool {tool!r}")
    return 1.0 - float(np.count_nonzero(morph >= threshold)) / morph.size


def bpcer(scores, threshold=0.0):
    """Fraction of bona fide samples classified as morphs."""
    bona = scores.bonafide_scores()
    if bona.size == 0:
        raise EmptyClassError("no bona fide scores")
    return float(np.count_nonzero(bona >= threshold)) / bona.size


@dataclass(frozen=True, eq=False)
class DetCurve:
    """Operating points ordered by decreasing threshold (+inf first)."""

    thresholds: np.ndarray
    macer: np.ndarray
    bpcer: np.ndarray

    def __len__(self):
        return self.thresholds.size

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("threshold", "macer", "bpcer"))
        for t, m, b in zip(self.thresholds, self.macer, self.bpcer):
            w.writerow((repr(float(t)), repr(float(m)), repr(float(b))))
        return buf.getvalue()


def det_curve(scores, tool=None):
    bona = np.sort(scores.bonafide_scores())
    morph = np.sort(scores.morph_scores(tool))
    if bona.size == 0 or morph.size == 0:
        raise EmptyClassError("DET curve needs both bona fide and morph scores")
    distinct = np.unique(np.concatenate([bona, morph]))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate([[np.inf], mids[::-1], [-np.inf]])
    # count of scores >= t via searchsorted on sorted arrays
    m_pos = morph.size - np.searchsorted(morph, thresholds, side="left")
    b_pos = bona.size - np.searchsorted(bona, thresholds, side="left")
    return DetCurve(thresholds, 1.0 - m_pos / morph.size, b_pos / bona.size)


def eer(curve):
    """Equal error rate and its threshold.

    Returns the first operating point where MACER equals BPCER, or the linear
    interpolation between the two points that bracket the crossing.
    """
    diff = curve.macer - curve.bpcer
    hit = np.flatnonzero(diff == 0)
    if hit.size:
        i = int(hit[0])
        return float(curve.macer[i]), float(curve.thresholds[i])
    i = int(np.flatnonzero(diff < 0)[0]) - 1  # diff[0] = 1 > 0 and diff[-1] = -1 < 0
    t = diff[i] / (diff[i] - diff[i + 1])
    value = curve.macer[i] + t * (curve.macer[i + 1] - curve.macer[i])
    lo, hi = curve.thresholds[i], curve.thresholds[i + 1]
    if not np.isfinite(lo):
        thr = hi
    elif not np.isfinite(hi):
        thr = lo
    else:
        thr = lo + t * (hi - lo)
    return float(value), float(thr)


def compute_eer(scores, tool=None):
    return eer(det_curve(scores, tool))


def det_svg(curves, title="DET", width=480, height=480):
    """Self-contained SVG of one or more DET curves on normal-deviate axes.

    ``curves`` is a list of ``(label, DetCurve)``.
    """
    lo, hi = 0.001, 0.6
    ticks = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4]
    pad = 56
    plot_w, plot_h = width - pad - 16, height - pad - 32

    def sx(p):
        z = norm.ppf(np.clip(p, lo, hi))
        return pad + (z - norm.ppf(lo)) / (norm.ppf(hi) - norm.ppf(lo)) * plot_w

    def sy(p):
        z = norm.ppf(np.clip(p, lo, hi))
        return 16 + plot_h - (z - norm.ppf(lo)) / (norm.ppf(hi) - norm.ppf(lo)) * plot_h

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="12" text-anchor="middle">{_esc(title)}</text>']
    for t in ticks:
        x, y = sx(t), sy(t)
        out.append(f'<line x1="{x:.2f}" y1="16" x2="{x:.2f}" y2="{16 + plot_h}" stroke="#ddd"/>')
        out.append(f'<line x1="{pad}" y1="{y:.2f}" x2="{pad + plot_w}" y2="{y:.2f}" stroke="#ddd"/>')
        label = f"{100 * t:g}"
        out.append(f'<text x="{x:.2f}" y="{16 + plot_h + 12}" text-anchor="middle">{label}</text>')
        out.append(f'<text x="{pad - 4}" y="{y + 3:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<rect x="{pad}" y="16" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>')
    out.append(f'<text x="{pad + plot_w / 2:.1f}" y="{height - 4}" text-anchor="middle">BPCER (%)</text>')
    out.append(f'<text x="12" y="{16 + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 12 {16 + plot_h / 2:.1f})">MACER (%)</text>')
    for k, (label, curve) in enumerate(curves):
        pts = " ".join(f"{sx(b):.2f},{sy(m):.2f}" for m, b in zip(curve.macer, curve.bpcer))
        color = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad + 8}" y="{30 + 12 * k}" fill="{color}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# --------------------------------------------------------------------------- FID


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def gaussian_stats(vectors, shrink=True):
    """Sample mean and unbiased covariance, optionally with ridge shrinkage."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise DimensionError(f"need at least 2 vectors of dimension >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("embedding vectors contain non-finite values")
    mu = x.mean(axis=0)
    centred = x - mu
    cov = centred.T @ centred / (x.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    if shrink:
        d = cov.shape[0]
        cov = cov + (1e-6 * np.trace(cov) / d) * np.eye(d)
    return GaussianStats(mu, cov, x.shape[0])


def _sqrt_psd(mat):
    mat = (mat + mat.T) / 2.0
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(a, b):
    """Frechet distance between two Gaussians.

    The trace of ``(Sa Sb)^(1/2)`` is taken as the trace of the PSD root of
    ``Sa^(1/2) Sb Sa^(1/2)``, which has the same eigenvalues.
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionError(f"dimension mismatch {a.mean.shape} vs {b.mean.shape}")
    if not (np.all(np.isfinite(a.cov)) and np.all(np.isfinite(b.cov))):
        raise NonFiniteError("covariance contains non-finite values")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    root_a = _sqrt_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_cross)
    if not math.isfinite(value):
        raise NonFiniteError("FID evaluated to a non-finite value")
    return max(value, 0.0)


def fid_from_vectors(xa, xb, shrink=True):
    return fid(gaussian_stats(xa, shrink), gaussian_stats(xb, shrink))


EMBED_SIDE = 8


def embed_builtin(img):
    """64-d embedding: grayscale downsampled to 8x8, row-major."""
    return resize_bilinear(to_grayscale(img), EMBED_SIDE, EMBED_SIDE).ravel()


def embed_images(images, embedder=embed_builtin):
    return np.stack([np.asarray(embedder(im), dtype=np.float64) for im in images])


def save_embeddings(path, vectors):
    write_records(path, np.asarray(vectors, dtype=np.float64), kind="embeddings")


def load_embeddings(path):
    _, values = read_records(path)
    return values


# --------------------------------------------------------------------------- reconstruction loss


def _mean_l1(originals, recons):
    originals, recons = list(originals), list(recons)
    if not originals or len(originals) != len(recons):
        raise DimensionError("reconstruction sets must be non-empty and paired")
    total = 0.0
    for x, r in zip(originals, recons):
        x = np.asarray(x, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if x.shape != r.shape or x.size == 0:
            raise DimensionError(f"paired shapes differ: {x.shape} vs {r.shape}")
        total += float(np.abs(r - x).mean())
    return total / len(originals)


def cycle_loss(x_set, x_recon_set, y_set, y_recon_set):
    """Cycle-consistency L1: mean reconstruction error in each domain, summed."""
    return _mean_l1(x_set, x_recon_set) + _mean_l1(y_set, y_recon_set)

