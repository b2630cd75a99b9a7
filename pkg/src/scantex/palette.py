"""Colour-palette calibration sheets and print/scan texture isolation.

A sheet carries solid colour patches, each tagged with a QR symbol holding
its declared ``"RRR,GGG,BBB"`` value.  After the sheet is printed and
scanned, every patch is located, its tag decoded and the declared colour
subtracted, leaving the signed residual the print/scan path added.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (DimensionError, DomainError, FormatError, IoError, LayoutError, NotFoundError,
                     SegmentationError, UncorrectableError)
from .imgcore import ImageBuffer, decode_png, encode_png
from .qr import qr_decode, qr_encode, render_symbol

log = logging.getLogger(__name__)

TEXTURE_OFFSET = 32768
TEXTURE_SCALE = 64
DPI_VALUES = (300, 600)
PAPER_KINDS = ("bond", "glossy")
DEFAULT_BG_THRESHOLD = 240
DEFAULT_MARGIN_FRAC = 0.05


def _radical_inverse(i, base):
    inv, f = 0.0, 1.0 / base
    while i > 0:
        inv += f * (i % base)
        i //= base
        f /= base
    return inv


def default_colors(n=50, skip=20, lo=20, hi=215):
    """Deterministic, well-spread RGB colours from a Halton(2, 3, 5) sequence.

    Components stay in ``[lo, hi]`` so no patch is mistaken for the white
    sheet background.
    """
    span = hi - lo + 1
    colors = []
    for i in range(skip, skip + n):
        colors.append(tuple(lo + min(span - 1, int(_radical_inverse(i, b) * span)) for b in (2, 3, 5)))
    return colors


def color_payload(color):
    return "{:03d},{:03d},{:03d}".format(*color)


def parse_payload(text):
    parts = text.split(",")
    if len(parts) != 3 or any(len(p) != 3 or not p.isdigit() for p in parts):
        raise FormatError(f"malformed colour payload {text!r}")
    color = tuple(int(p) for p in parts)
    if any(c > 255 for c in color):
        raise FormatError(f"colour payload out of range: {text!r}")
    return color


@dataclass(frozen=True)
class PaletteSpec:
    colors: tuple = field(default_factory=lambda: tuple(default_colors()))
    patch_w: int = 120
    patch_h: int = 160
    qr_module_px: int = 4
    rows: int = 0  # 0 = derived from cols
    cols: int = 5
    qr_gap: int = 16
    cell_gap: int = 32
    margin: int = 40

    def __post_init__(self):
        colors = tuple(tuple(int(v) for v in c) for c in self.colors)
        if not colors:
            raise LayoutError("palette needs at least one colour")
        for c in colors:
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise LayoutError(f"invalid colour {c}")
        object.__setattr__(self, "colors", colors)
        if self.cols < 1:
            raise LayoutError("cols must be positive")
        if self.rows == 0:
            object.__setattr__(self, "rows", math.ceil(len(colors) / self.cols))
        if self.rows * self.cols < len(colors):
            raise LayoutError(f"{self.rows}x{self.cols} grid cannot hold {len(colors)} patches")
        if min(self.patch_w, self.patch_h, self.qr_module_px) < 1:
            raise LayoutError("patch and module sizes must be positive")
        min_gap = 2 * self.qr_module_px
        if self.qr_gap < min_gap or self.cell_gap < min_gap:
            raise LayoutError(
                f"gaps of {self.qr_gap}/{self.cell_gap} px would let patches and QR symbols touch "
                f"(need >= {min_gap} px)")

    @property
    def qr_px(self):
        return 21 * self.qr_module_px

    @property
    def cell_w(self):
        return self.patch_w + self.qr_gap + self.qr_px

    @property
    def cell_h(self):
        return max(self.patch_h, self.qr_px)


def sheet_layout(spec):
    """Geometry of a sheet: size and per-colour patch/QR rectangles ``(x, y, w, h)``."""
    cells = []
    for i, color in enumerate(spec.colors):
        r, c = divmod(i, spec.cols)
        x = spec.margin + c * (spec.cell_w + spec.cell_gap)
        y = spec.margin + r * (spec.cell_h + spec.cell_gap)
        cells.append({
            "index": i,
            "color": list(color),
            "payload": color_payload(color),
            "patch": [x, y, spec.patch_w, spec.patch_h],
            "qr": [x + spec.patch_w + spec.qr_gap, y, spec.qr_px, spec.qr_px],
        })
    width = 2 * spec.margin + spec.cols * spec.cell_w + (spec.cols - 1) * spec.cell_gap
    height = 2 * spec.margin + spec.rows * spec.cell_h + (spec.rows - 1) * spec.cell_gap
    return {"width": width, "height": height, "cells": cells}


def render_palette_sheet(spec):
    """Render the calibration sheet as an RGB ImageBuffer on white."""
    layout = sheet_layout(spec)
    sheet = np.full((layout["height"], layout["width"], 3), 255, dtype=np.uint8)
    for cell in layout["cells"]:
        x, y, w, h = cell["patch"]
        sheet[y:y + h, x:x + w] = cell["color"]
        sym = qr_encode(cell["payload"])
        if sym.size * spec.qr_module_px != spec.qr_px:
            raise LayoutError("payload does not fit a version-1 symbol")
        qr = render_symbol(sym, spec.qr_module_px, quiet=0).data
        qx, qy, qw, qh = cell["qr"]
        sheet[qy:qy + qh, qx:qx + qw] = qr
    return ImageBuffer(sheet)


def _luma(img):
    data = img.data.astype(np.float64)
    if img.channels == 1:
        return data[:, :, 0]
    return data @ np.array([0.299, 0.587, 0.114])


def locate_patches(scan, threshold=DEFAULT_BG_THRESHOLD, expected=None, min_area=4, fill=0.9):
    """Find colour patches and their QR tags on a sheet scan.

    Returns ``[(patch_rect, qr_rect), ...]`` in row-major order, rectangles
    as ``(x, y, w, h)``.  Solid components are patches; the remaining dark
    fragments are grouped onto the nearest patch to their left.
    """
    mask = _luma(scan) < threshold
    labels, count = ndimage.label(mask)
    if count == 0:
        raise SegmentationError("no foreground found on the sheet")
    boxes = ndimage.find_objects(labels)
    areas = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    comps = []
    for idx, sl in enumerate(boxes):
        if areas[idx] < min_area:
            continue
        x, y = sl[1].start, sl[0].start
        w, h = sl[1].stop - x, sl[0].stop - y
        comps.append(((x, y, w, h), areas[idx] / (w * h), areas[idx]))
    solid = [c for c in comps if c[1] >= fill]
    if not solid:
        raise SegmentationError("no solid colour patches found")
    biggest = max(c[2] for c in solid)
    patches = [c[0] for c in solid if c[2] >= 0.25 * biggest]
    patch_set = set(patches)
    groups = {p: None for p in patches}
    for rect, _, _ in comps:
        if rect in patch_set:
            continue
        fx, fy, fw, fh = rect
        cy = fy + fh / 2.0
        best = None
        for p in patches:
            px, py, pw, ph = p
            if fx < px + pw or not py - ph * 0.1 <= cy <= py + ph * 1.1:
                continue
            dist = fx - (px + pw)
            if best is None or dist < best[0]:
                best = (dist, p)
        if best is None:
            continue
        p = best[1]
        g = groups[p]
        box = (fx, fy, fx + fw, fy + fh)
        groups[p] = box if g is None else (min(g[0], box[0]), min(g[1], box[1]),
                                           max(g[2], box[2]), max(g[3], box[3]))
    missing = [p for p, g in groups.items() if g is None]
    if missing:
        raise SegmentationError(f"{len(missing)} patch(es) without a QR tag, first at {missing[0]}")
    if expected is not None and len(patches) != expected:
        raise SegmentationError(f"expected {expected} patches, found {len(patches)}")
    pairs = [(p, (g[0], g[1], g[2] - g[0], g[3] - g[1])) for p, g in groups.items()]
    return _row_major(pairs)


def _row_major(pairs):
    pairs = sorted(pairs, key=lambda pq: (pq[0][1], pq[0][0]))
    rows = []
    for pair in pairs:
        _, y, _, h = pair[0]
        if rows and abs(rows[-1][0][0][1] - y) <= h / 2.0:
            rows[-1].append(pair)
        else:
            rows.append([pair])
    return [pq for row in rows for pq in sorted(row, key=lambda pq: pq[0][0])]


@dataclass(frozen=True, eq=False)
class TexturePatch:
    """Signed per-channel residual, ``residual.shape == (height, width, 3)``."""

    residual: np.ndarray
    declared_color: tuple
    resolution_dpi: int = 600
    paper_kind: str = "glossy"

    def __post_init__(self):
        res = np.asarray(self.residual, dtype=np.float64)
        if res.ndim != 3 or res.shape[2] != 3:
            raise DimensionError(f"residual must be HxWx3, got {res.shape}")
        if not np.all(np.isfinite(res)) or np.abs(res).max(initial=0.0) > 255:
            raise DomainError("residual values must be finite and within [-255, 255]")
        if self.resolution_dpi not in DPI_VALUES:
            raise DomainError(f"dpi must be one of {DPI_VALUES}")
        if self.paper_kind not in PAPER_KINDS:
            raise DomainError(f"paper must be one of {PAPER_KINDS}")
        res.setflags(write=False)
        object.__setattr__(self, "residual", res)
        object.__setattr__(self, "declared_color", tuple(int(v) for v in self.declared_color))

    @property
    def height(self):
        return self.residual.shape[0]

    @property
    def width(self):
        return self.residual.shape[1]


def _erode(rect, margin_frac):
    x, y, w, h = rect
    mx = math.ceil(round(w * margin_frac, 9))
    my = math.ceil(round(h * margin_frac, 9))
    if w - 2 * mx < 1 or h - 2 * my < 1:
        raise DimensionError(f"patch {rect} has no interior after a {margin_frac} margin")
    return x + mx, y + my, w - 2 * mx, h - 2 * my


def isolate_texture(scan, patch, declared, margin_frac=DEFAULT_MARGIN_FRAC, zero_mean=False,
                    dpi=600, paper="glossy"):
    """Subtract the declared colour from a patch interior.

    The residual keeps the mean colour shift unless ``zero_mean`` is set.
    """
    x, y, w, h = _erode(patch, margin_frac)
    pix = scan.rgb()[y:y + h, x:x + w].astype(np.float64)
    if pix.shape[:2] != (h, w):
        raise DimensionError(f"patch {patch} extends beyond the scan")
    residual = pix - np.asarray(declared, dtype=np.float64)
    if zero_mean:
        residual = residual - residual.mean(axis=(0, 1))
    return TexturePatch(residual, tuple(declared), dpi, paper)


def extract_sheet_textures(scan, layout=None, threshold=DEFAULT_BG_THRESHOLD,
                           margin_frac=DEFAULT_MARGIN_FRAC, zero_mean=False, dpi=600, paper="glossy"):
    """Locate, decode and isolate every patch of a scanned sheet.

    When a tag cannot be decoded the colour is taken from ``layout`` (by
    row-major index) and a warning is recorded.  Returns ``(textures, warnings)``.
    """
    pairs = locate_patches(scan, threshold=threshold)
    cells = layout["cells"] if layout else None
    if cells is not None and len(cells) != len(pairs):
        raise SegmentationError(f"layout lists {len(cells)} patches but the scan shows {len(pairs)}")
    textures, warnings, failures = [], [], []
    for i, (patch, qr_rect) in enumerate(pairs):
        pad = 8
        region = (qr_rect[0] - pad, qr_rect[1] - pad, qr_rect[2] + 2 * pad, qr_rect[3] + 2 * pad)
        try:
            color = parse_payload(qr_decode(scan, region))
        except (NotFoundError, UncorrectableError, FormatError) as exc:
            if cells is None:
                failures.append(f"patch {i}: {exc}")
                continue
            color = tuple(cells[i]["color"])
            msg = f"patch {i}: QR unreadable ({exc}); using layout colour {color_payload(color)}"
            log.warning(msg)
            warnings.append(msg)
        textures.append(isolate_texture(scan, patch, color, margin_frac, zero_mean, dpi, paper))
    if failures:
        raise UncorrectableError("; ".join(failures))
    return textures, warnings


def save_texture(t, path):
    """Write a texture as a 16-bit RGB PNG plus a JSON sidecar (same stem)."""
    path = Path(path)
    coded = np.rint(t.residual * TEXTURE_SCALE) + TEXTURE_OFFSET
    payload = encode_png(coded.astype(np.uint16))
    meta = {
        "declared": list(t.declared_color),
        "dpi": t.resolution_dpi,
        "paper": t.paper_kind,
        "offset": TEXTURE_OFFSET,
        "scale": TEXTURE_SCALE,
    }
    try:
        path.write_bytes(payload)
        path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write texture {path}: {exc}") from exc


def load_texture(path):
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise FormatError(f"texture sidecar {sidecar} is missing")
    try:
        raw = path.read_bytes()
        meta = json.loads(sidecar.read_text())
    except OSError as exc:
        raise IoError(f"cannot read texture {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad sidecar {sidecar}: {exc}") from exc
    arr = decode_png(raw)
    if arr.dtype != np.uint16 or arr.shape[2] != 3:
        raise FormatError(f"{path} is not a 16-bit RGB texture")
    try:
        offset, scale = meta["offset"], meta["scale"]
        declared, dpi, paper = meta["declared"], meta["dpi"], meta["paper"]
    except KeyError as exc:
        raise FormatError(f"sidecar {sidecar} lacks {exc}") from exc
    residual = (arr.astype(np.float64) - offset) / scale
    try:
        return TexturePatch(residual, tuple(declared), int(dpi), paper)
    except (DomainError, DimensionError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
