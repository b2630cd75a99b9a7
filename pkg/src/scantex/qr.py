"""Minimal QR code symbology: byte mode, versions 1-3, axis-aligned decoding.

Enough of ISO/IEC 18004 to tag printed colour patches with their declared
value and read the tags back from a flatbed scan.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import rs
from .errors import DomainError, NotFoundError, UncorrectableError
from .imgcore import ImageBuffer

EC_BITS = {"L": 0b01, "M": 0b00, "Q": 0b11, "H": 0b10}

# version -> level -> (blocks, data codewords per block, ec codewords per block)
BLOCKS = {
    1: {"L": (1, 19, 7), "M": (1, 16, 10), "Q": (1, 13, 13), "H": (1, 9, 17)},
    2: {"L": (1, 34, 10), "M": (1, 28, 16), "Q": (1, 22, 22), "H": (1, 16, 28)},
    3: {"L": (1, 55, 15), "M": (1, 44, 26), "Q": (2, 17, 18), "H": (2, 13, 22)},
}
ALIGNMENT = {1: [], 2: [6, 18], 3: [6, 22]}
MAX_VERSION = 3


@dataclass(frozen=True, eq=False)
class QrSymbol:
    version: int
    ec_level: str
    modules: np.ndarray  # bool, True = dark, indexed [row, col]
    mask: int = 0

    def __post_init__(self):
        side = 17 + 4 * self.version
        if not 1 <= self.version <= MAX_VERSION:
            raise DomainError(f"unsupported QR version {self.version}")
        if self.ec_level not in EC_BITS:
            raise DomainError(f"unknown EC level {self.ec_level!r}")
        if self.modules.shape != (side, side):
            raise DomainError(f"version {self.version} needs a {side}x{side} module matrix")

    @property
    def size(self):
        return self.modules.shape[0]


def byte_capacity(version, ec_level="L"):
    blocks, data_cw, _ = BLOCKS[version][ec_level]
    return (blocks * data_cw * 8 - 12) // 8


# --------------------------------------------------------------------------- layout


def _function_map(version):
    """Boolean map of function-pattern modules (finders, timing, alignment, format)."""
    n = 17 + 4 * version
    fn = np.zeros((n, n), dtype=bool)
    fn[:9, :9] = True
    fn[:9, n - 8:] = True
    fn[n - 8:, :9] = True
    fn[6, :] = True
    fn[:, 6] = True
    for cy in ALIGNMENT[version]:
        for cx in ALIGNMENT[version]:
            if fn[cy, cx]:
                continue
            fn[cy - 2:cy + 3, cx - 2:cx + 3] = True
    return fn


def _draw_function_patterns(m, version):
    n = m.shape[0]
    for r0, c0 in ((0, 0), (0, n - 7), (n - 7, 0)):
        m[r0:r0 + 7, c0:c0 + 7] = True
        m[r0 + 1:r0 + 6, c0 + 1:c0 + 6] = False
        m[r0 + 2:r0 + 5, c0 + 2:c0 + 5] = True
    for i in range(8, n - 8):
        m[6, i] = m[i, 6] = i % 2 == 0
    taken = np.zeros_like(m)
    taken[:9, :9] = taken[:9, n - 8:] = taken[n - 8:, :9] = True
    for cy in ALIGNMENT[version]:
        for cx in ALIGNMENT[version]:
            if taken[cy, cx]:
                continue
            m[cy - 2:cy + 3, cx - 2:cx + 3] = True
            m[cy - 1:cy + 2, cx - 1:cx + 2] = False
            m[cy, cx] = True
    m[n - 8, 8] = True  # dark module


def format_bits(ec_level, mask):
    data = (EC_BITS[ec_level] << 3) | mask
    rem = data
    for _ in range(10):
        rem = (rem << 1) ^ ((rem >> 9) * 0x537)
    return ((data << 10) | rem) ^ 0x5412


def _format_positions(n):
    """Module coordinates (row, col) of both format-info copies, bit 0 first."""
    first = [(i, 8) for i in range(6)] + [(7, 8), (8, 8), (8, 7)] + [(8, 14 - i) for i in range(9, 15)]
    second = [(8, n - 1 - i) for i in range(8)] + [(n - 15 + i, 8) for i in range(8, 15)]
    return first, second


def _draw_format(m, ec_level, mask):
    bits = format_bits(ec_level, mask)
    for copy in _format_positions(m.shape[0]):
        for i, (r, c) in enumerate(copy):
            m[r, c] = bool((bits >> i) & 1)


def _zigzag(n, fn):
    """Data-module coordinates in placement order."""
    order = []
    right = n - 1
    while right >= 1:
        if right == 6:
            right = 5
        upward = ((right + 1) & 2) == 0
        for vert in range(n):
            r = n - 1 - vert if upward else vert
            for j in range(2):
                c = right - j
                if not fn[r, c]:
                    order.append((r, c))
        right -= 2
    return order


def _mask_grid(mask, n):
    r, c = np.indices((n, n))
    if mask == 0:
        return (r + c) % 2 == 0
    if mask == 1:
        return r % 2 == 0
    if mask == 2:
        return c % 3 == 0
    if mask == 3:
        return (r + c) % 3 == 0
    if mask == 4:
        return (r // 2 + c // 3) % 2 == 0
    if mask == 5:
        return (r * c) % 2 + (r * c) % 3 == 0
    if mask == 6:
        return ((r * c) % 2 + (r * c) % 3) % 2 == 0
    return ((r + c) % 2 + (r * c) % 3) % 2 == 0


def _run_penalty(grid):
    score = 0
    for line in grid.astype(np.int8):
        edges = np.flatnonzero(np.diff(line)) + 1
        runs = np.diff(np.concatenate(([0], edges, [line.size])))
        long_runs = runs[runs >= 5]
        score += int((long_runs - 2).sum())
    return score


_FINDER_LIKE = np.array([1, 0, 1, 1, 1, 0, 1, 0, 0, 0, 0], dtype=bool)


def penalty(m):
    """Mask-selection penalty score (rules N1-N4)."""
    score = _run_penalty(m) + _run_penalty(m.T)
    same = (m[:-1, :-1] == m[1:, :-1]) & (m[:-1, :-1] == m[:-1, 1:]) & (m[:-1, :-1] == m[1:, 1:])
    score += 3 * int(same.sum())
    for grid in (m, m.T):
        win = np.lib.stride_tricks.sliding_window_view(grid, 11, axis=1)
        hits = np.all(win == _FINDER_LIKE, axis=2) | np.all(win == _FINDER_LIKE[::-1], axis=2)
        score += 40 * int(hits.sum())
    dark_pct = 100.0 * m.sum() / m.size
    score += 10 * int(abs(dark_pct - 50) // 5)
    return score


# --------------------------------------------------------------------------- encode


def _data_codewords(payload, version, ec_level):
    blocks, data_cw, _ = BLOCKS[version][ec_level]
    total = blocks * data_cw
    bits = [0, 1, 0, 0]
    bits += [(len(payload) >> (7 - i)) & 1 for i in range(8)]
    for byte in payload:
        bits += [(byte >> (7 - i)) & 1 for i in range(8)]
    bits += [0] * min(4, total * 8 - len(bits))
    bits += [0] * (-len(bits) % 8)
    out = [int("".join(map(str, bits[i:i + 8])), 2) for i in range(0, len(bits), 8)]
    pad = (0xEC, 0x11)
    i = 0
    while len(out) < total:
        out.append(pad[i % 2])
        i += 1
    return out


def _interleave(data, version, ec_level):
    blocks, data_cw, ec_cw = BLOCKS[version][ec_level]
    cw_blocks = [rs.rs_encode(data[b * data_cw:(b + 1) * data_cw], ec_cw) for b in range(blocks)]
    out = []
    for i in range(data_cw):
        out += [blk[i] for blk in cw_blocks]
    for i in range(ec_cw):
        out += [blk[data_cw + i] for blk in cw_blocks]
    return out


def qr_encode(payload, ec_level="L", version=None, mask=None):
    """Encode an ASCII/latin-1 string in byte mode.

    The smallest version that fits is used unless ``version`` is given; the
    mask with the lowest penalty is chosen unless ``mask`` is given.
    """
    raw = payload.encode("latin-1") if isinstance(payload, str) else bytes(payload)
    if version is None:
        for v in range(1, MAX_VERSION + 1):
            if len(raw) <= byte_capacity(v, ec_level):
                version = v
                break
        else:
            raise DomainError(f"payload of {len(raw)} bytes exceeds version {MAX_VERSION}-{ec_level} capacity")
    elif len(raw) > byte_capacity(version, ec_level):
        raise DomainError(f"payload does not fit version {version}-{ec_level}")
    n = 17 + 4 * version
    fn = _function_map(version)
    codewords = _interleave(_data_codewords(raw, version, ec_level), version, ec_level)
    base = np.zeros((n, n), dtype=bool)
    _draw_function_patterns(base, version)
    for k, (r, c) in enumerate(_zigzag(n, fn)):
        if k < len(codewords) * 8:
            base[r, c] = bool((codewords[k >> 3] >> (7 - (k & 7))) & 1)
    best = None
    for mk in ([mask] if mask is not None else range(8)):
        m = base ^ (_mask_grid(mk, n) & ~fn)
        _draw_format(m, ec_level, mk)
        score = penalty(m)
        if best is None or score < best[0]:
            best = (score, mk, m)
    return QrSymbol(version, ec_level, best[2], best[1])


def render_symbol(sym, module_px=4, quiet=4):
    """Rasterise a symbol as an 8-bit gray image (dark = 0, light = 255)."""
    mods = np.pad(sym.modules, quiet, constant_values=False)
    pix = np.where(mods, 0, 255).astype(np.uint8)
    pix = np.repeat(np.repeat(pix, module_px, axis=0), module_px, axis=1)
    return ImageBuffer(pix)


# --------------------------------------------------------------------------- decode


def _gray255(img):
    data = img.data.astype(np.float64)
    if img.channels == 3:
        data = data @ np.array([0.299, 0.587, 0.114])
    else:
        data = data[:, :, 0]
    return data


def _find_finders(dark):
    """Centres (x, y) and module sizes of finder-pattern candidates."""
    labels, count = ndimage.label(dark)
    if count < 6:
        return []
    boxes = ndimage.find_objects(labels)
    info = []
    for idx, sl in enumerate(boxes, start=1):
        h = sl[0].stop - sl[0].start
        w = sl[1].stop - sl[1].start
        info.append((idx, sl, w, h))
    finders = []
    for idx, sl, w, h in info:
        if w < 7 or h < 7 or not 0.7 <= w / h <= 1.4:
            continue
        cy = (sl[0].start + sl[0].stop - 1) / 2.0
        cx = (sl[1].start + sl[1].stop - 1) / 2.0
        area = int((labels[sl] == idx).sum())
        # ring of a 7x7 module square with a 5x5 hole: 24/49 of the box
        if not 0.35 <= area / (w * h) <= 0.65:
            continue
        for jdx, sl2, w2, h2 in info:
            if jdx == idx:
                continue
            if not (sl[0].start < sl2[0].start and sl2[0].stop < sl[0].stop
                    and sl[1].start < sl2[1].start and sl2[1].stop < sl[1].stop):
                continue
            cy2 = (sl2[0].start + sl2[0].stop - 1) / 2.0
            cx2 = (sl2[1].start + sl2[1].stop - 1) / 2.0
            if abs(cx2 - cx) > 0.15 * w or abs(cy2 - cy) > 0.15 * h:
                continue
            if not (0.25 <= w2 / w <= 0.6 and 0.25 <= h2 / h <= 0.6):
                continue
            finders.append((cx2, cy2, (w + h) / 14.0))
            break
    return finders


def _order_finders(finders):
    pts = [np.array(f[:2]) for f in finders]
    best = None
    for i in range(3):
        a, b = [pts[j] for j in range(3) if j != i]
        u, v = a - pts[i], b - pts[i]
        cos = abs(np.dot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12)
        if best is None or cos < best[0]:
            best = (cos, i)
    tl = best[1]
    others = [j for j in range(3) if j != tl]
    a, b = pts[others[0]], pts[others[1]]
    u, v = a - pts[tl], b - pts[tl]
    # image coordinates (y down): TR x BL has positive cross product
    if u[0] * v[1] - u[1] * v[0] > 0:
        return pts[tl], a, b
    return pts[tl], b, a


def _sample_grid(gray, threshold, tl, tr, bl, n, module_px):
    u = (tr - tl) / (n - 7)
    v = (bl - tl) / (n - 7)
    rad = max(0, int(module_px // 4))
    h, w = gray.shape
    out = np.zeros((n, n), dtype=bool)
    for r in range(n):
        for c in range(n):
            x, y = tl + (c - 3) * u + (r - 3) * v
            xi, yi = int(round(x)), int(round(y))
            y0, y1 = max(0, yi - rad), min(h, yi + rad + 1)
            x0, x1 = max(0, xi - rad), min(w, xi + rad + 1)
            if y0 >= y1 or x0 >= x1:
                raise NotFoundError("module grid extends outside the image")
            out[r, c] = gray[y0:y1, x0:x1].mean() < threshold
    return out


def _read_format(m):
    n = m.shape[0]
    best = None
    for copy in _format_positions(n):
        word = 0
        for i, (r, c) in enumerate(copy):
            word |= int(m[r, c]) << i
        for level in EC_BITS:
            for mk in range(8):
                dist = bin(word ^ format_bits(level, mk)).count("1")
                if best is None or dist < best[0]:
                    best = (dist, level, mk)
    if best[0] > 3:
        raise UncorrectableError("format information unreadable")
    return best[1], best[2]


def decode_modules(m):
    """Decode a sampled module matrix to the payload bytes."""
    n = m.shape[0]
    version = (n - 17) // 4
    if version not in BLOCKS or 17 + 4 * version != n:
        raise NotFoundError(f"module matrix side {n} is not a supported version")
    level, mk = _read_format(m)
    fn = _function_map(version)
    data = m ^ (_mask_grid(mk, n) & ~fn)
    blocks, data_cw, ec_cw = BLOCKS[version][level]
    total = blocks * (data_cw + ec_cw)
    bits = [int(data[r, c]) for r, c in _zigzag(n, fn)][:total * 8]
    cws = [int("".join(map(str, bits[i:i + 8])), 2) for i in range(0, total * 8, 8)]
    per_block = [[] for _ in range(blocks)]
    for i in range(data_cw):
        for b in range(blocks):
            per_block[b].append(cws[i * blocks + b])
    off = data_cw * blocks
    for i in range(ec_cw):
        for b in range(blocks):
            per_block[b].append(cws[off + i * blocks + b])
    payload = []
    for blk in per_block:
        payload += rs.rs_correct(blk, ec_cw)
    stream = "".join(format(b, "08b") for b in payload)
    if stream[:4] != "0100":
        raise UncorrectableError("only byte-mode segments are supported")
    length = int(stream[4:12], 2)
    if 12 + 8 * length > len(stream):
        raise UncorrectableError("byte count exceeds symbol capacity")
    return bytes(int(stream[12 + 8 * i:20 + 8 * i], 2) for i in range(length))


def qr_decode(img, region=None):
    """Locate and decode one axis-aligned QR symbol inside ``region``.

    ``region`` is ``(x, y, w, h)`` in pixels; the whole image when omitted.
    """
    gray = _gray255(img)
    if region is not None:
        x, y, w, h = (int(v) for v in region)
        gray = gray[max(0, y):y + h, max(0, x):x + w]
    if gray.size == 0:
        raise NotFoundError("empty decode region")
    gray = np.pad(gray, 8, constant_values=255.0)
    lo, hi = np.percentile(gray, 2), np.percentile(gray, 98)
    if hi - lo < 48:
        raise NotFoundError("no contrast in decode region")
    threshold = (lo + hi) / 2.0
    finders = _find_finders(gray < threshold)
    if len(finders) < 3:
        raise NotFoundError(f"found {len(finders)} finder patterns, need 3")
    if len(finders) > 3:
        sizes = np.array([f[2] for f in finders])
        med = np.median(sizes)
        finders = sorted(finders, key=lambda f: abs(f[2] - med))[:3]
    tl, tr, bl = _order_finders(finders)
    module_px = float(np.mean([f[2] for f in finders]))
    span = (np.linalg.norm(tr - tl) + np.linalg.norm(bl - tl)) / 2.0 / module_px + 7
    candidates = sorted(range(1, MAX_VERSION + 1), key=lambda v: abs(17 + 4 * v - span))
    last_err = None
    for v in candidates:
        n = 17 + 4 * v
        try:
            m = _sample_grid(gray, threshold, tl, tr, bl, n, module_px)
            return decode_modules(m).decode("latin-1")
        except (UncorrectableError, NotFoundError) as exc:
            last_err = exc
    raise last_err
