"""Image buffers, raster codecs, resampling and DCT-domain JPEG quantisation.

Images are held as ``uint8`` arrays of shape ``(height, width, channels)``
wrapped in :class:`ImageBuffer`.  Intermediate real-valued planes are plain
2-D ``float64`` arrays ("float planes").
"""

import io
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .errors import DimensionError, DomainError, FormatError, IoError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# ITU-T T.81 Annex K, table K.1
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded 8-bit raster, row-major, ``data.shape == (height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DimensionError(f"expected HxWx1 or HxWx3 array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError("image must be at least 1x1")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise DomainError("pixel values must lie in [0, 255]")
            data = data.astype(np.uint8)
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"ImageBuffer(width={self.width}, height={self.height}, channels={self.channels})"

    @classmethod
    def filled(cls, width, height, value):
        value = np.atleast_1d(np.asarray(value, dtype=np.uint8))
        return cls(np.broadcast_to(value, (height, width, value.size)).copy())

    def rgb(self):
        """Return the pixels as an ``(H, W, 3)`` array, replicating gray."""
        if self.channels == 3:
            return self.data
        return np.repeat(self.data, 3, axis=2)


def as_plane(plane):
    """Validate and return a float plane (2-D, finite, float64)."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"float plane must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("float plane contains non-finite values")
    return arr


# --------------------------------------------------------------------------- codecs


def load_image(path):
    """Decode a PNG, PPM/PGM or baseline JPEG file into an 8-bit ImageBuffer."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_image(raw, name=str(path))


def decode_image(raw, name="<bytes>"):
    if raw.startswith(_PNG_SIG):
        arr = decode_png(raw)
        if arr.dtype == np.uint16:
            arr = ((arr.astype(np.uint32) * 255 + 32767) // 65535).astype(np.uint8)
        return ImageBuffer(arr)
    if raw[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return ImageBuffer(_decode_pnm(raw))
    if raw[:2] == b"\xff\xd8":
        return ImageBuffer(_decode_jpeg(raw))
    raise FormatError(f"{name}: unsupported image format")


def save_image(img, path):
    """Write ``img`` as PNG, or PPM/PGM when the suffix is .ppm/.pgm/.pnm."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        payload = encode_pnm(img)
    elif suffix == ".png":
        payload = encode_png(img.data)
    else:
        raise FormatError(f"cannot encode {suffix or 'extension-less'} files; use .png, .ppm or .pgm")
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def encode_png(arr):
    """Encode an ``(H, W[, C])`` uint8 or uint16 array as a PNG byte string.

    Rows use filter type 0; output is deterministic for identical input.
    """
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    color_type = {1: 0, 2: 4, 3: 2, 4: 6}[c]
    if arr.dtype == np.uint8:
        depth = 8
        rows = arr
    elif arr.dtype == np.uint16:
        depth = 16
        rows = arr.astype(">u2")
    else:
        raise FormatError(f"PNG encoding needs uint8 or uint16, got {arr.dtype}")
    body = rows.reshape(h, -1).view(np.uint8)
    filtered = np.zeros((h, body.shape[1] + 1), dtype=np.uint8)
    filtered[:, 1:] = body
    ihdr = struct.pack(">IIBBBBB", w, h, depth, color_type, 0, 0, 0)
    return (_PNG_SIG + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(filtered.tobytes(), 9))
            + _png_chunk(b"IEND", b""))


def _png_chunk(tag, payload):
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def decode_png(raw):
    """Decode a non-interlaced PNG to an ``(H, W, C)`` uint8/uint16 array.

    Alpha channels are dropped; palette images are expanded to RGB.
    """
    if not raw.startswith(_PNG_SIG):
        raise FormatError("not a PNG stream")
    pos = len(_PNG_SIG)
    header = None
    palette = None
    idat = []
    ended = False
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise FormatError("truncated PNG chunk header")
        (length,) = struct.unpack(">I", raw[pos:pos + 4])
        tag = raw[pos + 4:pos + 8]
        payload = raw[pos + 8:pos + 8 + length]
        if len(payload) != length or pos + 12 + length > len(raw):
            raise FormatError("truncated PNG chunk")
        (crc,) = struct.unpack(">I", raw[pos + 8 + length:pos + 12 + length])
        if crc != zlib.crc32(tag + payload) & 0xFFFFFFFF:
            raise FormatError(f"PNG chunk {tag!r} fails CRC check")
        pos += 12 + length
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif tag == b"PLTE":
            palette = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
        elif tag == b"IDAT":
            idat.append(payload)
        elif tag == b"IEND":
            ended = True
            break
    if header is None or not idat or not ended:
        raise FormatError("PNG stream is missing IHDR, IDAT or IEND")
    w, h, depth, color_type, _, _, interlace = header
    if interlace:
        raise FormatError("interlaced PNG is not supported")
    samples = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}.get(color_type)
    packed_ok = color_type in (0, 3) and depth in (1, 2, 4)
    if samples is None or (depth not in (8, 16) and not packed_ok) or (color_type == 3 and depth == 16):
        raise FormatError(f"unsupported PNG colour type {color_type} / depth {depth}")
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise FormatError(f"corrupt PNG image data: {exc}") from exc
    bpp = max(samples * depth // 8, 1)
    stride = (w * samples * depth + 7) // 8
    if len(data) != h * (stride + 1):
        raise FormatError("PNG image data has the wrong size")
    rows = _png_unfilter(np.frombuffer(data, dtype=np.uint8).reshape(h, stride + 1), bpp)
    if depth < 8:
        bits = np.unpackbits(rows, axis=1)[:, : w * depth].reshape(h, w, depth)
        arr = (bits * (1 << np.arange(depth - 1, -1, -1, dtype=np.uint8))).sum(axis=2, dtype=np.uint8)
        arr = arr[:, :, None]
        if color_type == 0:
            arr = arr * np.uint8(255 // ((1 << depth) - 1))
    elif depth == 16:
        arr = rows.view(">u2").astype(np.uint16).reshape(h, w, samples)
    else:
        arr = rows.reshape(h, w, samples)
    if color_type == 3:
        if palette is None:
            raise FormatError("palette PNG without PLTE chunk")
        arr = palette[arr[:, :, 0]]
    elif color_type in (4, 6):
        arr = arr[:, :, :-1]
    return np.ascontiguousarray(arr)


def _png_unfilter(scan, bpp):
    h, stride = scan.shape[0], scan.shape[1] - 1
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(h):
        ftype = scan[y, 0]
        line = scan[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for x in range(bpp, stride):
                cur[x] = (cur[x] + cur[x - bpp]) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[x] = (cur[x] + pred) & 0xFF
        else:
            raise FormatError(f"invalid PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def encode_pnm(img):
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.data.tobytes()


def _decode_pnm(raw):
    magic = raw[:2]
    tokens = []
    pos = 2
    needed = 3
    while len(tokens) < needed:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError("truncated PNM header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        try:
            tokens.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FormatError("malformed PNM header") from exc
    w, h, maxval = tokens
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise FormatError("invalid PNM dimensions or maxval")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace after maxval
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        nbytes = count * np.dtype(dtype).itemsize
        body = raw[pos:pos + nbytes]
        if len(body) != nbytes:
            raise FormatError("truncated PNM pixel data")
        values = np.frombuffer(body, dtype=dtype).astype(np.int64)
    else:
        try:
            values = np.array(raw[pos:].split()[:count], dtype=np.int64)
        except ValueError as exc:
            raise FormatError("malformed ASCII PNM data") from exc
        if values.size != count:
            raise FormatError("truncated PNM pixel data")
    if np.any(values > maxval):
        raise FormatError("PNM sample exceeds maxval")
    if maxval != 255:
        values = (values * 255 + maxval // 2) // maxval
    return values.astype(np.uint8).reshape(h, w, channels)


def _decode_jpeg(raw):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise FormatError(f"corrupt or unsupported JPEG: {exc}") from exc
    return arr


# --------------------------------------------------------------------------- pixel ops


def to_grayscale(img):
    """Luma (ITU-R 601) in [0, 1] as a float plane."""
    data = img.data.astype(np.float64)
    if img.channels == 1:
        gray = data[:, :, 0]
    else:
        gray = data @ LUMA_WEIGHTS
    return np.clip(gray / 255.0, 0.0, 1.0)


def _axis_weights(n_in, n_out):
    # half-pixel centres, clamped at the edges
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(plane, out_w, out_h):
    """Bilinear resampling with edge clamping; identity for unchanged size."""
    plane = as_plane(plane)
    if out_w < 1 or out_h < 1:
        raise DimensionError(f"target size must be positive, got {out_w}x{out_h}")
    h, w = plane.shape
    if (h, w) == (out_h, out_w):
        return plane.copy()
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    rows = plane[y0] * (1.0 - fy)[:, None] + plane[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    # convex combination; clip guards against rounding past the input range
    return np.clip(out, plane.min(), plane.max())


def quant_table(quality):
    """Luminance quantisation table scaled by the libjpeg quality rule."""
    if not 1 <= quality <= 100:
        raise DomainError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((JPEG_LUMA_TABLE * scale + 50) // 100, 1, 255)


def jpeg_quantize_roundtrip(plane, quality):
    """Simulate JPEG recompression of a [0, 255] plane in the DCT domain.

    Each 8x8 block is transformed with an orthonormal DCT-II, its AC
    coefficients quantised with :func:`quant_table`, then inverted and
    clamped to [0, 255].  The DC coefficient (the block mean) passes through
    unquantised so a flat block is reproduced exactly at every quality.  The
    usual -128 level shift only moves DC and is therefore omitted.
    """
    table = quant_table(int(quality)).astype(np.float64)
    plane = as_plane(plane)
    h, w = plane.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    quant = np.round(coef / table) * table
    quant[:, :, 0, 0] = 0.0
    # DC-only part of the inverse is the block mean; adding it separately
    # (taken verbatim for flat blocks) keeps flat blocks bit-exact
    mean = blocks.mean(axis=(2, 3), keepdims=True)
    flat = blocks.min(axis=(2, 3), keepdims=True) == blocks.max(axis=(2, 3), keepdims=True)
    mean = np.where(flat, blocks[:, :, :1, :1], mean)
    rec = idctn(quant, type=2, axes=(2, 3), norm="ortho") + mean
    rec = rec.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)[:h, :w]
    return np.clip(rec, 0.0, 255.0)


def resolve_root(root=None):
    """Dataset root from the argument, ``SCANTEX_ROOT`` or the working directory."""
    if root:
        return Path(root)
    env = os.environ.get("SCANTEX_ROOT")
    return Path(env) if env else Path.cwd()
