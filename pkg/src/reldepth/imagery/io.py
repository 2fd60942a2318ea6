"""Readers and writers for binary netpbm images (P5/P6) and PFM float maps.

PFM files follow the usual convention: a ``Pf``/``PF`` magic, a dimensions
line, a scale line whose sign encodes endianness (negative = little endian,
the only variant written here), and rows stored bottom-to-top. Depth maps
mark invalid pixels with a -inf sentinel in the payload and recover them
into the validity mask on load.
"""

import numpy as np

from .types import DEPTH, DepthMap, Image

PFM_INVALID = np.float32(-np.inf)


class ImageIOError(ValueError):
    """Base class for image decoding failures."""


class UnsupportedFormatError(ImageIOError):
    """Magic number is not one of P5, P6, Pf, PF."""


class MalformedHeaderError(ImageIOError):
    """Header tokens missing, non-numeric, or out of range."""


class MalformedPayloadError(ImageIOError):
    """Pixel payload truncated or inconsistent with the header."""


def _read_token(buf, pos):
    """Next whitespace-delimited header token, skipping # comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of header")
    return buf[start:pos], pos


def _parse_int(token, name):
    try:
        value = int(token)
    except ValueError:
        raise MalformedHeaderError(f"non-integer {name}: {token!r}") from None
    return value


def load_image(path) -> Image:
    """Load a P5/P6/PFM file as a unit-range Image.

    Integer formats are divided by their maxval; PFM payloads are scaled by
    the header's |scale| and must already lie in [0, 1].
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 2:
        raise MalformedHeaderError("file too short for a magic number")
    magic = buf[:2]
    if magic in (b"P5", b"P6"):
        return _decode_netpbm(buf, channels=1 if magic == b"P5" else 3)
    if magic in (b"Pf", b"PF"):
        values, scale = _decode_pfm(buf)
        arr = values * abs(scale)
        if arr.min() < 0.0 or arr.max() > 1.0 or not np.all(np.isfinite(arr)):
            raise MalformedPayloadError("PFM image values outside [0, 1]")
        return Image(arr)
    raise UnsupportedFormatError(f"unsupported magic {magic!r}")


def _decode_netpbm(buf, channels):
    pos = 2
    width_tok, pos = _read_token(buf, pos)
    height_tok, pos = _read_token(buf, pos)
    maxval_tok, pos = _read_token(buf, pos)
    width = _parse_int(width_tok, "width")
    height = _parse_int(height_tok, "height")
    maxval = _parse_int(maxval_tok, "maxval")
    if width < 1 or height < 1:
        raise MalformedHeaderError("dimensions must be positive")
    if not 0 < maxval < 65536:
        raise MalformedHeaderError(f"maxval {maxval} out of range")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    payload = buf[pos:pos + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise MalformedPayloadError(
            f"malformed payload: expected {count * dtype.itemsize} bytes,"
            f" got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    arr = (raw / maxval).reshape(height, width, channels)
    return Image(arr)


def save_image(image: Image, path, maxval=255):
    """Write an Image as binary P5 (1 channel) or P6 (3 channels)."""
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} out of range")
    magic = b"P5" if image.channels == 1 else b"P6"
    quant = np.rint(image.data * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = b"%s\n%d %d\n%d\n" % (magic, image.width, image.height, maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quant.astype(dtype).tobytes())


def _decode_pfm(buf):
    magic = buf[:2]
    channels = 3 if magic == b"PF" else 1
    pos = 2
    width_tok, pos = _read_token(buf, pos)
    height_tok, pos = _read_token(buf, pos)
    scale_tok, pos = _read_token(buf, pos)
    width = _parse_int(width_tok, "width")
    height = _parse_int(height_tok, "height")
    try:
        scale = float(scale_tok)
    except ValueError:
        raise MalformedHeaderError(f"non-numeric scale: {scale_tok!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError("dimensions must be positive")
    if scale == 0.0:
        raise MalformedHeaderError("scale must be non-zero")
    pos += 1
    count = width * height * channels
    payload = buf[pos:pos + count * 4]
    if len(payload) != count * 4:
        raise MalformedPayloadError(
            f"malformed payload: expected {count * 4} bytes, got {len(payload)}"
        )
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if channels == 1:
        values = raw.reshape(height, width)
        values = values[::-1]  # rows stored bottom-to-top
    else:
        values = raw.reshape(height, width, 3)[::-1]
    return np.ascontiguousarray(values), scale


def save_pfm(dmap: DepthMap, path):
    """Write a DepthMap as single-channel little-endian PFM.

    Invalid pixels are stored as -inf and restored to the mask on load.
    """
    values = dmap.values.astype(np.float32).copy()
    values[~dmap.mask] = PFM_INVALID
    header = b"Pf\n%d %d\n-1.0\n" % (dmap.width, dmap.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values[::-1].astype("<f4").tobytes())


def load_pfm(path, kind=DEPTH) -> DepthMap:
    """Load a single-channel PFM as a DepthMap, translating sentinels."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] == b"PF":
        raise UnsupportedFormatError("depth maps must be single-channel PFM")
    if buf[:2] != b"Pf":
        raise UnsupportedFormatError(f"unsupported magic {buf[:2]!r}")
    values, scale = _decode_pfm(buf)
    values = values * np.float32(abs(scale))
    mask = np.isfinite(values)
    values[~mask] = 0.0
    return DepthMap(values, mask, kind=kind)
