"""Binary PPM (P6) reading and writing, with optional PNG input.

Images are float arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``.
Export quantizes with ``floor(v * 255 + 0.5)`` after clamping, i.e. round
half away from zero on the non-negative range.
"""

import os

import numpy as np

_WHITESPACE = b" \t\n\r\v\f"


class PPMError(ValueError):
    pass


def _read_token(data, pos):
    # skip whitespace and '#' comments, then read one token
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMError(f"header ended early at byte {start}")
    return data[start:pos], pos


def decode_ppm(data):
    """Parse P6 bytes into an ``(H, W, 3)`` uint8 array."""
    data = bytes(data)
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise PPMError(f"not a binary PPM (magic {magic[:8]!r})")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise PPMError(f"bad {name} {tok[:16]!r} before byte {pos}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PPMError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}; only 255 is handled")
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise PPMError(f"missing whitespace after header at byte {pos}")
    pos += 1
    need = width * height * 3
    have = len(data) - pos
    if have < need:
        raise PPMError(
            f"truncated payload: expected {need} bytes from offset {pos}, "
            f"file ends at byte {len(data)}"
        )
    return np.frombuffer(data, np.uint8, need, pos).reshape(height, width, 3).copy()


def encode_ppm(pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 array")
    h, w = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def to_uint8(image):
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(image * 255.0 + 0.5).astype(np.uint8)


def to_float(pixels):
    return np.asarray(pixels, dtype=np.float64) / 255.0


def load(path):
    """Read a P6 PPM (or a PNG, if Pillow is installed) as floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return to_float(_load_png(path))
    return to_float(decode_ppm(data))


def _load_png(path):
    try:
        from PIL import Image
    except ImportError as exc:
        raise PPMError("PNG input needs Pillow") from exc
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save(image, path):
    """Clamp to [0, 1], quantize and write a P6 file."""
    data = encode_ppm(to_uint8(image))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
