"""Binary netpbm frame I/O: 8-bit PGM (P5) and PPM (P6).

Headers follow the netpbm convention: magic, width, height, maxval as
whitespace-separated tokens with '#' comments allowed between them, then a
single whitespace byte and the raster. Only maxval 255 is accepted.
"""

import numpy as np

from .errors import DecodeError

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _parse_header(buf, path):
    if buf[:2] not in (b"P5", b"P6"):
        raise DecodeError(f"{path}: not a binary PGM/PPM file (magic {buf[:2]!r})")
    magic = buf[:2].decode()
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1] in _WHITESPACE:
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1] not in _WHITESPACE:
            pos += 1
        if start == pos:
            raise DecodeError(f"{path}: truncated header")
        token = buf[start:pos]
        if not token.isdigit():
            raise DecodeError(f"{path}: non-numeric header field {token!r}")
        fields.append(int(token))
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise DecodeError(f"{path}: missing whitespace before raster")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"{path}: only maxval 255 is supported, got {maxval}")
    return magic, width, height, pos


def read_image(path):
    """Decode to a uint8 array: (H, W) for P5, (H, W, 3) for P6."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, pos = _parse_header(buf, path)
    channels = 1 if magic == "P5" else 3
    need = width * height * channels
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise DecodeError(f"{path}: raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3)


def read_frame(path):
    """Decode one frame to grayscale float32 in [0, 1].

    Color frames are converted with luma Y = 0.299 R + 0.587 G + 0.114 B.
    """
    arr = read_image(path)
    if arr.ndim == 3:
        gray = arr.astype(np.float32) @ LUMA
    else:
        gray = arr.astype(np.float32)
    return gray / np.float32(255.0)


def write_pgm(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim != 2:
        raise DecodeError(f"PGM data must be (H, W), got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def write_ppm(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DecodeError(f"PPM data must be (H, W, 3), got shape {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())
