"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data, count, pos):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated netpbm header")
        out.append(data[start:pos])
    return out, pos


def decode_pnm(data):
    """Parse P5/P6 bytes into an (H, W) or (H, W, 3) uint8 array."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError("only binary PGM (P5) and PPM (P6) are supported")
    fields, pos = _tokens(data, 3, 2)
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise ImageFormatError("malformed netpbm header") from None
    if w < 1 or h < 1:
        raise ImageFormatError("image extents must be positive")
    if not 1 <= maxval <= 255:
        raise ImageFormatError("only 8-bit netpbm images are supported")
    pos += 1  # single whitespace byte before the raster
    channels = 3 if magic == b"P6" else 1
    size = w * h * channels
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise ImageFormatError("truncated netpbm raster")
    img = np.frombuffer(raster, dtype=np.uint8).reshape((h, w, channels) if channels == 3 else (h, w))
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img.copy()


def encode_pnm(img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError("expected uint8 image")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_image(path):
    with open(path, "rb") as f:
        return decode_pnm(f.read())


def write_image(path, img):
    with open(path, "wb") as f:
        f.write(encode_pnm(img))


def to_rgb(img):
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    return img


def to_gray(img):
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        return img
    return np.round(img.astype(np.float64).mean(axis=2)).astype(np.uint8)
