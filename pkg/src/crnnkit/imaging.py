"""Image I/O and resizing.

Images are plain ``uint8`` numpy arrays shaped ``(height, width, channels)``
with 1 or 3 channels. Binary PGM (P5) and PPM (P6) are read and written by
this module directly so fixtures are bit-exact; PNG/JPEG go through Pillow.
"""
from __future__ import annotations

import os

import numpy as np

STRETCH = "stretch"
PAD_RIGHT = "pad_right"
LUMA = (0.299, 0.587, 0.114)


class ImageError(ValueError):
    pass


def check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageError(f"expected (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("image must be at least 1x1")
    if img.dtype != np.uint8:
        raise ImageError(f"expected uint8 samples, got {img.dtype}")
    return img


def _read_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageError("truncated PNM header")
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageError("unknown format: not a binary PGM/PPM")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageError(f"bad PNM header field {tok!r}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise ImageError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageError("PNM dimensions must be positive")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageError("truncated PNM header")
    pos += 1
    size = width * height * channels
    payload = data[pos : pos + size]
    if len(payload) < size:
        raise ImageError(f"truncated PNM payload: {len(payload)} of {size} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()


def encode_pnm(img) -> bytes:
    img = check_image(img)
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def load_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] in (b"P5", b"P6"):
        return decode_pnm(data)
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        raise ImageError(f"{path}: unknown format (Pillow not installed)") from None
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "1", "I;16", "I", "F"):
                arr = np.asarray(im.convert("L"))[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from None
    return np.ascontiguousarray(arr, dtype=np.uint8)


def save_image(path, img) -> None:
    img = check_image(img)
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".ppm", ".pnm"):
        if ext == ".pgm" and img.shape[2] != 1:
            raise ImageError("PGM holds single-channel images only")
        if ext == ".ppm" and img.shape[2] != 3:
            raise ImageError("PPM holds 3-channel images only")
        with open(path, "wb") as f:
            f.write(encode_pnm(img))
        return
    from PIL import Image

    arr = img[:, :, 0] if img.shape[2] == 1 else img
    Image.fromarray(arr).save(path)


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_uint8(x) -> np.ndarray:
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)


def to_channels(img, channels: int) -> np.ndarray:
    """Convert between gray and RGB; gray uses ITU-R 601 luma weights."""
    img = check_image(img)
    if img.shape[2] == channels:
        return img
    if channels == 1:
        gray = img.astype(np.float64) @ np.asarray(LUMA)
        return to_uint8(gray)[:, :, None]
    if channels == 3:
        return np.repeat(img, 3, axis=2)
    raise ImageError(f"unsupported channel count {channels}")


def _bilinear_axis(src_len: int, dst_len: int):
    # half-pixel centers: dst pixel i samples source position (i + 0.5) * s - 0.5
    scale = src_len / dst_len
    pos = (np.arange(dst_len) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img, height: int, width: int) -> np.ndarray:
    img = check_image(img)
    h, w, _ = img.shape
    if (h, w) == (height, width):
        return img.copy()
    src = img.astype(np.float64)
    y0, y1, fy = _bilinear_axis(h, height)
    x0, x1, fx = _bilinear_axis(w, width)
    fy = fy[:, None, None]
    rows = src[y0] * (1.0 - fy) + src[y1] * fy
    fx = fx[None, :, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return to_uint8(out)


def resize_to(img, target_h: int, target_w: int, policy: str = PAD_RIGHT) -> np.ndarray:
    """Resize to exactly ``(target_h, target_w)``.

    ``stretch`` resamples both axes. ``pad_right`` scales by ``target_h / h``
    keeping the aspect ratio and zero-pads on the right, falling back to a
    width stretch when the scaled image is wider than ``target_w``.
    """
    if target_h < 1 or target_w < 1:
        raise ImageError("target dimensions must be >= 1")
    img = check_image(img)
    if policy == STRETCH:
        return resize_bilinear(img, target_h, target_w)
    if policy != PAD_RIGHT:
        raise ImageError(f"unknown resize policy {policy!r}")
    h, w, c = img.shape
    scaled_w = max(1, int(round_half_up(w * target_h / h)))
    if scaled_w >= target_w:
        return resize_bilinear(img, target_h, target_w)
    out = np.zeros((target_h, target_w, c), dtype=np.uint8)
    out[:, :scaled_w] = resize_bilinear(img, target_h, scaled_w)
    return out
