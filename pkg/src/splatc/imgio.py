"""8-bit RGB image files: PNG (via Pillow) and binary PPM (P6).

Inputs that are not plain 8-bit RGB (grayscale, alpha, palette, 16-bit)
are rejected rather than silently converted.  All writes go through a
temp-file-and-rename so a failed save never leaves a partial file.
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .model import ImageBuffer


class ImageIOError(Exception):
    """Unsupported or malformed image content (missing files stay OSError)."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file via a same-directory temp file and os.replace."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent),
                               prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_ppm_token(f) -> bytes:
    c = f.read(1)
    while c and (c.isspace() or c == b"#"):
        if c == b"#":
            while c and c != b"\n":
                c = f.read(1)
        c = f.read(1)
    tok = b""
    while c and not c.isspace():
        tok += c
        c = f.read(1)
    return tok


def _load_ppm(path: Path) -> ImageBuffer:
    with open(path, "rb") as f:
        if _read_ppm_token(f) != b"P6":
            raise ImageIOError("%s: not a binary (P6) PPM" % path)
        try:
            width = int(_read_ppm_token(f))
            height = int(_read_ppm_token(f))
            maxval = int(_read_ppm_token(f))
        except ValueError as exc:
            raise ImageIOError("%s: malformed PPM header" % path) from exc
        if width < 1 or height < 1:
            raise ImageIOError("%s: bad PPM dimensions %dx%d"
                               % (path, width, height))
        if maxval != 255:
            raise ImageIOError("%s: only maxval 255 supported, got %d"
                               % (path, maxval))
        raw = f.read(width * height * 3)
    if len(raw) != width * height * 3:
        raise ImageIOError("%s: PPM pixel data truncated" % path)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer(width=width, height=height,
                       data=arr.astype(np.float32) / 255.0)


def _load_png(path: Path) -> ImageBuffer:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise ImageIOError(
                    "%s: mode %s not supported; convert to 8-bit RGB first"
                    % (path, im.mode))
            arr = np.asarray(im, dtype=np.uint8)
    except Image.UnidentifiedImageError as exc:
        raise ImageIOError("%s: not a PNG" % path) from exc
    return ImageBuffer(width=arr.shape[1], height=arr.shape[0],
                       data=arr.astype(np.float32) / 255.0)


def load_image(path: str | Path) -> ImageBuffer:
    """Load an 8-bit RGB image as float32 in [0, 1].

    Raises:
        ImageIOError: unsupported suffix, non-RGB content, malformed file.
        OSError: unreadable path.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        return _load_ppm(path)
    if suffix == ".png":
        return _load_png(path)
    raise ImageIOError("%s: unsupported image suffix %r (use .png or .ppm)"
                       % (path, suffix))


def to_uint8(img: ImageBuffer) -> np.ndarray:
    """Clamp to [0, 1] and quantize to 8-bit, rounding half up."""
    return (np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(path: str | Path, img: ImageBuffer) -> None:
    """Write a PNG or PPM chosen by suffix; atomic on success.

    Raises:
        ImageIOError: unsupported suffix.
        OSError: unwritable destination.
    """
    path = Path(path)
    arr = to_uint8(img)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        header = b"P6\n%d %d\n255\n" % (img.width, img.height)
        atomic_write_bytes(path, header + arr.tobytes())
    elif suffix == ".png":
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())
    else:
        raise ImageIOError("%s: unsupported image suffix %r (use .png or .ppm)"
                           % (path, suffix))
