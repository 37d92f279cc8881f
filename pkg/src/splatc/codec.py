"""GSF serialization: splat sets to compact float16 files and back.

Layout (little-endian throughout):

    offset 0   magic   4 bytes, "GS2F"
    offset 4   version u16, currently 1
    offset 6   width   u16
    offset 8   height  u16
    offset 10  count   u32
    offset 14  flags   u16, bit 0 = colors were clamped to [0, 1] on export
    offset 16  payload count x 8 half-precision values per splat:
               mu.x, mu.y, l11, l21, l22, r, g, b

Cholesky values are stored pre-activation so a decoded set is positive
definite by construction.  File size is exactly 16 + 16 * count bytes.
Half conversion is numpy's round-to-nearest-even, which makes
encode -> decode -> encode a byte-level fixed point.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import ImageBuffer, SplatSet, validate
from .renderer import DEFAULT_TILE_SIZE, render_tiled

MAGIC = b"GS2F"
VERSION = 1
HEADER_FORMAT = "<4sHHHIH"
HEADER_BYTES = struct.calcsize(HEADER_FORMAT)
PARAMS_PER_SPLAT = 8
BYTES_PER_SPLAT = PARAMS_PER_SPLAT * 2
FLAG_COLORS_CLAMPED = 0x0001

PARAM_NAMES = ("mu.x", "mu.y", "l11", "l21", "l22", "r", "g", "b")


class GsfError(Exception):
    """Base class for every malformed-file or unencodable-set condition."""


class BadMagicError(GsfError):
    pass


class UnsupportedVersionError(GsfError):
    pass


class TruncatedPayloadError(GsfError):
    pass


class SizeMismatchError(GsfError):
    pass


class InvalidHeaderError(GsfError):
    pass


class NonFinitePayloadError(GsfError):
    pass


class OutOfRangeError(GsfError):
    """A parameter (or header field) does not fit its storage type."""

    def __init__(self, param: str, message: str):
        super().__init__("%s: %s" % (param, message))
        self.param = param


@dataclass
class GsfFile:
    """Parsed file contents before reconstruction into a SplatSet.

    params holds the raw half-precision values, one row per splat,
    columns ordered as PARAM_NAMES.
    """

    version: int
    width: int
    height: int
    count: int
    flags: int
    params: np.ndarray

    @property
    def colors_clamped(self) -> bool:
        return bool(self.flags & FLAG_COLORS_CLAMPED)

    @property
    def payload_bytes(self) -> int:
        return self.count * BYTES_PER_SPLAT

    @property
    def total_bytes(self) -> int:
        return HEADER_BYTES + self.payload_bytes


def encode_gsf(s: SplatSet, clamp_colors: bool = False) -> bytes:
    """Serialize a compacted splat set.

    Args:
        s: Valid set with every splat alive (compact first if needed).
        clamp_colors: Clamp color channels to [0, 1] before storage and
            record that in the header flags.

    Returns:
        The complete file as bytes, 16 + 16 * n long.

    Raises:
        ValueError: if the set still contains dead splats.
        OutOfRangeError: if dimensions exceed u16 or a parameter would
            round to infinity in half precision.
    """
    validate(s)
    if not bool(np.all(s.alive_mask)):
        raise ValueError("encode requires a compacted set; call compact() first")
    if s.width > 0xFFFF:
        raise OutOfRangeError("width", "%d exceeds u16" % s.width)
    if s.height > 0xFFFF:
        raise OutOfRangeError("height", "%d exceeds u16" % s.height)

    n = s.n
    params = np.empty((n, PARAMS_PER_SPLAT), dtype=np.float64)
    params[:, 0:2] = s.mu
    params[:, 2:5] = s.chol
    flags = 0
    if clamp_colors:
        params[:, 5:8] = np.clip(s.color, 0.0, 1.0)
        flags |= FLAG_COLORS_CLAMPED
    else:
        params[:, 5:8] = s.color

    with np.errstate(over="ignore"):
        # overflow to inf is caught right below and reported per parameter
        half = params.astype("<f2")
    bad = ~np.isfinite(half.astype(np.float64))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise OutOfRangeError(
            PARAM_NAMES[col],
            "value %r at splat %d exceeds the half-precision finite range"
            % (params[row, col], row))

    header = struct.pack(HEADER_FORMAT, MAGIC, VERSION,
                         s.width, s.height, n, flags)
    return header + half.tobytes()


def parse_gsf(data: bytes) -> GsfFile:
    """Validate and split raw bytes into header fields and parameter rows.

    Raises:
        BadMagicError: wrong or missing magic.
        TruncatedPayloadError: header or payload cut short.
        UnsupportedVersionError: version field is not 1.
        InvalidHeaderError: zero width or height.
        SizeMismatchError: trailing bytes beyond the declared payload.
    """
    if len(data) < len(MAGIC) or data[:4] != MAGIC:
        raise BadMagicError("not a GSF file (magic %r)" % data[:4])
    if len(data) < HEADER_BYTES:
        raise TruncatedPayloadError(
            "incomplete header: %d of %d bytes" % (len(data), HEADER_BYTES))
    _, version, width, height, count, flags = struct.unpack(
        HEADER_FORMAT, data[:HEADER_BYTES])
    if version != VERSION:
        raise UnsupportedVersionError("version %d, expected %d"
                                      % (version, VERSION))
    if width == 0 or height == 0:
        raise InvalidHeaderError("zero image dimensions %dx%d"
                                 % (width, height))
    expected = HEADER_BYTES + count * BYTES_PER_SPLAT
    if len(data) < expected:
        raise TruncatedPayloadError(
            "payload holds %d of %d bytes for count %d"
            % (len(data) - HEADER_BYTES, count * BYTES_PER_SPLAT, count))
    if len(data) > expected:
        raise SizeMismatchError(
            "%d trailing bytes beyond declared payload" % (len(data) - expected))
    params = np.frombuffer(data, dtype="<f2",
                           offset=HEADER_BYTES).reshape(count, PARAMS_PER_SPLAT)
    return GsfFile(version=version, width=width, height=height,
                   count=count, flags=flags, params=params)


def decode_gsf(data: bytes) -> SplatSet:
    """Reconstruct a splat set; inverse of encode_gsf up to half rounding.

    Raises:
        GsfError subclasses as parse_gsf, plus NonFinitePayloadError when
        the payload stores an infinity or NaN.
    """
    f = parse_gsf(data)
    params = f.params.astype(np.float64)
    bad = ~np.isfinite(params)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFinitePayloadError(
            "non-finite %s at splat %d" % (PARAM_NAMES[col], row))
    return SplatSet(width=f.width, height=f.height,
                    mu=params[:, 0:2].copy(),
                    chol=params[:, 2:5].copy(),
                    color=params[:, 5:8].copy())


def decode_to_image(data: bytes,
                    tile_size: int = DEFAULT_TILE_SIZE) -> ImageBuffer:
    """Decode and render, clamped to [0, 1] for export."""
    s = decode_gsf(data)
    img = render_tiled(s, tile_size)
    return ImageBuffer(width=img.width, height=img.height,
                       data=np.clip(img.data, 0.0, 1.0))
