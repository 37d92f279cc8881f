"""Quality and compression measurement for splat reconstructions.

PSNR uses peak 1.0 on [0, 1]-clamped images, the natural convention for
8-bit sources divided by 255.  Compression ratios compare raw 24-bit RGB
bytes against the float16 splat payload (8 parameters x 2 bytes each);
the 16-byte file header is excluded from the headline ratio and folded
into ``compression_ratio_total``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DimensionMismatchError, ImageBuffer

HEADER_BYTES = 16
BYTES_PER_SPLAT = 16


@dataclass
class QualityReport:
    """Reconstruction quality and size accounting for one encoded image.

    Attributes:
        mse: Mean squared error over all pixels and channels, clamped inputs.
        psnr_db: 10*log10(1/mse); ``math.inf`` when mse is exactly zero.
        compression_ratio: Raw RGB bytes divided by payload bytes (no header).
        n_gaussians: Splat count the payload stores.
        bytes_payload: n_gaussians * 16.
        bytes_total: bytes_payload plus the 16-byte header.
    """

    mse: float
    psnr_db: float
    compression_ratio: float
    n_gaussians: int
    bytes_payload: int
    bytes_total: int

    @property
    def compression_ratio_total(self) -> float:
        """Ratio including the file header in the compressed size."""
        raw = self.compression_ratio * self.bytes_payload
        return raw / self.bytes_total


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean squared error between two images after clamping to [0, 1].

    Raises:
        DimensionMismatchError: if the images differ in size.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            "cannot compare %dx%d against %dx%d"
            % (a.width, a.height, b.width, b.height))
    x = np.clip(a.data.astype(np.float64), 0.0, 1.0)
    y = np.clip(b.data.astype(np.float64), 0.0, 1.0)
    diff = x - y
    return float(np.mean(diff * diff))


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB, peak value 1.0.

    Returns ``math.inf`` for identical images; report writers render that
    sentinel as the string "inf".

    Raises:
        DimensionMismatchError: if the images differ in size.
    """
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def compression_ratio(width: int, height: int, n_gaussians: int) -> float:
    """Raw 8-bit RGB bytes divided by float16 payload bytes.

    Args:
        width: Image width in pixels, >= 1.
        height: Image height in pixels, >= 1.
        n_gaussians: Stored splat count, >= 1.
    """
    if width < 1 or height < 1 or n_gaussians < 1:
        raise ValueError("width, height and n_gaussians must be >= 1")
    return (width * height * 3) / (n_gaussians * BYTES_PER_SPLAT)


def quality_report(rendered: ImageBuffer, target: ImageBuffer,
                   n_gaussians: int) -> QualityReport:
    """Bundle PSNR and size accounting for one reconstruction."""
    err = mse(rendered, target)
    payload = n_gaussians * BYTES_PER_SPLAT
    return QualityReport(
        mse=err,
        psnr_db=math.inf if err == 0.0 else 10.0 * math.log10(1.0 / err),
        compression_ratio=compression_ratio(target.width, target.height,
                                            max(n_gaussians, 1)),
        n_gaussians=n_gaussians,
        bytes_payload=payload,
        bytes_total=HEADER_BYTES + payload,
    )
