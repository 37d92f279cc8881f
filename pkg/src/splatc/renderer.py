"""CPU renderer: reference full evaluation and a tile-binned fast path.

The image reconstruction is a plain sum, with no opacity and no depth order:

    I(p) = sum_i color_i * exp(-0.5 * (p - mu_i)^T Sigma_i^{-1} (p - mu_i))

Pixel centers are sampled at ((x + 0.5) / width, (y + 0.5) / height). The
tiled path truncates each splat to an axis-aligned cutoff box of
CUTOFF_SIGMA standard deviations around its center; a splat is binned into
every tile that box touches and evaluated only on the box pixels, so the
truncated image is identical for any tile size or worker count. Truncation
error per pixel is bounded by n * max|color| * exp(-CUTOFF_SIGMA^2 / 2),
because the Mahalanobis distance of an excluded pixel is at least the cutoff
along one axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import _kernels
from .model import ImageBuffer, SplatSet, _activated, sigmoid, validate

DEFAULT_TILE_SIZE = 16
# 3 sigma leaves worst-case truncation weights near exp(-4.5) ~ 1.1e-2 per
# unit of color, visible at float32 scale; 4 sigma brings them under 3.4e-4.
CUTOFF_SIGMA = 4.0


class RenderError(Exception):
    """Base class for renderer failures."""


class SingularCovarianceError(RenderError):
    """Sigma^{-1} is not finite; only reachable by bypassing the softplus
    construction with extreme raw parameters."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class MixedDimensionsError(RenderError):
    """Batch elements disagree on width/height."""


@dataclass
class TileGrid:
    """Tile decomposition of one image with per-tile splat bins.

    Attributes:
        tile_size: tile edge length in pixels; border tiles may be smaller.
        tiles: (T, 4) int64 array of pixel rects (x0, y0, x1, y1), x1/y1
            exclusive; row-major tile order, disjoint, covering the frame.
        bin_offsets / bin_indices: CSR layout; tile t holds splat indices
            bin_indices[bin_offsets[t]:bin_offsets[t + 1]], ascending. Every
            splat whose cutoff box touches a tile is listed there, which is a
            superset of the splats whose 3-sigma ellipse meets the tile.
    """

    tile_size: int
    tiles: np.ndarray
    bin_offsets: np.ndarray
    bin_indices: np.ndarray

    @property
    def bins(self) -> List[np.ndarray]:
        return [self.bin_indices[self.bin_offsets[t]:self.bin_offsets[t + 1]]
                for t in range(self.tiles.shape[0])]


def pixel_centers(width: int, height: int):
    """Normalized pixel-center coordinates for each axis."""
    px = (np.arange(width, dtype=np.float64) + 0.5) / width
    py = (np.arange(height, dtype=np.float64) + 0.5) / height
    return px, py


def _tile_rects(width: int, height: int, tile_size: int) -> np.ndarray:
    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    rects = np.empty((tiles_x * tiles_y, 4), dtype=np.int64)
    t = 0
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            x0 = tx * tile_size
            y0 = ty * tile_size
            rects[t] = (x0, y0, min(x0 + tile_size, width), min(y0 + tile_size, height))
            t += 1
    return rects


@dataclass
class _BatchPlan:
    """Flattened geometry for a batch of same-sized sets.

    Rows of all sets are concatenated; row_offsets[k] is the first row of set
    k. Dead or off-screen splats carry the sentinel box gx0=-1 > gx1=-2 and
    appear in no bin.
    """

    width: int
    height: int
    tile_size: int
    px: np.ndarray
    py: np.ndarray
    tiles: np.ndarray
    tile_img: np.ndarray
    bin_off: np.ndarray
    bin_idx: np.ndarray
    row_offsets: np.ndarray
    gauss_img: np.ndarray
    alive: np.ndarray
    mux: np.ndarray
    muy: np.ndarray
    i11: np.ndarray
    i12: np.ndarray
    i22: np.ndarray
    col: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sig11: np.ndarray
    sig22: np.ndarray
    gx0: np.ndarray
    gx1: np.ndarray
    gy0: np.ndarray
    gy1: np.ndarray

    @property
    def n_images(self) -> int:
        return len(self.row_offsets) - 1


def _prepare_batch(sets: Sequence[SplatSet], tile_size: int,
                   cutoff_sigma: float) -> _BatchPlan:
    if not sets:
        raise MixedDimensionsError("batch must contain at least one set")
    width, height = sets[0].width, sets[0].height
    for s in sets:
        if (s.width, s.height) != (width, height):
            raise MixedDimensionsError(
                f"batch mixes {width}x{height} with {s.width}x{s.height}")
        validate(s)
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")

    counts = np.array([s.n for s in sets], dtype=np.int64)
    row_offsets = np.concatenate(([0], np.cumsum(counts)))
    mu = np.concatenate([s.mu for s in sets]) if sets else np.zeros((0, 2))
    chol = np.concatenate([s.chol for s in sets])
    col = np.concatenate([s.color for s in sets])
    alive = np.concatenate([s.alive_mask for s in sets])
    gauss_img = np.repeat(np.arange(len(sets), dtype=np.int64), counts)

    a, b, c = _activated(chol)
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow to inf is reported as SingularCovarianceError below
        det = (a * c) ** 2
        i11 = (b * b + c * c) / det
        i12 = -(a * b) / det
        i22 = (a * a) / det
    finite = np.isfinite(i11) & np.isfinite(i12) & np.isfinite(i22)
    if not np.all(finite | ~alive):
        index = int(np.flatnonzero(~finite & alive)[0])
        k = int(np.searchsorted(row_offsets, index, side="right") - 1)
        raise SingularCovarianceError(
            f"covariance inverse is not finite at splat {index - row_offsets[k]}",
            index=int(index - row_offsets[k]))
    sig11 = sigmoid(chol[:, 0])
    sig22 = sigmoid(chol[:, 2])

    sigx = a
    sigy = np.sqrt(b * b + c * c)
    cx = mu[:, 0] * width - 0.5
    cy = mu[:, 1] * height - 0.5
    rx = cutoff_sigma * sigx * width
    ry = cutoff_sigma * sigy * height
    gx0 = np.maximum(np.ceil(cx - rx), 0.0)
    gx1 = np.minimum(np.floor(cx + rx), width - 1.0)
    gy0 = np.maximum(np.ceil(cy - ry), 0.0)
    gy1 = np.minimum(np.floor(cy + ry), height - 1.0)
    empty = (gx0 > gx1) | (gy0 > gy1) | ~alive
    gx0 = np.where(empty, -1.0, gx0).astype(np.int64)
    gx1 = np.where(empty, -2.0, gx1).astype(np.int64)
    gy0 = np.where(empty, -1.0, gy0).astype(np.int64)
    gy1 = np.where(empty, -2.0, gy1).astype(np.int64)

    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    tiles_per_image = tiles_x * tiles_y
    rects = _tile_rects(width, height, tile_size)
    tiles = np.tile(rects, (len(sets), 1))
    tile_img = np.repeat(np.arange(len(sets), dtype=np.int64), tiles_per_image)
    tile_base = gauss_img * tiles_per_image

    gtx0 = np.where(gx0 >= 0, gx0 // tile_size, -1)
    gtx1 = np.where(gx0 >= 0, gx1 // tile_size, -1)
    gty0 = np.where(gx0 >= 0, gy0 // tile_size, -1)
    gty1 = np.where(gx0 >= 0, gy1 // tile_size, -1)

    n_entries = int(np.sum(np.where(
        gx0 >= 0, (gtx1 - gtx0 + 1) * (gty1 - gty0 + 1), 0)))
    bin_off = np.zeros(tiles_per_image * len(sets) + 1, dtype=np.int64)
    bin_idx = np.empty(n_entries, dtype=np.int64)
    _kernels.fill_bins(gtx0, gtx1, gty0, gty1, tiles_x, tile_base,
                       bin_off, bin_idx)

    px, py = pixel_centers(width, height)
    return _BatchPlan(width=width, height=height, tile_size=tile_size,
                      px=px, py=py, tiles=tiles, tile_img=tile_img,
                      bin_off=bin_off, bin_idx=bin_idx, row_offsets=row_offsets,
                      gauss_img=gauss_img, alive=alive,
                      mux=np.ascontiguousarray(mu[:, 0]),
                      muy=np.ascontiguousarray(mu[:, 1]),
                      i11=i11, i12=i12, i22=i22,
                      col=np.ascontiguousarray(col),
                      a=a, b=b, c=c, sig11=sig11, sig22=sig22,
                      gx0=gx0, gx1=gx1, gy0=gy0, gy1=gy1)


def _forward_f64(plan: _BatchPlan) -> np.ndarray:
    out = np.zeros((plan.n_images, plan.height, plan.width, 3), dtype=np.float64)
    _kernels.forward(plan.px, plan.py, plan.tiles, plan.tile_img,
                     plan.bin_off, plan.bin_idx, plan.mux, plan.muy,
                     plan.i11, plan.i12, plan.i22, plan.col,
                     plan.gx0, plan.gx1, plan.gy0, plan.gy1, out)
    return out


def build_tiles(s: SplatSet, tile_size: int = DEFAULT_TILE_SIZE,
                cutoff_sigma: float = CUTOFF_SIGMA) -> TileGrid:
    """Build the tile grid and per-tile splat bins for one set.

    Args:
        s: a valid splat set; dead splats are binned nowhere.
        tile_size: tile edge length in pixels.
        cutoff_sigma: half-width of the cutoff box in standard deviations
            (per axis: mu +- cutoff_sigma * sqrt(diag(Sigma))).

    Returns:
        TileGrid whose tiles partition the frame and whose bins cover, for
        every tile, all splats whose cutoff box intersects it.
    """
    plan = _prepare_batch([s], tile_size, cutoff_sigma)
    return TileGrid(tile_size=tile_size, tiles=plan.tiles,
                    bin_offsets=plan.bin_off, bin_indices=plan.bin_idx)


def render_naive(s: SplatSet) -> ImageBuffer:
    """Reference renderer: every alive splat against every pixel.

    No culling and no cutoff; float64 accumulation in splat index order.
    Quadratic and meant for tests and small oracle runs.
    """
    validate(s)
    px, py = pixel_centers(s.width, s.height)
    a, b, c = _activated(s.chol)
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow to inf is reported as SingularCovarianceError below
        det = (a * c) ** 2
        i11 = (b * b + c * c) / det
        i12 = -(a * b) / det
        i22 = (a * a) / det
    out = np.zeros((s.height, s.width, 3), dtype=np.float64)
    for i in range(s.n):
        if not s.alive_mask[i]:
            continue
        if not (np.isfinite(i11[i]) and np.isfinite(i12[i]) and np.isfinite(i22[i])):
            raise SingularCovarianceError(
                f"covariance inverse is not finite at splat {i}", index=i)
        dx = px - s.mu[i, 0]
        dy = py - s.mu[i, 1]
        u1 = i11[i] * dx[None, :] + i12[i] * dy[:, None]
        u2 = i12[i] * dx[None, :] + i22[i] * dy[:, None]
        q = dx[None, :] * u1 + dy[:, None] * u2
        w = np.exp(-0.5 * q)
        out += w[:, :, None] * s.color[i]
    return ImageBuffer(s.width, s.height, out.astype(np.float32))


def render_tiled(s: SplatSet, tile_size: int = DEFAULT_TILE_SIZE,
                 cutoff_sigma: float = CUTOFF_SIGMA) -> ImageBuffer:
    """Tile-binned renderer; equals render_naive up to cutoff truncation."""
    plan = _prepare_batch([s], tile_size, cutoff_sigma)
    out = _forward_f64(plan)
    return ImageBuffer(s.width, s.height, out[0].astype(np.float32))


def render_batch(sets: Sequence[SplatSet], tile_size: int = DEFAULT_TILE_SIZE,
                 cutoff_sigma: float = CUTOFF_SIGMA) -> List[ImageBuffer]:
    """Render several same-sized sets through one flattened kernel call.

    Element k is bit-identical to render_tiled(sets[k], tile_size): the per
    tile arithmetic does not depend on what else sits in the batch.

    Raises:
        MixedDimensionsError: sets disagree on width/height.
    """
    plan = _prepare_batch(sets, tile_size, cutoff_sigma)
    out = _forward_f64(plan)
    return [ImageBuffer(plan.width, plan.height, out[k].astype(np.float32))
            for k in range(plan.n_images)]
