"""Core data model: 2D Gaussians, splat sets, and image buffers.

A splat is an anisotropic 2D Gaussian with a color. Its covariance is stored
through a lower-triangular Cholesky factor

    L = [[softplus(l11), 0],
         [l21,           softplus(l22)]],    Sigma = L @ L.T

so Sigma is symmetric positive definite for every finite parameter triple
(l11, l21, l22). Positions live in normalized image coordinates, where both
axes span [0, 1] regardless of the pixel resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

# Activated diagonal entries are floored here so Sigma stays positive
# definite even where softplus underflows to 0.0 in float64.
DIAG_FLOOR = 1e-12


class SplatError(ValueError):
    """Base class for model-level validation errors."""


class NonFiniteError(SplatError):
    """A parameter is NaN or infinite."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class DimensionMismatchError(SplatError):
    """Array shapes or image dimensions do not agree."""


def softplus(x):
    """Numerically stable log(1 + exp(x))."""
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """Inverse of softplus for y > 0: log(exp(y) - 1).

    Evaluated as y + log1p(-exp(-y)) for large y, where expm1 would
    overflow float64.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ValueError("inv_softplus requires positive input")
    small = np.log(np.expm1(np.minimum(y, 20.0)))
    large = y + np.log1p(-np.exp(-y))
    return np.where(y > 20.0, large, small)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class Gaussian2D:
    """One splat: position, Cholesky parameters, and RGB color.

    Attributes:
        mu: (2,) position in normalized [0, 1] coordinates.
        chol: (3,) pre-activation Cholesky parameters (l11, l21, l22).
        color: (3,) RGB coefficients; may leave [0, 1] during fitting.
    """

    mu: np.ndarray
    chol: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        sizes = {"mu": 2, "chol": 3, "color": 3}
        coerced = {}
        for name, want in sizes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size != want:
                raise DimensionMismatchError(
                    f"{name} must have {want} entries, got shape {arr.shape}")
            coerced[name] = arr.reshape(want)
        mu, chol, color = coerced["mu"], coerced["chol"], coerced["color"]
        for name, arr in coerced.items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"non-finite {name} in Gaussian2D")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "color", color)


def _activated(chol: np.ndarray):
    """Map pre-activation (l11, l21, l22) rows to Cholesky entries (a, b, c)."""
    a = np.maximum(softplus(chol[..., 0]), DIAG_FLOOR)
    b = np.asarray(chol[..., 1], dtype=np.float64)
    c = np.maximum(softplus(chol[..., 2]), DIAG_FLOOR)
    return a, b, c


def covariance_of(g: Gaussian2D) -> np.ndarray:
    """Reconstruct the 2x2 covariance Sigma = L @ L.T of one splat."""
    a, b, c = _activated(np.asarray(g.chol, dtype=np.float64))
    return np.array([[a * a, a * b], [a * b, b * b + c * c]], dtype=np.float64)


@dataclass
class SplatSet:
    """An ordered collection of splats tied to a target resolution.

    Parameters are stored as packed arrays so rendering and fitting can stay
    vectorized; `gaussians` materializes per-splat views on demand. The alive
    mask supports pruning without disturbing optimizer state: dead splats keep
    their rows until `compact` drops them.
    """

    width: int
    height: int
    mu: np.ndarray
    chol: np.ndarray
    color: np.ndarray
    alive_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError("width and height must be >= 1")
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.chol = np.ascontiguousarray(self.chol, dtype=np.float64)
        self.color = np.ascontiguousarray(self.color, dtype=np.float64)
        if self.mu.ndim != 2 or self.mu.shape[1] != 2:
            raise DimensionMismatchError(f"mu must be (n, 2), got {self.mu.shape}")
        n = self.mu.shape[0]
        if self.chol.shape != (n, 3):
            raise DimensionMismatchError(f"chol must be ({n}, 3), got {self.chol.shape}")
        if self.color.shape != (n, 3):
            raise DimensionMismatchError(f"color must be ({n}, 3), got {self.color.shape}")
        if self.alive_mask is None:
            self.alive_mask = np.ones(n, dtype=bool)
        self.alive_mask = np.ascontiguousarray(self.alive_mask, dtype=bool)
        if self.alive_mask.shape != (n,):
            raise DimensionMismatchError(f"alive_mask must be ({n},), got {self.alive_mask.shape}")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def n_alive(self) -> int:
        return int(np.count_nonzero(self.alive_mask))

    @property
    def gaussians(self) -> list:
        return [Gaussian2D(self.mu[i], self.chol[i], self.color[i]) for i in range(self.n)]

    @classmethod
    def from_gaussians(cls, width: int, height: int, gaussians: Iterable[Gaussian2D]) -> "SplatSet":
        gs = list(gaussians)
        if gs:
            mu = np.stack([g.mu for g in gs])
            chol = np.stack([g.chol for g in gs])
            color = np.stack([g.color for g in gs])
        else:
            mu = np.zeros((0, 2))
            chol = np.zeros((0, 3))
            color = np.zeros((0, 3))
        return cls(width, height, mu, chol, color)

    def copy(self) -> "SplatSet":
        return SplatSet(self.width, self.height, self.mu.copy(), self.chol.copy(),
                        self.color.copy(), self.alive_mask.copy())


def validate(s: SplatSet) -> None:
    """Check the set invariants, raising on the first violation.

    Raises:
        NonFiniteError: some splat carries a NaN/Inf parameter; the error
            names the lowest offending splat index.
        DimensionMismatchError: width/height invalid, or arrays were
            mutated into inconsistent shapes after construction.
    """
    if s.width < 1 or s.height < 1:
        raise DimensionMismatchError("width and height must be >= 1")
    n = s.mu.shape[0] if s.mu.ndim == 2 else -1
    if (s.mu.ndim != 2 or s.mu.shape[1] != 2 or s.chol.shape != (n, 3)
            or s.color.shape != (n, 3)):
        raise DimensionMismatchError(
            "parameter arrays disagree: mu %s, chol %s, color %s"
            % (s.mu.shape, s.chol.shape, s.color.shape))
    if s.alive_mask.shape != (n,):
        raise DimensionMismatchError(
            "alive_mask must be (%d,), got %s" % (n, s.alive_mask.shape))
    bad = ~(np.isfinite(s.mu).all(axis=1)
            & np.isfinite(s.chol).all(axis=1)
            & np.isfinite(s.color).all(axis=1))
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite parameters at splat {index}", index=index)


def compact(s: SplatSet) -> SplatSet:
    """Drop dead splats, preserving the relative order of survivors."""
    keep = s.alive_mask
    return SplatSet(s.width, s.height, s.mu[keep].copy(), s.chol[keep].copy(),
                    s.color[keep].copy())


@dataclass
class ImageBuffer:
    """An RGB raster in float32, shaped (height, width, 3).

    Target images live in [0, 1]; raw reconstructions may overshoot that
    range and are only clamped where a contract says so (PSNR, 8-bit export).
    """

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DimensionMismatchError("width and height must be >= 1")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != (self.height, self.width, 3):
            raise DimensionMismatchError(
                f"data must be ({self.height}, {self.width}, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("image buffer contains non-finite values")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionMismatchError(f"expected (H, W, 3) array, got {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr.astype(np.float32))

    @classmethod
    def zeros(cls, width: int, height: int) -> "ImageBuffer":
        return cls(width, height, np.zeros((height, width, 3), dtype=np.float32))
