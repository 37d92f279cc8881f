"""Gradient-descent fitting of splat sets to target images.

Optimization is plain Adam over all eight parameters per splat, with the
analytic gradients from `gradients`. Two initializers are provided: a
structured one that seeds splats on a grid with per-cell mean colors and an
inscribed-circle sigma, and a uniform random baseline. Batched fitting runs
several images through the same kernels in lockstep; every image computes
exactly what a solo fit would, so batch results match sequential ones.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .gradients import _batch_backward
from .metrics import psnr
from .model import (DimensionMismatchError, ImageBuffer, NonFiniteError,
                    SplatSet, compact, inv_softplus)
from .pruning import PruneConfig, prune
from .renderer import (CUTOFF_SIGMA, DEFAULT_TILE_SIZE, MixedDimensionsError,
                       SingularCovarianceError, _prepare_batch, render_tiled)

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """The loss left the finite range; fitting cannot continue."""

    def __init__(self, iteration: int, image_index: int = 0):
        super().__init__(f"loss became non-finite at iteration {iteration}"
                         f" (image {image_index})")
        self.iteration = iteration
        self.image_index = image_index


@dataclass
class FitConfig:
    """Knobs for one fitting run.

    learning_rate applies to every parameter group unless one of the
    per-group overrides (lr_mu, lr_chol, lr_color) is set.
    """

    num_gaussians: int
    iterations: int = 3000
    learning_rate: float = 1e-2
    l1_weight: float = 0.0
    init_strategy: str = "structured"
    prune: Optional[PruneConfig] = None
    seed: int = 0
    tile_size: int = DEFAULT_TILE_SIZE
    log_every: int = 50
    lr_mu: Optional[float] = None
    lr_chol: Optional[float] = None
    lr_color: Optional[float] = None

    def __post_init__(self):
        if self.num_gaussians < 1:
            raise ValueError("num_gaussians must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.init_strategy not in ("structured", "random"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class FitReport:
    """Fitting trace. Trajectories sample the state entering each logged
    iteration (every log_every steps and the last one); final_psnr_db is
    measured on the returned set after the last step. wall_time_s is the
    wall clock of the run that produced the set, shared by all images of a
    batch."""

    iterations_logged: List[int] = field(default_factory=list)
    loss_trajectory: List[float] = field(default_factory=list)
    psnr_trajectory: List[float] = field(default_factory=list)
    n_alive_trajectory: List[int] = field(default_factory=list)
    wall_time_s: float = 0.0
    final_psnr_db: float = 0.0


def _grid_shape(n: int, width: int, height: int) -> Tuple[int, int]:
    """Rows and columns of the init grid: r * c >= n, cells near square."""
    rows = int(round(math.sqrt(n * height / width)))
    rows = min(max(rows, 1), n)
    cols = -(-n // rows)
    return rows, cols


def structured_sigma(n: int, width: int, height: int) -> float:
    """Normalized standard deviation used by the structured init.

    The 1-sigma contour is the largest circle inscribed in a grid cell."""
    rows, cols = _grid_shape(n, width, height)
    return 0.5 * min(1.0 / cols, 1.0 / rows)


def init_structured(target: ImageBuffer, n: int) -> SplatSet:
    """Grid initialization: cell-centered splats colored by cell means.

    The grid has round(sqrt(n * H / W)) rows and ceil(n / rows) columns; the
    first n cells in row-major order receive one splat each, centered in the
    cell, isotropic, with sigma equal to the inscribed-circle radius.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rows, cols = _grid_shape(n, target.width, target.height)
    sigma = structured_sigma(n, target.width, target.height)
    raw = float(inv_softplus(sigma))

    data = target.data
    mu = np.empty((n, 2))
    color = np.empty((n, 3))
    chol = np.tile(np.array([raw, 0.0, raw]), (n, 1))
    for k in range(n):
        i, j = divmod(k, cols)
        y0 = min((i * target.height) // rows, target.height - 1)
        y1 = max(((i + 1) * target.height) // rows, y0 + 1)
        x0 = min((j * target.width) // cols, target.width - 1)
        x1 = max(((j + 1) * target.width) // cols, x0 + 1)
        mu[k, 0] = (j + 0.5) / cols
        mu[k, 1] = (i + 0.5) / rows
        color[k] = data[y0:y1, x0:x1].mean(axis=(0, 1), dtype=np.float64)
    return SplatSet(target.width, target.height, mu, chol, color)


def init_random(target: ImageBuffer, n: int, seed: int) -> SplatSet:
    """Random baseline: uniform positions and colors, seeded.

    Per-axis sigmas are drawn uniformly from [0.25, 1.0] times the sigma the
    structured init would use for the same n and resolution.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    mu = rng.random((n, 2))
    factors = rng.uniform(0.25, 1.0, size=(n, 2))
    color = rng.random((n, 3))
    sig = factors * structured_sigma(n, target.width, target.height)
    chol = np.column_stack([inv_softplus(sig[:, 0]), np.zeros(n), inv_softplus(sig[:, 1])])
    return SplatSet(target.width, target.height, mu, chol, color)


class _Adam:
    """Masked Adam over the three parameter groups of one set."""

    def __init__(self, s: SplatSet, lrs: Tuple[float, float, float]):
        self.groups = [(s.mu, np.zeros_like(s.mu), np.zeros_like(s.mu), lrs[0]),
                       (s.chol, np.zeros_like(s.chol), np.zeros_like(s.chol), lrs[1]),
                       (s.color, np.zeros_like(s.color), np.zeros_like(s.color), lrs[2])]

    def step(self, t: int, grads, rows: np.ndarray) -> None:
        c1 = 1.0 - ADAM_BETA1 ** t
        c2 = 1.0 - ADAM_BETA2 ** t
        for (p, m, v, lr), g in zip(self.groups, (grads.d_mu, grads.d_chol, grads.d_color)):
            gr = g[rows]
            m[rows] = ADAM_BETA1 * m[rows] + (1.0 - ADAM_BETA1) * gr
            v[rows] = ADAM_BETA2 * v[rows] + (1.0 - ADAM_BETA2) * gr * gr
            p[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + ADAM_EPS)


def _check_target(t: ImageBuffer) -> None:
    if float(t.data.min()) < 0.0 or float(t.data.max()) > 1.0:
        raise ValueError("target values must lie in [0, 1]")


def _fit_many(targets: Sequence[ImageBuffer], config: FitConfig,
              seeds: Sequence[int]) -> List[Tuple[SplatSet, FitReport]]:
    width, height = targets[0].width, targets[0].height
    for t in targets:
        if (t.width, t.height) != (width, height):
            raise MixedDimensionsError(
                f"batch mixes {width}x{height} with {t.width}x{t.height}")
        _check_target(t)

    t_start = time.perf_counter()
    sets: List[SplatSet] = []
    for t, seed in zip(targets, seeds):
        if config.init_strategy == "structured":
            sets.append(init_structured(t, config.num_gaussians))
        else:
            sets.append(init_random(t, config.num_gaussians, seed))

    lrs = (config.lr_mu if config.lr_mu is not None else config.learning_rate,
           config.lr_chol if config.lr_chol is not None else config.learning_rate,
           config.lr_color if config.lr_color is not None else config.learning_rate)
    opts = [_Adam(s, lrs) for s in sets]
    targets64 = np.stack([t.data.astype(np.float64) for t in targets])
    reports = [FitReport() for _ in targets]

    prune_at = 0
    if config.prune is not None:
        prune_at = max(1, int(math.floor(config.prune.schedule_fraction * config.iterations)))

    for it in range(1, config.iterations + 1):
        try:
            plan = _prepare_batch(sets, config.tile_size, CUTOFF_SIGMA)
            losses, _, grads, img = _batch_backward(
                plan, targets64, config.l1_weight, sets)
        except (NonFiniteError, SingularCovarianceError) as exc:
            # parameters blown past the representable range mid-fit are a
            # divergence, not a caller error
            raise NonFiniteLossError(it) from exc
        for k, lv in enumerate(losses):
            if not math.isfinite(lv):
                raise NonFiniteLossError(it, image_index=k)

        if it % config.log_every == 0 or it == config.iterations:
            for k, rep in enumerate(reports):
                buf = ImageBuffer(width, height, img[k].astype(np.float32))
                p = psnr(buf, targets[k])
                rep.iterations_logged.append(it)
                rep.loss_trajectory.append(losses[k])
                rep.psnr_trajectory.append(p)
                rep.n_alive_trajectory.append(sets[k].n_alive)
                logger.info("iter %d image %d loss=%.6g psnr=%.2f alive=%d",
                            it, k, losses[k], p, sets[k].n_alive)

        for k, s in enumerate(sets):
            rows = np.flatnonzero(s.alive_mask)
            opts[k].step(it, grads[k], rows)

        if prune_at and it == prune_at:
            for k, s in enumerate(sets):
                pruned, stats = prune(s, config.prune)
                sets[k] = pruned
                logger.info("pruned %d splats of image %d (ratio %.3f, threshold %.4g)",
                            stats.pruned_count, k, stats.pruning_ratio,
                            stats.threshold_used)

    wall = time.perf_counter() - t_start
    results: List[Tuple[SplatSet, FitReport]] = []
    for k, s in enumerate(sets):
        final = compact(s)
        rep = reports[k]
        rep.wall_time_s = wall
        rep.final_psnr_db = psnr(render_tiled(final, config.tile_size), targets[k])
        results.append((final, rep))
    return results


def fit(target: ImageBuffer, config: FitConfig) -> Tuple[SplatSet, FitReport]:
    """Fit one image; returns the compacted set and its report.

    Raises:
        NonFiniteLossError: the loss left the finite range mid-fit.
        ValueError: target values leave [0, 1].
    """
    return _fit_many([target], config, [config.seed])[0]


def fit_batch(targets: Sequence[ImageBuffer],
              config: FitConfig) -> List[Tuple[SplatSet, FitReport]]:
    """Fit several same-sized images in lockstep.

    Image k is initialized with seed config.seed + k and steps through the
    exact arithmetic of a solo `fit`, so results match sequential calls
    element-wise; the batch exists for throughput.

    Raises:
        MixedDimensionsError: targets disagree on width/height.
    """
    if not targets:
        return []
    return _fit_many(targets, config, [config.seed + k for k in range(len(targets))])
