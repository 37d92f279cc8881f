"""Analytic loss and gradients for the splat parameters.

The objective is

    loss = mean((render(s) - target)^2)            over all H*W*3 entries
         + l1_weight * sum_i |color_i|_1 / n_alive  over alive splats only

with the render truncated exactly like the tiled forward pass, so the
gradients below are the true derivatives of the function being evaluated,
including its cutoff. Writing u = Sigma^{-1} (p - mu) and
w = exp(-0.5 (p - mu)^T u), the per-pixel chain is

    dloss/dcolor = g * w
    dloss/dmu    = (g . color) * w * u
    dloss/dSigma = 0.5 * (g . color) * w * u u^T

with g = 2 * (render - target) / (H*W*3), mapped onto the raw Cholesky
parameters through Sigma = L L^T and the softplus on the diagonal. The L1
term contributes l1_weight / n_alive * sign(color), with sign(0) = 0.

Everything here runs in float64; the float32 rounding of public image
buffers never enters the loss, so finite differences of `loss` agree with
`backward` to first order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import _kernels
from .model import DimensionMismatchError, ImageBuffer, SplatSet
from .renderer import (CUTOFF_SIGMA, DEFAULT_TILE_SIZE, _BatchPlan,
                       _forward_f64, _prepare_batch)


@dataclass
class GradientSet:
    """Gradients aligned row-for-row with a SplatSet's parameter arrays."""

    d_mu: np.ndarray
    d_chol: np.ndarray
    d_color: np.ndarray


def _check_dims(s: SplatSet, target: ImageBuffer) -> None:
    if (target.width, target.height) != (s.width, s.height):
        raise DimensionMismatchError(
            f"target is {target.width}x{target.height}, set is {s.width}x{s.height}")


def _batch_losses(plan: _BatchPlan, targets64: np.ndarray,
                  l1_weight: float, alive_counts: Sequence[int],
                  color_blocks: Sequence[np.ndarray],
                  alive_blocks: Sequence[np.ndarray]):
    """Forward pass plus per-image loss terms; returns (img, resid, losses, mses)."""
    img = _forward_f64(plan)
    resid = img - targets64
    losses: List[float] = []
    mses: List[float] = []
    for k in range(plan.n_images):
        mse = float(np.mean(resid[k] * resid[k]))
        l1 = 0.0
        if l1_weight != 0.0 and alive_counts[k] > 0:
            l1 = l1_weight * float(np.sum(np.abs(color_blocks[k][alive_blocks[k]]))) / alive_counts[k]
        mses.append(mse)
        losses.append(mse + l1)
    return img, resid, losses, mses


def _batch_backward(plan: _BatchPlan, targets64: np.ndarray, l1_weight: float,
                    sets: Sequence[SplatSet]):
    """Losses and gradients for a whole batch in one kernel invocation.

    Returns (losses, mses, grads, img) with grads as a list of GradientSet,
    one per image, rows aligned with each set, and img the float64 forward
    render the losses were computed from.
    """
    alive_counts = [s.n_alive for s in sets]
    colors = [s.color for s in sets]
    alives = [s.alive_mask for s in sets]
    img, resid, losses, mses = _batch_losses(
        plan, targets64, l1_weight, alive_counts, colors, alives)

    n_total = plan.mux.shape[0]
    d_mu = np.zeros((n_total, 2))
    d_chol = np.zeros((n_total, 3))
    d_color = np.zeros((n_total, 3))
    scale = 2.0 / (plan.height * plan.width * 3)
    gres = resid * scale
    _kernels.backward(plan.px, plan.py, gres, plan.gauss_img,
                      plan.mux, plan.muy, plan.i11, plan.i12, plan.i22,
                      plan.col, plan.gx0, plan.gx1, plan.gy0, plan.gy1,
                      plan.a, plan.b, plan.c, plan.sig11, plan.sig22,
                      plan.alive, d_mu, d_chol, d_color)

    grads: List[GradientSet] = []
    off = plan.row_offsets
    for k, s in enumerate(sets):
        gm = d_mu[off[k]:off[k + 1]].copy()
        gch = d_chol[off[k]:off[k + 1]].copy()
        gc = d_color[off[k]:off[k + 1]].copy()
        if l1_weight != 0.0 and alive_counts[k] > 0:
            gc[s.alive_mask] += (l1_weight / alive_counts[k]) * np.sign(s.color[s.alive_mask])
        grads.append(GradientSet(d_mu=gm, d_chol=gch, d_color=gc))
    return losses, mses, grads, img


def loss(s: SplatSet, target: ImageBuffer, l1_weight: float = 0.0,
         tile_size: int = DEFAULT_TILE_SIZE) -> float:
    """Evaluate the fitting objective for one set.

    Raises:
        DimensionMismatchError: target resolution differs from the set's.
    """
    _check_dims(s, target)
    plan = _prepare_batch([s], tile_size, CUTOFF_SIGMA)
    targets64 = target.data.astype(np.float64)[None]
    _, _, losses, _ = _batch_losses(plan, targets64, l1_weight,
                                    [s.n_alive], [s.color], [s.alive_mask])
    return losses[0]


def backward(s: SplatSet, target: ImageBuffer, l1_weight: float = 0.0,
             tile_size: int = DEFAULT_TILE_SIZE) -> Tuple[float, GradientSet]:
    """Loss plus analytic gradients for one set.

    The returned loss is computed from the same forward pass the gradients
    integrate over, so it matches `loss` bit-for-bit. Dead splats receive
    exactly zero gradient.
    """
    _check_dims(s, target)
    plan = _prepare_batch([s], tile_size, CUTOFF_SIGMA)
    targets64 = target.data.astype(np.float64)[None]
    losses, _, grads, _ = _batch_backward(plan, targets64, l1_weight, [s])
    return losses[0], grads[0]
