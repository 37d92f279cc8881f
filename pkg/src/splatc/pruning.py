"""Luminance-based splat pruning.

Splats whose color carries almost no luminance contribute almost nothing to
the reconstruction; dropping them buys a smaller payload for a bounded PSNR
cost. Pruning only flips the alive mask so parameter rows and optimizer
state stay aligned mid-fit; `model.compact` removes dead rows afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import SplatSet


@dataclass
class PruneConfig:
    """Pruning policy.

    Attributes:
        luminance_threshold: splats with |luminance| strictly below this are
            candidates; 0.0 prunes nothing.
        max_prune_fraction: safety cap; the total dead fraction of the set
            never exceeds floor(max_prune_fraction * n). When the cap binds,
            the lowest-luminance candidates are pruned first, ties broken by
            lower index. The cap counts cumulatively across calls, which
            keeps pruning idempotent.
        schedule_fraction: when used inside a fit, the single pruning pass
            runs at iteration floor(schedule_fraction * iterations).
        target_ratio: when set, overrides luminance_threshold with a value
            found by bisection so that roughly this fraction of the alive
            splats is pruned.
    """

    luminance_threshold: float = 0.0
    max_prune_fraction: float = 0.95
    schedule_fraction: float = 0.7
    target_ratio: Optional[float] = None


@dataclass
class PruneStats:
    pruned_count: int
    pruning_ratio: float
    threshold_used: float


def luminance(colors: np.ndarray) -> np.ndarray:
    """Magnitude of the Rec. 601 luma of each color row.

    The absolute value makes negative colors count by contribution size, not
    sign.
    """
    colors = np.asarray(colors, dtype=np.float64)
    return np.abs(0.299 * colors[..., 0] + 0.587 * colors[..., 1] + 0.114 * colors[..., 2])


def threshold_for_ratio(s: SplatSet, ratio: float, steps: int = 64) -> float:
    """Bisect a luminance threshold so pruning hits `ratio` of alive splats.

    With distinct luminances and n_alive >= 100 the achieved ratio lands
    within 1/n_alive of the request; duplicated luminances can force a
    larger jump. Returns the threshold only; apply it through `prune`.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    lum = luminance(s.color[s.alive_mask])
    n_alive = lum.shape[0]
    if n_alive == 0 or ratio == 0.0:
        return 0.0
    lo = 0.0
    hi = float(lum.max()) + 1.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        frac = np.count_nonzero(lum < mid) / n_alive
        if frac < ratio:
            lo = mid
        else:
            hi = mid
    frac_lo = np.count_nonzero(lum < lo) / n_alive
    frac_hi = np.count_nonzero(lum < hi) / n_alive
    return lo if abs(frac_lo - ratio) < abs(frac_hi - ratio) else hi


def prune(s: SplatSet, config: PruneConfig) -> Tuple[SplatSet, PruneStats]:
    """Mask out low-luminance splats.

    Candidates are alive splats with luminance strictly below the threshold
    (resolved by bisection when config.target_ratio is set). The returned
    set shares parameter arrays with the input but carries a fresh mask;
    dead splats render nothing and receive zero gradient.
    """
    n_alive_before = s.n_alive
    if config.target_ratio is not None:
        threshold = threshold_for_ratio(s, config.target_ratio)
    else:
        threshold = float(config.luminance_threshold)

    lum = luminance(s.color)
    candidates = np.flatnonzero(s.alive_mask & (lum < threshold))
    budget = int(np.floor(config.max_prune_fraction * s.n)) - (s.n - n_alive_before)
    budget = max(budget, 0)
    if candidates.size > budget:
        # stable sort: equal luminances stay in ascending index order
        order = np.argsort(lum[candidates], kind="stable")
        candidates = candidates[order[:budget]]

    mask = s.alive_mask.copy()
    mask[candidates] = False
    pruned = SplatSet(s.width, s.height, s.mu, s.chol, s.color, mask)
    ratio = candidates.size / n_alive_before if n_alive_before else 0.0
    return pruned, PruneStats(pruned_count=int(candidates.size),
                              pruning_ratio=float(ratio),
                              threshold_used=threshold)
