"""Shared builders for randomized splat sets and images.

random_set's draw order (mu, sx, sy, off-diagonal, color) is part of the
frozen test surface: reference values in the oracle tests were measured
against exactly this consumption sequence, so keep it stable.
"""

import numpy as np

from splatc.model import ImageBuffer, SplatSet, inv_softplus


def random_set(rng, width, height, n, sigma_lo=0.01, sigma_hi=0.5,
               color_lo=-1.0, color_hi=1.0, mu_lo=-0.2, mu_hi=1.2):
    """Random valid set; means may sit off-screen, colors may be negative."""
    mu = rng.uniform(mu_lo, mu_hi, (n, 2))
    sx = rng.uniform(sigma_lo, sigma_hi, n)
    sy = rng.uniform(sigma_lo, sigma_hi, n)
    b = rng.uniform(-0.5, 0.5, n) * np.minimum(sx, sy)
    chol = np.stack([inv_softplus(sx), b, inv_softplus(sy)], axis=1)
    color = rng.uniform(color_lo, color_hi, (n, 3))
    return SplatSet(width=width, height=height, mu=mu, chol=chol,
                    color=color)


def random_image(rng, width, height):
    return ImageBuffer(width=width, height=height,
                       data=rng.random((height, width, 3),
                                       dtype=np.float32))


def single_splat_set(width, height, mu, sigma, color, off_diag=0.0):
    """One isotropic-by-default splat with direct sigma control."""
    chol = np.array([[inv_softplus(sigma), off_diag, inv_softplus(sigma)]])
    return SplatSet(width=width, height=height,
                    mu=np.array([mu], dtype=np.float64),
                    chol=chol, color=np.array([color], dtype=np.float64))
