"""splatc: images as sparse mixtures of 2D anisotropic Gaussians.

Fit an image with gradient descent over splat positions, Cholesky
covariance factors and colors, prune low-luminance splats, and store
the survivors as a compact half-precision .gsf file.
"""

from .codec import (GsfError, GsfFile, decode_gsf, decode_to_image,
                    encode_gsf, parse_gsf)
from .corpus import (CorpusManifest, ManifestEntry, blobs_splats,
                     default_manifest, generate_synthetic, resolve)
from .fitter import (FitConfig, FitReport, fit, fit_batch, init_random,
                     init_structured)
from .gradients import GradientSet, backward, loss
from .imgio import load_image, save_image
from .metrics import QualityReport, compression_ratio, mse, psnr, quality_report
from .model import (Gaussian2D, ImageBuffer, SplatSet, compact,
                    covariance_of, validate)
from .pruning import PruneConfig, PruneStats, luminance, prune, threshold_for_ratio
from .renderer import (CUTOFF_SIGMA, DEFAULT_TILE_SIZE, TileGrid, build_tiles,
                       render_batch, render_naive, render_tiled)

__version__ = "0.1.0"

__all__ = [
    "CUTOFF_SIGMA",
    "CorpusManifest",
    "DEFAULT_TILE_SIZE",
    "FitConfig",
    "FitReport",
    "Gaussian2D",
    "GradientSet",
    "GsfError",
    "GsfFile",
    "ImageBuffer",
    "ManifestEntry",
    "PruneConfig",
    "PruneStats",
    "QualityReport",
    "SplatSet",
    "TileGrid",
    "backward",
    "blobs_splats",
    "build_tiles",
    "compact",
    "compression_ratio",
    "covariance_of",
    "decode_gsf",
    "decode_to_image",
    "default_manifest",
    "encode_gsf",
    "fit",
    "fit_batch",
    "generate_synthetic",
    "init_random",
    "init_structured",
    "load_image",
    "loss",
    "luminance",
    "mse",
    "parse_gsf",
    "prune",
    "psnr",
    "quality_report",
    "render_batch",
    "render_naive",
    "render_tiled",
    "resolve",
    "save_image",
    "threshold_for_ratio",
    "validate",
    "__version__",
]
