"""Command-line surface: encode, decode, info, sweep, bench.

Exit codes follow one convention across commands: 1 for unusable input
(unreadable image, malformed GSF, bad config), 2 for fit divergence,
3 for output write failure.  Every command accepts --json and emits a
single machine-readable object on stdout; human summaries go to stdout
only in non-JSON mode, diagnostics always go to stderr.

Settings resolve as flags > --config file (key=value lines) > defaults,
and --workers falls back to the SPLATC_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numba
import numpy as np

from .codec import GsfError, decode_gsf, encode_gsf, parse_gsf
from .corpus import generate_synthetic
from .fitter import FitConfig, NonFiniteLossError, fit, fit_batch
from .imgio import ImageIOError, atomic_write_bytes, load_image, save_image
from .metrics import compression_ratio, psnr, quality_report
from .model import ImageBuffer
from .pruning import PruneConfig, prune
from .renderer import render_tiled

logger = logging.getLogger(__name__)

MIN_INPUT_SIDE = 8

SWEEP_COLUMNS = ["image", "n_gaussians", "init", "prune_ratio", "l1_weight",
                 "final_psnr_db", "compression_ratio", "wall_time_s",
                 "alive_after_prune", "psnr_drop_db"]

_FIT_DEFAULTS: Dict[str, object] = {
    "gaussians": 400, "iters": 3000, "lr": 1e-2, "l1": 0.0,
    "init": "structured", "prune_ratio": 0.0, "prune_threshold": 0.0,
    "seed": 0, "tile": 16,
}

_CONFIG_TYPES = {
    "gaussians": int, "iters": int, "lr": float, "l1": float,
    "init": str, "prune_ratio": float, "prune_threshold": float,
    "seed": int, "tile": int,
}


def _jsonable(value):
    """Recursively convert report values to strict JSON (inf -> "inf")."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, np.integer):
        return int(value)
    return value


def _print_json(obj) -> None:
    print(json.dumps(_jsonable(obj), sort_keys=True))


def _fmt_float(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return "%.6f" % v


def _resolve_workers(flag: Optional[int]) -> int:
    limit = numba.config.NUMBA_NUM_THREADS
    if flag is None:
        env = os.environ.get("SPLATC_WORKERS")
        if env is not None:
            try:
                flag = int(env)
            except ValueError:
                logger.warning("ignoring non-integer SPLATC_WORKERS=%r", env)
    if flag is None:
        return limit
    return max(1, min(flag, limit))


def _parse_config_file(path: str) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("%s line %d: expected key=value" % (path, lineno))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ValueError("%s line %d: unknown key %r" % (path, lineno, key))
        try:
            out[key] = _CONFIG_TYPES[key](value)
        except ValueError as exc:
            raise ValueError("%s line %d: %s" % (path, lineno, exc)) from exc
    return out


def _effective_fit_settings(args) -> Dict[str, object]:
    cfg = dict(_FIT_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for key in _FIT_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["init"] not in ("structured", "random"):
        raise ValueError("init must be structured or random, got %r"
                         % cfg["init"])
    return cfg


def _fit_config(cfg: Dict[str, object], workers: int) -> FitConfig:
    prune_cfg = None
    if cfg["prune_ratio"] > 0.0:
        prune_cfg = PruneConfig(target_ratio=float(cfg["prune_ratio"]))
    elif cfg["prune_threshold"] > 0.0:
        prune_cfg = PruneConfig(
            luminance_threshold=float(cfg["prune_threshold"]))
    del workers  # applied process-wide before fitting starts
    return FitConfig(
        num_gaussians=int(cfg["gaussians"]), iterations=int(cfg["iters"]),
        learning_rate=float(cfg["lr"]), l1_weight=float(cfg["l1"]),
        init_strategy=str(cfg["init"]), prune=prune_cfg,
        seed=int(cfg["seed"]), tile_size=int(cfg["tile"]))


def _load_input_image(path: str) -> ImageBuffer:
    img = load_image(path)
    if img.width < MIN_INPUT_SIDE or img.height < MIN_INPUT_SIDE:
        raise ImageIOError("%s: %dx%d is below the %dx%d minimum"
                           % (path, img.width, img.height,
                              MIN_INPUT_SIDE, MIN_INPUT_SIDE))
    return img


def cmd_encode(args) -> int:
    try:
        settings = _effective_fit_settings(args)
    except (OSError, ValueError) as exc:
        print("encode failed: %s" % exc, file=sys.stderr)
        return 1
    workers = _resolve_workers(args.workers)
    numba.set_num_threads(workers)
    try:
        target = _load_input_image(args.input)
    except (OSError, ImageIOError) as exc:
        print("encode failed: %s" % exc, file=sys.stderr)
        return 1

    try:
        config = _fit_config(settings, workers)
    except ValueError as exc:
        print("encode failed: %s" % exc, file=sys.stderr)
        return 1
    try:
        splats, fit_report = fit(target, config)
    except NonFiniteLossError as exc:
        print("encode failed: %s" % exc, file=sys.stderr)
        return 2

    data = encode_gsf(splats)
    out_path = args.output or str(Path(args.input).with_suffix(".gsf"))
    try:
        atomic_write_bytes(out_path, data)
    except OSError as exc:
        print("encode failed writing %s: %s" % (out_path, exc),
              file=sys.stderr)
        return 3

    # Report fidelity of the file on disk, i.e. after float16 rounding.
    decoded = render_tiled(decode_gsf(data), config.tile_size)
    report = quality_report(decoded, target, splats.n)
    if args.json:
        _print_json({
            "command": "encode", "input": args.input, "output": out_path,
            "width": target.width, "height": target.height,
            "config": dict(settings, workers=workers),
            "report": dataclasses.asdict(report),
            "wall_time_s": fit_report.wall_time_s,
        })
    else:
        print("%s -> %s: %d splats, %s dB, %.2fx, %d bytes, %.1fs"
              % (args.input, out_path, splats.n,
                 "inf" if math.isinf(report.psnr_db)
                 else "%.2f" % report.psnr_db,
                 report.compression_ratio, len(data),
                 fit_report.wall_time_s))
    return 0


def cmd_decode(args) -> int:
    workers = _resolve_workers(args.workers)
    numba.set_num_threads(workers)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        print("decode failed: %s" % exc, file=sys.stderr)
        return 1
    try:
        splats = decode_gsf(data)
    except GsfError as exc:
        print("decode failed: %s: %s" % (type(exc).__name__, exc),
              file=sys.stderr)
        return 1
    img = render_tiled(splats, args.tile if args.tile else 16)
    clamped = ImageBuffer(width=img.width, height=img.height,
                          data=np.clip(img.data, 0.0, 1.0))
    out_path = args.output or str(Path(args.input).with_suffix(".png"))
    try:
        save_image(out_path, clamped)
    except (OSError, ImageIOError) as exc:
        print("decode failed writing %s: %s" % (out_path, exc),
              file=sys.stderr)
        return 3
    if args.json:
        _print_json({
            "command": "decode", "input": args.input, "output": out_path,
            "width": splats.width, "height": splats.height,
            "count": splats.n, "config": {"workers": workers,
                                          "tile": args.tile or 16},
        })
    else:
        print("%s -> %s: %dx%d from %d splats"
              % (args.input, out_path, splats.width, splats.height,
                 splats.n))
    return 0


def cmd_info(args) -> int:
    try:
        data = Path(args.input).read_bytes()
        f = parse_gsf(data)
    except OSError as exc:
        print("info failed: %s" % exc, file=sys.stderr)
        return 1
    except GsfError as exc:
        print("info failed: %s: %s" % (type(exc).__name__, exc),
              file=sys.stderr)
        return 1
    ratio = compression_ratio(f.width, f.height, max(f.count, 1))
    if args.json:
        _print_json({
            "command": "info", "input": args.input,
            "width": f.width, "height": f.height, "count": f.count,
            "version": f.version, "flags": f.flags,
            "bytes_payload": f.payload_bytes, "bytes_total": f.total_bytes,
            "compression_ratio": ratio,
        })
    else:
        print("width %d" % f.width)
        print("height %d" % f.height)
        print("count %d" % f.count)
        print("version %d" % f.version)
        print("flags 0x%04x" % f.flags)
        print("payload_bytes %d" % f.payload_bytes)
        print("total_bytes %d" % f.total_bytes)
        print("ratio %.2f" % ratio)
    return 0


def _csv_text(columns: List[str], rows: List[Dict[str, object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([
            _fmt_float(row[c]) if isinstance(row[c], float) else row[c]
            for c in columns])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    try:
        settings = _effective_fit_settings(args)
    except (OSError, ValueError) as exc:
        print("sweep failed: %s" % exc, file=sys.stderr)
        return 1
    workers = _resolve_workers(args.workers)
    numba.set_num_threads(workers)

    targets = []
    for path in args.images:
        try:
            targets.append((Path(path).name, _load_input_image(path)))
        except (OSError, ImageIOError) as exc:
            print("sweep failed: %s" % exc, file=sys.stderr)
            return 1

    counts = args.counts
    inits = args.inits
    ratios = args.prune_ratios
    if not counts or min(counts) < 1:
        print("sweep failed: splat counts must be >= 1", file=sys.stderr)
        return 1
    bad = [i for i in inits if i not in ("structured", "random")]
    if bad:
        print("sweep failed: unknown init %r" % bad[0], file=sys.stderr)
        return 1
    rows: List[Dict[str, object]] = []
    for name, target in targets:
        for count in counts:
            for init in inits:
                cfg = FitConfig(
                    num_gaussians=count, iterations=int(settings["iters"]),
                    learning_rate=float(settings["lr"]),
                    l1_weight=float(settings["l1"]), init_strategy=init,
                    seed=int(settings["seed"]), tile_size=int(settings["tile"]))
                t0 = time.perf_counter()
                try:
                    splats, report = fit(target, cfg)
                except NonFiniteLossError as exc:
                    print("sweep failed on %s n=%d init=%s: %s"
                          % (name, count, init, exc), file=sys.stderr)
                    return 2
                fit_wall = time.perf_counter() - t0
                base_psnr = report.final_psnr_db
                for ratio in ratios:
                    if ratio <= 0.0:
                        rows.append({
                            "image": name, "n_gaussians": count,
                            "init": init, "prune_ratio": 0.0,
                            "l1_weight": float(settings["l1"]),
                            "final_psnr_db": base_psnr,
                            "compression_ratio": compression_ratio(
                                target.width, target.height, splats.n),
                            "wall_time_s": fit_wall,
                            "alive_after_prune": splats.n,
                            "psnr_drop_db": 0.0,
                        })
                        continue
                    pruned, stats = prune(
                        splats, PruneConfig(target_ratio=float(ratio)))
                    pruned_psnr = psnr(render_tiled(
                        pruned, int(settings["tile"])), target)
                    rows.append({
                        "image": name, "n_gaussians": count, "init": init,
                        "prune_ratio": stats.pruning_ratio,
                        "l1_weight": float(settings["l1"]),
                        "final_psnr_db": pruned_psnr,
                        "compression_ratio": compression_ratio(
                            target.width, target.height,
                            max(pruned.n_alive, 1)),
                        "wall_time_s": fit_wall,
                        "alive_after_prune": pruned.n_alive,
                        "psnr_drop_db": base_psnr - pruned_psnr,
                    })
                logger.info("sweep %s n=%d init=%s: %.2f dB",
                            name, count, init, base_psnr)

    text = _csv_text(SWEEP_COLUMNS, rows)
    try:
        atomic_write_bytes(args.output, text.encode())
    except OSError as exc:
        print("sweep failed writing %s: %s" % (args.output, exc),
              file=sys.stderr)
        return 3
    if args.json:
        _print_json({
            "command": "sweep", "output": args.output,
            "config": dict(settings, workers=workers, counts=counts,
                           inits=inits, prune_ratios=ratios),
            "rows": rows,
        })
    else:
        print("wrote %d rows to %s" % (len(rows), args.output))
    return 0


def cmd_bench(args) -> int:
    workers = _resolve_workers(args.workers)
    numba.set_num_threads(workers)
    sizes = sorted(set(args.batch_sizes))
    if sizes[0] < 1:
        print("bench failed: batch sizes must be >= 1", file=sys.stderr)
        return 1
    if 1 not in sizes:
        sizes.insert(0, 1)
    total = max(sizes)

    rng = np.random.default_rng(args.seed)
    side = args.size
    targets = [ImageBuffer(width=side, height=side,
                           data=rng.random((side, side, 3),
                                           dtype=np.float32))
               for _ in range(total)]
    config = FitConfig(num_gaussians=args.gaussians,
                       iterations=args.iters, seed=args.seed)
    # Warm the jit kernels outside the timed region.
    warm = generate_synthetic("gradient", 0, 16, 16)
    fit(warm, FitConfig(num_gaussians=4, iterations=2))

    rows = []
    base_rate = None
    for batch in sizes:
        t0 = time.perf_counter()
        for start in range(0, total, batch):
            fit_batch(targets[start:start + batch], config)
        elapsed = time.perf_counter() - t0
        rate = total / elapsed
        if base_rate is None:
            base_rate = rate
        rows.append({"batch_size": batch, "images_per_s": rate,
                     "speedup": rate / base_rate})

    if args.json:
        _print_json({
            "command": "bench",
            "config": {"batch_sizes": sizes, "gaussians": args.gaussians,
                       "iters": args.iters, "size": side,
                       "seed": args.seed, "workers": workers,
                       "total_images": total},
            "rows": rows,
        })
    elif args.csv:
        text = _csv_text(["batch_size", "images_per_s", "speedup"], rows)
        try:
            atomic_write_bytes(args.csv, text.encode())
        except OSError as exc:
            print("bench failed writing %s: %s" % (args.csv, exc),
                  file=sys.stderr)
            return 3
        print("wrote %d rows to %s" % (len(rows), args.csv))
    else:
        print("batch  images/s  speedup")
        for row in rows:
            print("%5d  %8.3f  %7.2fx" % (row["batch_size"],
                                          row["images_per_s"],
                                          row["speedup"]))
    return 0


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-n", "--gaussians", type=int, default=None,
                   help="splat count (default 400)")
    p.add_argument("--iters", type=int, default=None,
                   help="optimization iterations (default 3000)")
    p.add_argument("--lr", type=float, default=None,
                   help="base learning rate (default 0.01)")
    p.add_argument("--l1", type=float, default=None,
                   help="L1 color penalty weight (default 0)")
    p.add_argument("--init", choices=["structured", "random"], default=None,
                   help="initialization strategy (default structured)")
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default 0)")
    p.add_argument("--tile", type=int, default=None,
                   help="render tile size (default 16)")
    p.add_argument("--config", default=None,
                   help="key=value settings file; flags override it")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=None,
                   help="render worker threads (default: SPLATC_WORKERS "
                        "or machine parallelism)")
    p.add_argument("--json", action="store_true",
                   help="emit a machine-readable report on stdout")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatc",
        description="Fit images as 2D Gaussian splat mixtures and store "
                    "them as compact GSF files.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log fitting progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="fit an image and write a .gsf file")
    p.add_argument("input", help="source image (.png or .ppm, 8-bit RGB)")
    p.add_argument("-o", "--output", default=None,
                   help="output .gsf path (default: input with .gsf suffix)")
    _add_fit_flags(p)
    p.add_argument("--prune-ratio", type=float, default=None,
                   help="prune this fraction of splats during fitting")
    p.add_argument("--prune-threshold", type=float, default=None,
                   help="prune splats under this luminance during fitting")
    _add_common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="render a .gsf file back to an image")
    p.add_argument("input", help="source .gsf file")
    p.add_argument("-o", "--output", default=None,
                   help="output image path (default: input with .png suffix)")
    p.add_argument("--tile", type=int, default=None,
                   help="render tile size (default 16)")
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("info", help="print header fields of a .gsf file")
    p.add_argument("input", help=".gsf file to inspect")
    _add_common(p)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("sweep", help="fit a grid of configurations to CSV")
    p.add_argument("images", nargs="+", help="corpus image paths")
    p.add_argument("-o", "--output", required=True, help="output CSV path")
    p.add_argument("--counts", type=_int_list,
                   default=[400, 784, 1600, 3136, 4900],
                   help="comma-separated splat counts")
    p.add_argument("--inits", type=_str_list,
                   default=["structured", "random"],
                   help="comma-separated init strategies")
    p.add_argument("--prune-ratios", type=_float_list,
                   default=[0.0, 0.2, 0.5, 0.8],
                   help="comma-separated post-fit prune ratios (0 = none)")
    _add_fit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="measure batched fitting throughput")
    p.add_argument("--batch-sizes", type=_int_list, default=[1, 2, 4, 8],
                   help="comma-separated batch sizes (default 1,2,4,8)")
    p.add_argument("-n", "--gaussians", type=int, default=256)
    p.add_argument("--iters", type=int, default=40)
    p.add_argument("--size", type=int, default=64,
                   help="synthetic target side length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="write the table to this path")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t]


def _float_list(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t]


def _str_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
