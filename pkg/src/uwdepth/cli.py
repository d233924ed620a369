"""Command-line entry point binding the full pipeline.

Subcommands: synthesize, train, infer, eval, baseline-dcp. Exit codes:
0 success, 2 usage/data problems, 3 checkpoint/config problems, 4 numerical
failures. All randomness flows from --seed; reruns with identical arguments
produce identical numeric outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .config import ENV_CONFIG_VAR, load_config
from .data import (
    CorpusIndex,
    HazeParams,
    bilateral_filter_depth,
    load_depth_png,
    load_image,
    load_rgbd_sample,
    save_color_png,
    save_depth_png,
    synthesize_haze,
)
from .errors import DataError, UwdepthError
from .evaluation import EvalItem, evaluate_corpus, infer_depth
from .losses import LossWeights
from .models import GeneratorSpec, load_checkpoint, restore_networks
from .training import TrainConfig, fit
from . import baseline as dcp

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Immutable record of one run, written atomically when the run starts."""

    command: str
    config: dict
    code_version: str
    seed: int
    started_at: str
    artifacts: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2))
        os.replace(tmp, path)


def _write_completion(run_dir: Path, artifacts: dict) -> None:
    payload = {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"), "artifacts": artifacts}
    tmp = run_dir / "completed.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2))
    os.replace(tmp, run_dir / "completed.json")


def _require_dir(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} directory not found: {p}")
    return p


def _list_corpus_pairs(in_dir: Path) -> list[tuple[Path, Path]]:
    color_dir = _require_dir(in_dir / "color", "input color")
    depth_dir = _require_dir(in_dir / "depth", "input depth")
    pairs = []
    for cpath in sorted(color_dir.iterdir()):
        if cpath.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        dpath = depth_dir / (cpath.stem + ".png")
        if not dpath.is_file():
            raise DataError(f"missing depth file for {cpath.name}: {dpath}")
        pairs.append((cpath, dpath))
    if not pairs:
        raise DataError(f"no color/depth pairs found under {in_dir}")
    return pairs


def cmd_synthesize(args, cfg: dict) -> int:
    """Turn a clean RGB-D corpus into a hazy one (beta 0 leaves it unchanged)."""
    in_dir = _require_dir(args.input, "input")
    out_dir = Path(args.output)
    (out_dir / "color").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(parents=True, exist_ok=True)
    beta = cfg["haze.beta"] if args.beta is None else args.beta
    airlight = cfg["haze.airlight"] if args.airlight is None else tuple(args.airlight)
    params = HazeParams(beta=beta, airlight=airlight)
    target = (args.size, args.size) if args.size else None
    pairs = _list_corpus_pairs(in_dir)
    for cpath, dpath in pairs:
        sample = load_rgbd_sample(
            cpath, dpath, depth_scale=cfg["data.depth_scale"], color_range=(0.0, 1.0),
            target_size=target,
        )
        if args.filter_depth:
            d = sample.depth.data
            sigma_range = args.sigma_range
            if sigma_range is None:
                spread = float(d.max() - d.min())
                sigma_range = 0.1 * spread if spread > 0 else 0.1
            filtered = bilateral_filter_depth(sample.depth, args.sigma_spatial, sigma_range)
            sample.depth = filtered
        hazy = synthesize_haze(sample, params)
        save_color_png(out_dir / "color" / cpath.name, hazy.color)
        if args.filter_depth or target is not None:
            save_depth_png(
                out_dir / "depth" / dpath.name,
                hazy.depth.data[0, :, :, 0],
                depth_scale=cfg["data.depth_scale"],
            )
        else:
            shutil.copyfile(dpath, out_dir / "depth" / dpath.name)
    log.info("synthesized %d hazy images into %s (beta=%g)", len(pairs), out_dir, beta)
    return 0


def cmd_train(args, cfg: dict) -> int:
    """Train the cycle networks on an unpaired corpus root."""
    data_root = _require_dir(args.data, "training data")
    uw = CorpusIndex.scan_underwater(data_root)
    aerial = CorpusIndex.scan_aerial(data_root)
    weights = LossWeights(
        gamma_gan=cfg["loss.gamma_gan"] if args.gamma_gan is None else args.gamma_gan,
        gamma_ssim=cfg["loss.gamma_ssim"] if args.gamma_ssim is None else args.gamma_ssim,
        gamma_grad=cfg["loss.gamma_grad"] if args.gamma_grad is None else args.gamma_grad,
    )
    gen_spec = GeneratorSpec(
        num_blocks_per_side=args.gen_blocks,
        layers_per_block=args.gen_layers,
        growth=args.gen_growth,
        stem_filters=args.gen_stem,
    )
    config = TrainConfig(
        epochs=cfg["train.epochs"] if args.epochs is None else args.epochs,
        learning_rate=cfg["train.lr"] if args.lr is None else args.lr,
        batch_size=cfg["train.batch_size"] if args.batch_size is None else args.batch_size,
        patch_size=cfg["data.patch_size"] if args.patch_size is None else args.patch_size,
        weights=weights,
        seed=cfg["train.seed"] if args.seed is None else args.seed,
        pool_size=cfg["train.pool_size"] if args.pool_size is None else args.pool_size,
        checkpoint_interval=cfg["train.ckpt_every"] if args.ckpt_every is None else args.ckpt_every,
        d_max=cfg["data.d_max"],
        depth_scale=cfg["data.depth_scale"],
        image_size=args.image_size if args.image_size is not None else (cfg["data.image_size"] or None),
        generator_spec=gen_spec,
        disc_base_filters=args.disc_filters,
    )
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command="train",
        config={**cfg, "train_config": asdict(config)},
        code_version=__version__,
        seed=config.seed,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
        artifacts={"checkpoint": str(run_dir / "checkpoint.pt"), "loss_csv": str(run_dir / "loss_log.csv")},
    )
    manifest.write(run_dir / "manifest.json")
    ckpt = fit(uw, aerial, config, run_dir=run_dir, resume=args.resume)
    _write_completion(run_dir, {"checkpoint": str(ckpt)})
    log.info("training finished, checkpoint at %s", ckpt)
    return 0


def _load_generator(ckpt_path: str) -> tuple:
    payload = load_checkpoint(ckpt_path)
    nets, step = restore_networks(payload)
    if "G" not in nets:
        raise UwdepthError(f"checkpoint {ckpt_path} has no generator G")
    return nets["G"], step


def cmd_infer(args, cfg: dict) -> int:
    """Write a depth PNG (8-bit, for viewing) and raw values per input image."""
    g_net, _ = _load_generator(args.ckpt)
    in_path = Path(args.input)
    if in_path.is_dir():
        inputs = sorted(
            p for p in in_path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not inputs:
            raise DataError(f"no images found in {in_path}")
    elif in_path.is_file():
        inputs = [in_path]
    else:
        raise DataError(f"input path not found: {in_path}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_max = cfg["data.d_max"]
    for path in inputs:
        image = load_image(path)
        pred = infer_depth(g_net, image, d_max=d_max)
        norm = pred.normalized_2d()
        meters = pred.meters_2d()
        np.savez(out_dir / f"{path.stem}_depth.npz", normalized=norm, meters=meters)
        span = float(norm.max() - norm.min())
        viz = (norm - norm.min()) / span if span > 0 else np.zeros_like(norm)
        PILImage.fromarray((viz * 255).round().astype(np.uint8)).save(
            out_dir / f"{path.stem}_depth.png"
        )
    log.info("wrote depth for %d images to %s", len(inputs), out_dir)
    return 0


def _load_eval_set(data_dir: Path, depth_scale: float, pred_dir: Path | None) -> list[EvalItem]:
    pairs = _list_corpus_pairs(data_dir)
    items = []
    for cpath, dpath in pairs:
        gt, mask = load_depth_png(dpath, depth_scale=depth_scale)
        pred = None
        uw_image = None
        if pred_dir is not None:
            npy = pred_dir / f"{cpath.stem}.npy"
            png = pred_dir / f"{cpath.stem}.png"
            if npy.is_file():
                pred = np.load(npy)
            elif png.is_file():
                pred_t, _ = load_depth_png(png, depth_scale=depth_scale)
                pred = pred_t.data[0, :, :, 0]
            else:
                raise DataError(f"no prediction found for {cpath.stem} in {pred_dir}")
            if pred.shape != gt.data[0, :, :, 0].shape:
                raise DataError(
                    f"prediction {cpath.stem} shape {pred.shape} does not match GT "
                    f"{gt.data[0, :, :, 0].shape}"
                )
        else:
            uw_image = load_image(cpath)
        items.append(
            EvalItem(
                image_id=cpath.stem,
                uw_image=uw_image,
                gt_depth=gt.data[0, :, :, 0],
                mask=mask[0],
                pred_depth=pred,
            )
        )
    return items


def cmd_eval(args, cfg: dict) -> int:
    """Evaluate a checkpoint (or precomputed predictions) against GT depth."""
    if args.ckpt is None and args.pred_dir is None:
        raise UwdepthError("eval needs --ckpt or --pred-dir")
    data_dir = _require_dir(args.data, "evaluation data")
    pred_dir = _require_dir(args.pred_dir, "prediction") if args.pred_dir else None
    items = _load_eval_set(data_dir, cfg["data.depth_scale"], pred_dir)
    if pred_dir is not None:
        report = evaluate_corpus(None, items, d_max=cfg["data.d_max"])
    else:
        g_net, _ = _load_generator(args.ckpt)
        report = evaluate_corpus(g_net, items, d_max=cfg["data.d_max"])
        if args.save_depth:
            viz_dir = Path(args.save_depth)
            viz_dir.mkdir(parents=True, exist_ok=True)
            for item in items:
                norm = infer_depth(g_net, item.uw_image, d_max=cfg["data.d_max"]).normalized_2d()
                span = float(norm.max() - norm.min())
                viz = (norm - norm.min()) / span if span > 0 else np.zeros_like(norm)
                PILImage.fromarray((viz * 255).round().astype(np.uint8)).save(
                    viz_dir / f"{item.image_id}.png"
                )
    result = {"model": report.to_dict()}
    if args.baseline == "dcp":
        base_items = []
        for item, (cpath, _) in zip(items, _list_corpus_pairs(data_dir)):
            color = load_image(cpath, value_range=(0.0, 1.0))
            depth = dcp.dcp_depth(color)
            base_items.append(
                EvalItem(
                    image_id=item.image_id,
                    uw_image=None,
                    gt_depth=item.gt_depth,
                    mask=item.mask,
                    pred_depth=depth,
                )
            )
        result["baseline_dcp"] = evaluate_corpus(None, base_items).to_dict()
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + ".tmp")
    tmp.write_text(json.dumps(result, indent=2))
    os.replace(tmp, out_path)
    log.info(
        "eval: mean rho %.4f, mean SI-MSE %.4f over %d images",
        report.mean_rho,
        report.mean_si_mse,
        len(report.per_image),
    )
    return 0


def cmd_baseline_dcp(args, cfg: dict) -> int:
    """Run the DCP depth baseline over a directory of images."""
    in_dir = _require_dir(args.input, "input")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not images:
        raise DataError(f"no images found in {in_dir}")
    for path in images:
        color = load_image(path, value_range=(0.0, 1.0))
        depth = dcp.dcp_depth(color, omega=args.omega, patch=args.patch, t_min=args.t_min)
        np.save(out_dir / f"{path.stem}.npy", depth.astype(np.float32))
        span = depth.max() - depth.min()
        viz = (depth - depth.min()) / span if span > 0 else np.zeros_like(depth)
        PILImage.fromarray((viz * 65535).round().astype(np.uint16)).save(
            out_dir / f"{path.stem}.png"
        )
    log.info("wrote DCP depth for %d images to %s", len(images), out_dir)
    return 0


def _airlight_triple(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"airlight needs 1 or 3 values, got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwdepth",
        description="Unsupervised single-image underwater depth estimation pipeline",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"config file (default ${ENV_CONFIG_VAR})")
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("synthesize", help="turn a clean RGB-D corpus into a hazy one")
    p.add_argument("--in", dest="input", required=True, help="dir with color/ and depth/")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--beta", type=float, default=None, help="scattering coefficient (0 = none)")
    p.add_argument("--airlight", type=_airlight_triple, default=None, help="r,g,b in [0,1]")
    p.add_argument("--size", type=int, default=None, help="square resize before synthesis")
    p.add_argument("--filter-depth", action="store_true", help="bilateral-filter depth first")
    p.add_argument("--sigma-spatial", type=float, default=5.0)
    p.add_argument("--sigma-range", type=float, default=None, help="default 0.1 * depth spread")
    p.set_defaults(func=cmd_synthesize)

    p = add_parser("train", help="train generators and discriminators")
    p.add_argument("--data", required=True, help="root with underwater/ and aerial/{color,depth}")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None, help="0 keeps native size")
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--ckpt-every", type=int, default=None)
    p.add_argument("--gamma-gan", type=float, default=None)
    p.add_argument("--gamma-ssim", type=float, default=None)
    p.add_argument("--gamma-grad", type=float, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--gen-blocks", type=int, default=5)
    p.add_argument("--gen-layers", type=int, default=5)
    p.add_argument("--gen-growth", type=int, default=16)
    p.add_argument("--gen-stem", type=int, default=48)
    p.add_argument("--disc-filters", type=int, default=64)
    p.set_defaults(func=cmd_train)

    p = add_parser("infer", help="predict depth for underwater images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = add_parser("eval", help="score predictions against ground-truth depth")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--pred-dir", default=None, help="precomputed depth (.npy or 16-bit .png)")
    p.add_argument("--data", required=True, help="dir with color/ and depth/ (GT)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--baseline", choices=["dcp"], default=None, help="add a baseline column")
    p.add_argument(
        "--save-depth", default=None, help="also write 8-bit depth PNGs (visualization only)"
    )
    p.set_defaults(func=cmd_eval)

    p = add_parser("baseline-dcp", help="dark-channel-prior depth baseline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--omega", type=float, default=dcp.DEFAULT_OMEGA)
    p.add_argument("--patch", type=int, default=dcp.DEFAULT_PATCH)
    p.add_argument("--t-min", type=float, default=dcp.DEFAULT_T_MIN)
    p.set_defaults(func=cmd_baseline_dcp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg["train.seed"]
        return args.func(args, cfg)
    except UwdepthError as exc:
        print(f"uwdepth {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"uwdepth {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
