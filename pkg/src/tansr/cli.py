"""``tansr`` command line: train, infer, eval, params, gradcheck.

Exit codes: 0 ok, 1 gradcheck failure, 2 data / missing file, 3 config,
4 checkpoint format or compatibility.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint, model_from_checkpoint, read_checkpoint
from .config import RunConfig
from .errors import CompatError, ConfigError, DataError, FormatError, ShapeError
from .evaluate import directory_predictor, evaluate_directory, list_pngs, model_predictor, to_csv
from .imaging import (ImagePlane, load_y, read_png, resize_array, rgb_to_ycbcr, self_ensemble,
                      write_png, ycbcr_to_rgb)
from .model import TanModel, param_breakdown
from .train import PatchSampler, Trainer

log = logging.getLogger("tansr")

DATA_ENV = "TANSR_DATA"
EXIT_OK, EXIT_FAIL, EXIT_DATA, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfg = RunConfig.load(args.config, overrides)
    log.info("resolved config:\n%s", cfg.dumps().rstrip())
    return cfg


def _load_model(path, config=None, seed=0) -> TanModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return load_checkpoint(path, config, seed)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data_dir = args.data or os.environ.get(DATA_ENV)
    if not data_dir:
        raise DataError(f"no training data: pass --data or set {DATA_ENV}")
    images = [load_y(p) for p in list_pngs(data_dir)]
    seed = cfg.train.seed

    state_ckpt = None
    if args.resume:
        if not Path(args.resume).exists():
            raise FileNotFoundError(f"checkpoint {args.resume} not found")
        state_ckpt = read_checkpoint(args.resume)
        model = model_from_checkpoint(state_ckpt, seed=seed)
        cfg.model = model.config
    elif args.finetune_from:
        model = _load_model(args.finetune_from, cfg.model, seed)
        if model.reinitialized:
            log.info("finetune: re-initialised %d scale-dependent tensors", len(model.reinitialized))
    else:
        model = TanModel(cfg.model, seed=seed)

    trainer = Trainer(model, PatchSampler(images, model.config.scale), cfg.train)
    if state_ckpt is not None:
        trainer.restore(state_ckpt)
        log.info("resumed at step %d", trainer.state.step)
    steps = args.steps if args.steps is not None else cfg.train.steps
    history = trainer.run(steps, log_path=args.log, checkpoint_path=args.checkpoint,
                          run_config=cfg.as_dict())
    if history:
        print(f"step {trainer.state.step} loss {history[-1]:.6f}")
    return EXIT_OK


def _upscale_file(model: TanModel, path: Path, use_ensemble: bool) -> np.ndarray:
    pixels = read_png(path)
    r = model.config.scale

    def run(y_unit: np.ndarray) -> np.ndarray:
        plane = ImagePlane(y_unit, "unit")
        if use_ensemble:
            return self_ensemble(plane, model.upscale).data
        return model.upscale(y_unit)

    if pixels.ndim == 2:
        return np.clip(run(pixels / 255.0), 0, 1) * 255.0
    ycc = rgb_to_ycbcr(pixels)
    h, w = pixels.shape[:2]
    y = np.clip(run(ycc[..., 0] / 255.0), 0, 1) * 255.0
    # chroma is only resampled, never scored
    cb = resize_array(ycc[..., 1], h * r, w * r)
    cr = resize_array(ycc[..., 2], h * r, w * r)
    return ycbcr_to_rgb(np.stack([y, cb, cr], axis=-1))


def cmd_infer(args) -> int:
    model = _load_model(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [Path(p).resolve() for p in args.inputs]
    for src in inputs:
        if not src.exists():
            raise DataError(f"input {src} not found")
        dst = (out_dir / f"{src.stem}_x{model.config.scale}.png").resolve()
        if dst in inputs:
            raise DataError(f"refusing to overwrite input {dst}")
        write_png(dst, _upscale_file(model, src, args.self_ensemble))
        print(dst)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.sr_dir:
        if args.scale is None:
            raise ConfigError("--scale is required with --sr-dir")
        predictor, scale = directory_predictor(args.sr_dir), args.scale
    elif args.checkpoint:
        model = _load_model(args.checkpoint)
        predictor, scale = model_predictor(model, args.self_ensemble), model.config.scale
        if args.scale is not None and args.scale != scale:
            raise ConfigError(f"--scale {args.scale} disagrees with checkpoint scale {scale}")
    else:
        raise ConfigError("eval needs --checkpoint or --sr-dir")
    rows = evaluate_directory(args.hr_dir, predictor, scale, args.shave)
    table = to_csv(rows)
    if args.out:
        Path(args.out).write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _run_config(args)
    model = TanModel(cfg.model, seed=cfg.train.seed)
    groups = param_breakdown(model)
    width = max(len(k) for k in groups)
    for name, n in groups.items():
        print(f"{name:<{width}}  {n:>10,d}")
    total = sum(groups.values())
    print(f"{'total':<{width}}  {total:>10,d}  ({total / 1e6:.3f}M)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.seed or 0)
    print(gradcheck.format_results(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tansr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)
        return p

    p = with_config(sub.add_parser("train", help="train a model on a directory of HR PNGs"))
    p.add_argument("--data", help=f"HR image directory (default: ${DATA_ENV})")
    p.add_argument("--checkpoint", required=True, help="checkpoint file to write")
    p.add_argument("--log", help="CSV loss log")
    p.add_argument("--steps", type=int, help="total step count (overrides config)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--resume", help="continue a run from its checkpoint")
    group.add_argument("--finetune-from", help="start from a checkpoint trained at another scale")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="upscale PNG images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--self-ensemble", action="store_true")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM against bicubic on a directory of HR PNGs")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--sr-dir", help="score precomputed SR images instead of running a model")
    p.add_argument("--scale", type=int)
    p.add_argument("--shave", type=int, help="border pixels ignored by the metrics (default: scale)")
    p.add_argument("--self-ensemble", action="store_true")
    p.add_argument("--out", help="also write the CSV table here")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("params", help="print parameter counts"))
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite on a micro config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, CompatError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
