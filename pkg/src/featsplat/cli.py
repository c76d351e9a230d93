"""Command-line entry point: ``featsplat <subcommand> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, config_from_dict, load_config
from .data import Dataset, load_dataset, write_image
from .errors import FeatSplatError
from .fixture import make_synthetic_scene, write_fixture
from .train import Stage, StagePlan, init_model, train_stage1, train_stage2

log = logging.getLogger("featsplat")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _dataset(cfg: Config) -> Dataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    log.info("no dataset in config; using the synthetic fixture (seed %d)", cfg.seed)
    f = cfg.fixture
    return make_synthetic_scene(cfg.seed, f.n_gaussians, f.lr_resolution, cfg.sr_factor, f.n_views, f.cone_deg).dataset()


def _require_checkpoint(args):
    if not args.checkpoint:
        raise FeatSplatError(f"{args.command} needs --checkpoint")
    return load_checkpoint(args.checkpoint)


def cmd_make_fixture(args) -> int:
    cfg = _config(args)
    f = cfg.fixture
    fx = make_synthetic_scene(cfg.seed, f.n_gaussians, f.lr_resolution, cfg.sr_factor, f.n_views, f.cone_deg)
    path = write_fixture(fx, args.out)
    print(path)
    return 0


def cmd_train_coarse(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    rng = np.random.default_rng(cfg.seed)
    if args.checkpoint:
        model, optim, _ = load_checkpoint(args.checkpoint)
    else:
        model, optim = init_model(cfg, ds.init_points, rng), None
    t0 = time.perf_counter()
    model, optim, hist = train_stage1(ds, model, StagePlan.from_config(cfg, Stage.COARSE_LR), cfg, rng, optim, args.threads)
    log.info("stage 1 finished in %.1f s with %d Gaussians", time.perf_counter() - t0, len(model.gaussians))
    out = Path(args.out) / "coarse.sgs"
    meta = {"stage": "coarse", "iteration": cfg.stage1.iterations, "seed": cfg.seed, "config": cfg.to_dict(), "events": []}
    save_checkpoint(out, model, optim, meta)
    print(out)
    return 0


def cmd_train_fine(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    model, _, _ = _require_checkpoint(args)
    rng = np.random.default_rng(cfg.seed)
    n0 = len(model.gaussians)
    t0 = time.perf_counter()
    model, optim, hist = train_stage2(ds, ds.pseudo_hr, model, StagePlan.from_config(cfg, Stage.FINE_HR), cfg.gss, cfg, rng, threads=args.threads)
    log.info("stage 2 finished in %.1f s; Gaussians %d -> %d", time.perf_counter() - t0, n0, len(model.gaussians))
    out = Path(args.out) / "fine.sgs"
    meta = {"stage": "fine", "iteration": cfg.stage2.iterations, "seed": cfg.seed, "config": cfg.to_dict(), "events": hist.events}
    save_checkpoint(out, model, optim, meta)
    print(out)
    return 0


def _views(ds: Dataset, which: str) -> list[int]:
    return {"all": list(range(len(ds.views))), "train": ds.train_indices, "test": ds.test_indices}[which]


def cmd_render(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    model, _, _ = _require_checkpoint(args)
    out = Path(args.out)
    for i in _views(ds, args.views):
        cam = ds.views[i].camera
        if args.scale != 1:
            cam = cam.scaled(args.scale, cfg.hr_principal_point)
        rgb = model.render(cam, args.threads)[0]
        path = out / f"{ds.views[i].name}.png"
        write_image(path, rgb)
        print(path)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    model, _, _ = _require_checkpoint(args)
    scale = ds.sr_factor if args.scale is None else args.scale
    names, splits, renders, targets = [], [], [], []
    test = set(ds.test_indices)
    for i in _views(ds, args.views):
        if scale == 1:
            target = ds.lr_image(i)
        elif scale == ds.sr_factor:
            target = ds.gt_hr(i)
            if target is None:
                raise FeatSplatError(f"view {ds.views[i].name} has no HR ground truth")
        else:
            raise FeatSplatError(f"--scale must be 1 or the SR factor {ds.sr_factor}")
        cam = ds.views[i].camera if scale == 1 else ds.views[i].camera.scaled(scale, cfg.hr_principal_point)
        names.append(ds.views[i].name)
        splits.append("test" if i in test else "train")
        renders.append(model.render(cam, args.threads)[0])
        targets.append(target)
    rows = report.eval_rows(names, splits, renders, targets)
    out = Path(args.out)
    report.write_csv(out / "eval.csv", report.EVAL_FIELDS, rows)
    report.plot_eval(rows, out / "eval.png")
    for n, s, r, t in zip(names, splits, renders, targets):
        if s == "test":
            report.plot_comparison(r, t, out / f"compare_{n}.png", n)
    for row in rows:
        if row["view"].startswith("mean_"):
            print(f"{row['view']}: PSNR {row['psnr']:.3f} dB  SSIM {row['ssim']:.4f}")
    return 0


def cmd_split_stats(args) -> int:
    _, _, meta = _require_checkpoint(args)
    rows = report.split_rows(meta.get("events", []))
    out = Path(args.out)
    report.write_csv(out / "split_stats.csv", report.SPLIT_FIELDS, rows)
    if rows:
        report.plot_split_stats(rows, out / "split_stats.png")
    print(f"{len(rows)} GSS events, {sum(r['created'] for r in rows)} fine Gaussians created")
    return 0


COMMANDS = {
    "make-fixture": cmd_make_fixture,
    "train-coarse": cmd_train_coarse,
    "train-fine": cmd_train_fine,
    "render": cmd_render,
    "eval": cmd_eval,
    "split-stats": cmd_split_stats,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="featsplat", description="Feature-field Gaussian splatting with coarse-to-fine super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--checkpoint", help="input checkpoint (train-coarse: resume from it)")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--threads", type=int, default=0, help="0 = deterministic single thread")
        if name in ("render", "eval"):
            s.add_argument("--scale", type=int, default=1 if name == "render" else None)
            s.add_argument("--views", choices=("all", "train", "test"), default="all")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return 2
    limit = threadpool_limits(limits=max(1, args.threads)) if args.threads <= 1 else contextlib.nullcontext()
    try:
        with limit:
            return COMMANDS[args.command](args)
    except (FeatSplatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
