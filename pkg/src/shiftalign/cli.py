"""``shiftalign`` command-line entry point.

Exit codes: 0 success, 2 usage/config/missing input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .flowops import ValidityConfig, cycle_validity
from .imageio import to_uint8, write_pgm
from .losses import FeatureExtractor
from .metrics import psnr, ssim, vfid
from .model import Generator, GeneratorConfig, load_checkpoint, read_config_echo
from .numerics import NonFiniteError, tsr
from .synth import CLIP_MANIFEST, Motion, export_clip_images, gen_clip, load_clip, read_manifest, save_clip
from .trainer import (
    DEFAULT_ARMS,
    TrainingDiverged,
    inpaint,
    prepare_batch,
    run_ablation,
    train,
    write_ablation_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    return load_config(args.config, tuple(args.set or ()))


def _clip_dirs(path) -> List[str]:
    """``path`` itself if it is a clip directory, else its clip subdirectories in name order."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no such directory: {path}")
    if os.path.exists(os.path.join(path, CLIP_MANIFEST)):
        return [path]
    subs = sorted(d for d in os.listdir(path) if os.path.exists(os.path.join(path, d, CLIP_MANIFEST)))
    if not subs:
        raise FileNotFoundError(f"no clip directories under {path}")
    return [os.path.join(path, d) for d in subs]


def _checkpoint_echo(cfg: RunConfig) -> Dict[str, str]:
    echo = cfg.generator_config().echo()
    echo["delta"] = repr(float(cfg.delta))
    return echo


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    motion = Motion.parse(cfg.motion)
    for i in range(cfg.num_clips):
        kind = cfg.mask_kind_for(i)
        clip = gen_clip(motion, cfg.texture, cfg.frames, cfg.height, cfg.width, cfg.seed + i, cfg.mask_spec(kind))
        save_clip(os.path.join(args.out, f"clip_{i:03d}"), clip)
    cfg.write(os.path.join(args.out, "config.txt"))
    print(f"wrote {cfg.num_clips} clips of {cfg.frames}x3x{cfg.height}x{cfg.width} to {args.out}")
    return EXIT_OK


def cmd_flow_validity(args) -> int:
    fwd = tsr.load(args.fwd)
    bwd = tsr.load(args.bwd)
    if fwd.shape != bwd.shape:
        raise UsageError(f"flow resolutions differ: {fwd.shape} vs {bwd.shape}")
    if fwd.ndim != 3 or fwd.shape[-1] != 2:
        raise UsageError(f"flows must be [H,W,2], got {fwd.shape}")
    v = cycle_validity(fwd, bwd, ValidityConfig(delta=args.delta))
    os.makedirs(args.out, exist_ok=True)
    tsr.save(os.path.join(args.out, "validity.tsr"), v)
    write_pgm(os.path.join(args.out, "validity.pgm"), to_uint8(v, 0.0, 1.0))
    print(f"valid fraction {float(v.mean()):.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    gcfg = cfg.generator_config()
    vcfg = cfg.validity_config()
    clips = [load_clip(d) for d in _clip_dirs(args.data)]
    batches = [prepare_batch(c, gcfg, vcfg) for c in clips]
    os.makedirs(args.out, exist_ok=True)
    cfg.write(os.path.join(args.out, "config.txt"))
    gen = Generator(gcfg, seed=cfg.seed)
    result = train(gen, batches, cfg.schedule(), out_dir=args.out, config_echo=_checkpoint_echo(cfg))
    if result.losses:
        first, last = result.losses[0]["total"], result.losses[-1]["total"]
        print(f"trained {len(result.losses)} steps: total loss {first:.6g} -> {last:.6g}")
    else:
        print("zero-step schedule: checkpoint holds the initialization")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = run_ablation(DEFAULT_ARMS, cfg.ablation_config())
    os.makedirs(args.out, exist_ok=True)
    cfg.write(os.path.join(args.out, "config.txt"))
    write_ablation_csv(os.path.join(args.out, "ablation.csv"), rows)
    for r in rows:
        print(f"{r['arm']:<22}{r['mask_kind']:<13}psnr={r['psnr']:.4f} ssim={r['ssim']:.4f} hole_l1={r['hole_l1']:.5f}")
    return EXIT_OK


def _load_generator(ckpt) -> tuple:
    if not os.path.isdir(ckpt):
        raise FileNotFoundError(f"no such checkpoint: {ckpt}")
    echo = read_config_echo(ckpt)
    gcfg = GeneratorConfig.from_echo(echo)
    gen = Generator(gcfg)
    load_checkpoint(ckpt, {"generator": gen})
    return gen, gcfg, ValidityConfig(delta=float(echo.get("delta", 1.0)))


def cmd_inpaint(args) -> int:
    gen, gcfg, vcfg = _load_generator(args.checkpoint)
    dirs = _clip_dirs(args.clips)
    single = len(dirs) == 1 and os.path.abspath(dirs[0]) == os.path.abspath(args.clips)
    for d in dirs:
        clip = load_clip(d)
        out = inpaint(gen, prepare_batch(clip, gcfg, vcfg))
        dest = args.out if single else os.path.join(args.out, os.path.basename(d))
        os.makedirs(dest, exist_ok=True)
        tsr.save(os.path.join(dest, "inpainted.tsr"), out)
        export_clip_images(dest, out)
        with open(os.path.join(d, CLIP_MANIFEST)) as src, open(os.path.join(dest, CLIP_MANIFEST), "w") as dst:
            dst.write(src.read())
    print(f"inpainted {len(dirs)} clip(s) into {args.out}")
    return EXIT_OK


def _prediction(d) -> np.ndarray:
    path = os.path.join(d, "inpainted.tsr")
    return tsr.load(path if os.path.exists(path) else os.path.join(d, "frames.tsr"))


def cmd_eval(args) -> int:
    gt_dirs = _clip_dirs(args.gt)
    pred_dirs = _clip_dirs(args.pred)
    if len(gt_dirs) == 1 and len(pred_dirs) == 1:
        pairs = [(pred_dirs[0], gt_dirs[0])]
    else:
        by_name = {os.path.basename(d): d for d in pred_dirs}
        missing = [os.path.basename(d) for d in gt_dirs if os.path.basename(d) not in by_name]
        if missing:
            raise FileNotFoundError(f"no prediction for clips {missing}")
        pairs = [(by_name[os.path.basename(g)], g) for g in gt_dirs]
    groups: Dict[str, list] = {}
    for p, g in pairs:
        pred = _prediction(p)
        gt = tsr.load(os.path.join(g, "frames.tsr"))
        if pred.shape != gt.shape:
            raise UsageError(f"{p}: prediction shape {pred.shape} differs from ground truth {gt.shape}")
        if not np.all(np.isfinite(pred)):
            raise NonFiniteError(f"{p}: prediction contains non-finite values")
        kind = read_manifest(g).get("mask_kind", "none")
        groups.setdefault(kind, []).append((pred, gt))
    extractor = FeatureExtractor()
    lines = []
    for kind in sorted(groups):
        items = groups[kind]
        unit = [((p + 1.0) / 2.0, (g + 1.0) / 2.0) for p, g in items]
        ps = float(np.mean([psnr(p, g) for p, g in unit]))
        ss = float(np.mean([ssim(p, g) for p, g in unit]))
        vf = vfid([p for p, _ in items], [g for _, g in items], extractor)
        lines.append(f"{kind}.psnr={ps!r}")
        lines.append(f"{kind}.ssim={ss!r}")
        lines.append(f"{kind}.vfid={vf!r}")
        print(f"{kind:<13}PSNR={ps:.4f} SSIM={ss:.6f} VFID-lite={vf:.6g} clips={len(items)}")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftalign", description="Shift-and-align video inpainting toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file (defaults if omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return sp

    sp = with_config(sub.add_parser("gen-data", help="write synthetic clips"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("flow-validity", help="cycle-consistency mask of a flow pair")
    sp.add_argument("--fwd", required=True, help="TSR1 [H,W,2] flow sampled at the landing point")
    sp.add_argument("--bwd", required=True, help="TSR1 [H,W,2] flow followed first")
    sp.add_argument("--delta", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_flow_validity)

    sp = with_config(sub.add_parser("train", help="two-stage training on clip directories"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("ablate", help="TSM vs TSAM alignment ablation"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("inpaint", help="fill corrupted regions with a trained generator")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--clips", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_inpaint)

    sp = sub.add_parser("eval", help="PSNR/SSIM/VFID-lite per mask kind")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--report", help="also write key=value results here")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError, tsr.TsrFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        where = f"; last good checkpoint in {exc.checkpoint}" if exc.checkpoint else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
