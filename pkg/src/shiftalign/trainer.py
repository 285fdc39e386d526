"""Two-stage training loop and the alignment ablation harness."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .flowops import ValidityConfig
from .losses import FeatureExtractor, LossWeights, adversarial_losses, perceptual_loss, recon_loss, style_loss, total_loss
from .metrics import SsimConfig, psnr, ssim
from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, flow_pyramid, save_checkpoint
from .numerics import NonFiniteError, Tensor, no_grad
from .numerics.nn import Adam, Module
from .synth import MASK_KINDS, TEXTURES, MaskSpec, Motion, SyntheticClip, gen_clip, gen_mask

STAGE1_WEIGHTS = LossWeights(lambda_a=1.0, lambda_c=0.0, lambda_p=1.0, lambda_s=2.0, lambda_G=0.0)
STAGE2_WEIGHTS = LossWeights(lambda_a=1.0, lambda_c=6.0, lambda_p=1.0, lambda_s=2.0, lambda_G=0.1)
LOSS_COLUMNS = ("step", "stage", "L_r", "L_p", "L_s", "L_G", "total")


@dataclass(frozen=True)
class Schedule:
    stage1_steps: int = 200
    stage2_steps: int = 0
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    stage1_weights: LossWeights = STAGE1_WEIGHTS
    stage2_weights: LossWeights = STAGE2_WEIGHTS

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")

    def stages(self):
        yield 1, self.stage1_steps, self.stage1_weights
        yield 2, self.stage2_steps, self.stage2_weights


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, reason: str, checkpoint: Optional[str] = None):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step
        self.reason = reason
        self.checkpoint = checkpoint


@dataclass
class Batch:
    """One clip prepared for the generator: corrupted input, target and flows."""

    frames: np.ndarray
    masks: np.ndarray
    target: np.ndarray
    pyramid: Optional[dict]


def prepare_batch(
    clip: SyntheticClip,
    cfg: GeneratorConfig,
    vcfg: ValidityConfig = ValidityConfig(),
    flow_transform: Optional[Callable] = None,
) -> Batch:
    pyr = None
    if cfg.alignment == "tsam":
        to_prev, to_next = clip.to_prev, clip.to_next
        if flow_transform is not None:
            to_prev, to_next = flow_transform(to_prev), flow_transform(to_next)
        pyr = flow_pyramid(to_prev, to_next, cfg, vcfg)
    frames = (clip.frames * clip.masks).astype(np.float32)
    return Batch(frames, clip.masks.astype(np.float32), clip.frames.astype(np.float32), pyr)


def _value(x) -> float:
    return float(np.asarray(x.data if isinstance(x, Tensor) else x).reshape(-1)[0])


def loss_parts(gen: Generator, batch: Batch, extractor: FeatureExtractor, weights: LossWeights, disc: Optional[Discriminator] = None):
    out = gen(batch.frames, batch.masks, batch.pyramid)
    parts = {
        "recon": recon_loss(out, batch.target, batch.masks, weights.lambda_a, weights.lambda_c),
        "perceptual": perceptual_loss(out, batch.target, extractor),
        "style": style_loss(out, batch.target, extractor),
    }
    if disc is not None and weights.lambda_G > 0:
        _, g_loss = adversarial_losses(disc(batch.target), disc(out))
        parts["adversarial"] = g_loss
    return out, parts


def _snapshot(modules: Dict[str, Module]):
    return {role: {k: v.copy() for k, v in m.state_dict().items()} for role, m in modules.items()}


def _params_finite(modules: Dict[str, Module]) -> bool:
    return all(np.all(np.isfinite(p.data)) for m in modules.values() for p in m.parameters())


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Optional[Discriminator]
    losses: List[dict] = field(default_factory=list)
    seconds: float = 0.0

    def totals(self, stage: Optional[int] = None) -> List[float]:
        return [r["total"] for r in self.losses if stage is None or r["stage"] == stage]


def write_loss_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([r["step"], r["stage"]] + [repr(float(r[k])) for k in LOSS_COLUMNS[2:]])


def read_loss_csv(path) -> List[dict]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("step", "stage") else float(v)) for k, v in r.items()} for r in rows]


def train(
    gen: Generator,
    batches: Sequence[Batch],
    schedule: Schedule = Schedule(),
    disc: Optional[Discriminator] = None,
    extractor: Optional[FeatureExtractor] = None,
    out_dir: Optional[str] = None,
    config_echo: Optional[Dict[str, str]] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Run stage 1 then stage 2 over ``batches`` in a fixed round-robin order.

    Stage 2 alternates one discriminator step and one generator step.  If a
    loss or parameter goes non-finite, the parameters from the last good step
    are restored (and checkpointed when ``out_dir`` is set) before
    :class:`TrainingDiverged` is raised.
    """
    if not batches:
        raise ValueError("need at least one training clip")
    for b in batches:
        h, w = b.frames.shape[2:]
        if h % 8 or w % 8:
            raise ValueError(f"clip resolution {h}x{w} is not divisible by 8")
    extractor = extractor or FeatureExtractor()
    if schedule.stage2_steps > 0 and disc is None:
        disc = Discriminator(DiscriminatorConfig(), seed=schedule.seed + 1)
    modules: Dict[str, Module] = {"generator": gen}
    if disc is not None:
        modules["discriminator"] = disc
    opt_g = Adam(gen.parameters(), lr=schedule.lr, betas=schedule.betas)
    opt_d = Adam(disc.parameters(), lr=schedule.lr, betas=schedule.betas) if disc is not None else None
    result = TrainResult(gen, disc)
    echo = dict(config_echo or {})
    start = time.perf_counter()

    def checkpoint():
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, "checkpoint"), modules, echo)
            write_loss_csv(os.path.join(out_dir, "losses.csv"), result.losses)

    good = _snapshot(modules)
    step = 0
    for stage, n_steps, weights in schedule.stages():
        for _ in range(n_steps):
            step += 1
            batch = batches[(step - 1) % len(batches)]
            try:
                if stage == 2 and disc is not None:
                    with no_grad():
                        fake = gen(batch.frames, batch.masks, batch.pyramid)
                    d_loss, _ = adversarial_losses(disc(batch.target), disc(fake.detach()))
                    opt_d.zero_grad()
                    d_loss.backward()
                    opt_d.step()
                use_disc = disc if stage == 2 else None
                _, parts = loss_parts(gen, batch, extractor, weights, use_disc)
                total = total_loss(parts, weights)
                opt_g.zero_grad()
                if disc is not None:
                    disc.zero_grad()
                total.backward()
                opt_g.step()
                if not _params_finite(modules):
                    raise NonFiniteError("parameters became non-finite after the update")
            except (NonFiniteError, FloatingPointError) as exc:
                for role, m in modules.items():
                    m.load_state_dict(good[role])
                checkpoint()
                raise TrainingDiverged(step, str(exc), os.path.join(out_dir, "checkpoint") if out_dir else None) from exc
            row = {
                "step": step,
                "stage": stage,
                "L_r": _value(parts["recon"]),
                "L_p": _value(parts["perceptual"]),
                "L_s": _value(parts["style"]),
                "L_G": _value(parts["adversarial"]) if "adversarial" in parts else 0.0,
                "total": _value(total),
            }
            result.losses.append(row)
            if progress is not None:
                progress(row)
            good = _snapshot(modules)
    result.seconds = time.perf_counter() - start
    checkpoint()
    return result


def inpaint(gen: Generator, batch: Batch) -> np.ndarray:
    with no_grad():
        return gen(batch.frames, batch.masks, batch.pyramid).data.copy()


# ---------------------------------------------------------------------------
# evaluation and ablation
# ---------------------------------------------------------------------------


def _unit(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def hole_l1(pred, gt, masks) -> float:
    """Mean absolute error over corrupted pixels, images scaled to [0, 1]."""
    hole = np.broadcast_to(1.0 - np.asarray(masks, dtype=np.float64), np.shape(pred))
    n = hole.sum()
    if n == 0:
        return 0.0
    return float((np.abs(_unit(pred) - _unit(gt)) * hole).sum() / n)


def hole_psnr(pred, gt, masks) -> float:
    hole = np.broadcast_to(np.asarray(masks) == 0, np.shape(pred))
    if not hole.any():
        return psnr(_unit(pred), _unit(gt))
    return psnr(_unit(pred)[hole], _unit(gt)[hole])


def clip_metrics(pred, gt, masks) -> Dict[str, float]:
    return {
        "psnr": psnr(_unit(pred), _unit(gt)),
        "ssim": ssim(_unit(pred), _unit(gt), SsimConfig(data_range=1.0)),
        "hole_l1": hole_l1(pred, gt, masks),
    }


ARM_ALIGNMENTS = ("none", "exact", "perturbed")


@dataclass(frozen=True)
class AblationArm:
    name: str
    alignment: str
    perturb_scale: float = 0.5

    def __post_init__(self):
        if self.alignment not in ARM_ALIGNMENTS:
            raise ValueError(f"arm alignment must be one of {ARM_ALIGNMENTS}, got {self.alignment!r}")

    def generator_config(self, base: GeneratorConfig) -> GeneratorConfig:
        return replace(base, alignment="tsm" if self.alignment == "none" else "tsam")

    def flow_transform(self):
        if self.alignment != "perturbed":
            return None
        s = float(self.perturb_scale)
        return lambda f: (f * s).astype(np.float32)


DEFAULT_ARMS = (
    AblationArm("tsm", "none"),
    AblationArm("tsam_exact_flow", "exact"),
    AblationArm("tsam_perturbed_flow", "perturbed"),
)


@dataclass(frozen=True)
class AblationConfig:
    seed: int = 0
    frames: int = 6
    height: int = 32
    width: int = 32
    train_clips: int = 8
    eval_clips: int = 4
    steps: int = 250
    lr: float = 1e-3
    max_shift: float = 5.0
    coverage_band: Tuple[float, float] = (0.1, 0.3)
    delta: float = 1.0
    textures: Tuple[str, ...] = TEXTURES
    generator: GeneratorConfig = GeneratorConfig()


def _ablation_clip(rng: np.random.Generator, cfg: AblationConfig, mask_spec: MaskSpec) -> SyntheticClip:
    # random direction and magnitude, so the shifts are almost never whole pixels
    ang = rng.uniform(0, 2 * np.pi)
    mag = rng.uniform(0.5, 1.0) * cfg.max_shift
    motion = Motion("translation", float(mag * np.cos(ang)), float(mag * np.sin(ang)))
    tex = cfg.textures[int(rng.integers(len(cfg.textures)))]
    return gen_clip(motion, tex, cfg.frames, cfg.height, cfg.width, int(rng.integers(2**31)), mask_spec)


def ablation_data(cfg: AblationConfig):
    """Shared training clips and per-mask-kind held-out clips for one seed."""
    rng = np.random.default_rng(cfg.seed)
    train_clips = []
    for i in range(cfg.train_clips):
        kind = MASK_KINDS[i % len(MASK_KINDS)]
        train_clips.append(_ablation_clip(rng, cfg, MaskSpec(kind, cfg.coverage_band, animate_prob=0.5)))
    eval_clips = {}
    for kind in MASK_KINDS:
        eval_clips[kind] = [_ablation_clip(rng, cfg, MaskSpec(kind, cfg.coverage_band, animate_prob=0.0)) for _ in range(cfg.eval_clips)]
    return train_clips, eval_clips


def run_arm(arm: AblationArm, cfg: AblationConfig, train_clips, eval_clips) -> List[dict]:
    gcfg = arm.generator_config(cfg.generator)
    vcfg = ValidityConfig(delta=cfg.delta)
    tf = arm.flow_transform()
    gen = Generator(gcfg, seed=cfg.seed)
    batches = [prepare_batch(c, gcfg, vcfg, tf) for c in train_clips]
    train(gen, batches, Schedule(stage1_steps=cfg.steps, stage2_steps=0, lr=cfg.lr, seed=cfg.seed))
    rows = []
    for kind in MASK_KINDS:
        scores = [clip_metrics(inpaint(gen, prepare_batch(c, gcfg, vcfg, tf)), c.frames, c.masks) for c in eval_clips[kind]]
        row = {"arm": arm.name, "mask_kind": kind}
        for key in ("psnr", "ssim", "hole_l1"):
            row[key] = float(np.mean([s[key] for s in scores]))
        rows.append(row)
    return rows


def run_ablation(arms: Sequence[AblationArm] = DEFAULT_ARMS, cfg: AblationConfig = AblationConfig()) -> List[dict]:
    """Train every arm from the same initialization on the same clips and score held-out clips.

    Rows are ``{arm, mask_kind, psnr, ssim, hole_l1}`` sorted by arm then mask kind.
    """
    if len(arms) < 2:
        raise ValueError("an ablation needs at least two arms")
    train_clips, eval_clips = ablation_data(cfg)
    rows = []
    for arm in arms:
        rows.extend(run_arm(arm, cfg, train_clips, eval_clips))
    order = {k: i for i, k in enumerate(MASK_KINDS)}
    return sorted(rows, key=lambda r: (r["arm"], order[r["mask_kind"]]))


def arm_means(rows: Sequence[dict], key: str = "hole_l1") -> Dict[str, float]:
    out: Dict[str, List[float]] = {}
    for r in rows:
        out.setdefault(r["arm"], []).append(r[key])
    return {k: float(np.mean(v)) for k, v in out.items()}


ABLATION_METRICS = ("psnr", "ssim", "hole_l1")


def write_ablation_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("arm", "mask_kind", "metric", "value"))
        for r in rows:
            for m in ABLATION_METRICS:
                w.writerow((r["arm"], r["mask_kind"], m, repr(float(r[m]))))
