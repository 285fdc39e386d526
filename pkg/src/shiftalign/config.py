"""Plain-text ``key=value`` run configuration shared by the CLI commands."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Dict, Tuple

from .flowops import ValidityConfig
from .model import GeneratorConfig
from .synth import MASK_KINDS, TEXTURES, MaskSpec, Motion
from .trainer import AblationConfig, Schedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    frames: int = 8
    height: int = 64
    width: int = 64
    # data
    num_clips: int = 3
    motion: str = "translation(1.5,0.5)"
    texture: str = "noise_blobs"
    mask_kind: str = "all"  # one of MASK_KINDS, or "all" to cycle through them
    coverage_lo: float = 0.0
    coverage_hi: float = 0.1
    mask_motion_sigma: float = 1.5
    animate_prob: float = 0.5
    # model
    delta: float = 1.0
    shift_fraction: str = "1/8"
    alignment: str = "tsam"
    # schedule
    stage1_steps: int = 200
    stage2_steps: int = 0
    lr: float = 1e-4
    # ablation
    ablation_frames: int = 6
    ablation_size: int = 32
    ablation_train_clips: int = 8
    ablation_eval_clips: int = 4
    ablation_steps: int = 250
    ablation_lr: float = 1e-3
    ablation_max_shift: float = 5.0
    ablation_coverage_lo: float = 0.1
    ablation_coverage_hi: float = 0.3
    output_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("frames", "height", "width", "num_clips"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.texture not in TEXTURES:
            raise ConfigError(f"texture must be one of {TEXTURES}")
        if self.mask_kind != "all" and self.mask_kind not in MASK_KINDS:
            raise ConfigError(f"mask_kind must be 'all' or one of {MASK_KINDS}")
        try:
            Motion.parse(self.motion)
            self.mask_spec(MASK_KINDS[0])
            self.generator_config()
            self.validity_config()
            self.schedule()
            self.ablation_config()
        except ConfigError:
            raise
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects -------------------------------------------------

    def mask_kind_for(self, i: int) -> str:
        return MASK_KINDS[i % len(MASK_KINDS)] if self.mask_kind == "all" else self.mask_kind

    def mask_spec(self, kind: str) -> MaskSpec:
        return MaskSpec(kind, (self.coverage_lo, self.coverage_hi), self.mask_motion_sigma, self.animate_prob)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(shift_fraction=Fraction(self.shift_fraction), alignment=self.alignment)

    def validity_config(self) -> ValidityConfig:
        return ValidityConfig(delta=self.delta)

    def schedule(self) -> Schedule:
        return Schedule(stage1_steps=self.stage1_steps, stage2_steps=self.stage2_steps, lr=self.lr, seed=self.seed)

    def ablation_config(self, seed=None) -> AblationConfig:
        return AblationConfig(
            seed=self.seed if seed is None else seed,
            frames=self.ablation_frames,
            height=self.ablation_size,
            width=self.ablation_size,
            train_clips=self.ablation_train_clips,
            eval_clips=self.ablation_eval_clips,
            steps=self.ablation_steps,
            lr=self.ablation_lr,
            max_shift=self.ablation_max_shift,
            coverage_band=(self.ablation_coverage_lo, self.ablation_coverage_hi),
            delta=self.delta,
            generator=self.generator_config(),
        )

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = type(getattr(RunConfig, name))
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path=None, overrides: Tuple[str, ...] = ()) -> RunConfig:
    """Read ``path`` (defaults when ``None``) and apply ``key=value`` overrides."""
    text = ""
    if path is not None:
        with open(path) as fh:
            text = fh.read()
    cfg = parse_config(text, str(path) if path else "<defaults>")
    if overrides:
        extra = parse_config("\n".join(overrides), "<override>")
        changed = {k: getattr(extra, k) for k in (o.split("=", 1)[0].strip() for o in overrides)}
        cfg = dataclasses.replace(cfg, **changed)
    return cfg
