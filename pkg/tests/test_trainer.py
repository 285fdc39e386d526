import numpy as np
import pytest

from shiftalign.losses import FeatureExtractor, perceptual_loss, recon_loss, style_loss
from shiftalign.model import Generator, GeneratorConfig, load_checkpoint
from shiftalign.synth import MaskSpec, Motion, gen_clip
from shiftalign.trainer import (
    DEFAULT_ARMS,
    STAGE1_WEIGHTS,
    STAGE2_WEIGHTS,
    AblationArm,
    AblationConfig,
    Schedule,
    TrainingDiverged,
    clip_metrics,
    hole_l1,
    loss_parts,
    prepare_batch,
    read_loss_csv,
    run_ablation,
    train,
)
from shiftalign.losses import total_loss


@pytest.fixture(scope="module")
def tiny():
    clip = gen_clip(Motion("translation", 1.0, 0.0), "gradient", 3, 16, 16, 0, MaskSpec("object_like", (0.1, 0.2)))
    return clip


def test_schedule_defaults():
    s = Schedule()
    assert (s.lr, s.betas) == (1e-4, (0.9, 0.999))
    w1, w2 = STAGE1_WEIGHTS, STAGE2_WEIGHTS
    assert (w1.lambda_a, w1.lambda_p, w1.lambda_s, w1.lambda_c, w1.lambda_G) == (1, 1, 2, 0, 0)
    assert (w2.lambda_a, w2.lambda_c, w2.lambda_G) == (1, 6, 0.1)
    assert [st for st, _, _ in s.stages()] == [1, 2]
    with pytest.raises(ValueError):
        Schedule(stage1_steps=-1)


def test_stage1_total_excludes_hole_and_gan_terms(tiny):
    cfg = GeneratorConfig()
    b = prepare_batch(tiny, cfg)
    gen, ext = Generator(cfg, seed=1), FeatureExtractor()
    out, parts = loss_parts(gen, b, ext, STAGE1_WEIGHTS)
    total = total_loss(parts, STAGE1_WEIGHTS).item()
    ref = recon_loss(out, b.target, b.masks).item() + perceptual_loss(out, b.target, ext).item() + 2 * style_loss(out, b.target, ext).item()
    assert total == pytest.approx(ref, rel=1e-6)
    assert "adversarial" not in parts


def test_zero_steps_keeps_initialization(tiny, tmp_path):
    cfg = GeneratorConfig(alignment="tsm")
    gen = Generator(cfg, seed=3)
    init = {k: v.copy() for k, v in gen.state_dict().items()}
    res = train(gen, [prepare_batch(tiny, cfg)], Schedule(stage1_steps=0), out_dir=str(tmp_path), config_echo=cfg.echo())
    assert res.losses == []
    fresh = Generator(cfg, seed=99)
    load_checkpoint(tmp_path / "checkpoint", {"generator": fresh})
    for k, v in fresh.state_dict().items():
        assert np.array_equal(v, init[k])


def test_training_is_deterministic_and_logged(tiny, tmp_path):
    cfg = GeneratorConfig()
    sched = Schedule(stage1_steps=2, stage2_steps=2, lr=1e-3)
    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        res = train(Generator(cfg, seed=0), [prepare_batch(tiny, cfg)], sched, out_dir=str(out))
        runs.append(res)
    assert runs[0].losses == runs[1].losses
    rows = read_loss_csv(tmp_path / "run0" / "losses.csv")
    assert [r["stage"] for r in rows] == [1, 1, 2, 2]
    assert rows[0]["L_G"] == 0.0 and rows[2]["L_G"] != 0.0
    assert (tmp_path / "run0" / "losses.csv").read_text().splitlines()[0] == "step,stage,L_r,L_p,L_s,L_G,total"
    assert (tmp_path / "run0" / "losses.csv").read_bytes() == (tmp_path / "run1" / "losses.csv").read_bytes()


def test_loss_decreases_on_tiny_clip(tiny):
    cfg = GeneratorConfig()
    res = train(Generator(cfg, seed=0), [prepare_batch(tiny, cfg)], Schedule(stage1_steps=15, lr=2e-3))
    assert res.losses[-1]["total"] < res.losses[0]["total"]


def test_divergence_restores_last_good(tiny, tmp_path):
    cfg = GeneratorConfig(alignment="tsm")
    gen = Generator(cfg, seed=0)
    init = {k: v.copy() for k, v in gen.state_dict().items()}
    with pytest.raises(TrainingDiverged) as info:
        train(gen, [prepare_batch(tiny, cfg)], Schedule(stage1_steps=3, lr=1e39), out_dir=str(tmp_path))
    assert info.value.step == 1
    for k, v in gen.state_dict().items():
        assert np.array_equal(v, init[k])
    assert (tmp_path / "checkpoint" / "manifest.txt").exists()


def test_train_preconditions(tiny):
    with pytest.raises(ValueError):
        train(Generator(), [], Schedule(stage1_steps=1))


def test_metric_helpers(tiny):
    assert hole_l1(tiny.frames, tiny.frames, tiny.masks) == 0.0
    m = clip_metrics(tiny.frames, tiny.frames, tiny.masks)
    assert m["psnr"] == 100.0 and m["ssim"] == pytest.approx(1.0)


def test_arms():
    assert [a.alignment for a in DEFAULT_ARMS] == ["none", "exact", "perturbed"]
    assert DEFAULT_ARMS[0].generator_config(GeneratorConfig()).alignment == "tsm"
    assert DEFAULT_ARMS[2].flow_transform()(np.ones(2, np.float32)).tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        AblationArm("x", "learned")


def test_identical_arms_identical_rows():
    cfg = AblationConfig(frames=3, height=16, width=16, train_clips=1, eval_clips=1, steps=2)
    arms = (AblationArm("a", "exact"), AblationArm("b", "exact"))
    rows = run_ablation(arms, cfg)
    assert len(rows) == 6
    by_arm = {}
    for r in rows:
        by_arm.setdefault(r["arm"], []).append({k: v for k, v in r.items() if k != "arm"})
    assert by_arm["a"] == by_arm["b"]
    with pytest.raises(ValueError):
        run_ablation(arms[:1], cfg)
