import numpy as np
import pytest

from dwgan.hazesim import HOMOGENEOUS, HazePair, make_base_images, make_dataset
from dwgan.model import Discriminator, Generator, ModelConfig
from dwgan.train import (ABLATION_CONFIGS, Adam, TrainConfig, ablation_run,
                         augment, checkpoint_hash, lr_at, train_gan)
from dwgan.tensor import Tensor


def small_model_cfg(**kw):
    base = dict(base_channels=4, depth=2, encoder_channels=(4, 8, 8))
    base.update(kw)
    return ModelConfig(**base)


def small_dataset(n=8, size=32, seed=0):
    rng = np.random.default_rng(seed)
    base = make_base_images(rng, 4, size, size)
    return make_dataset(n, HOMOGENEOUS, base, rng)


def smoke_cfg(**kw):
    base = dict(crop=16, batch=2, total_steps=50, eval_every=0, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_initial_rate(self):
        assert lr_at(0, TrainConfig()) == 1e-4

    def test_toy_milestone_arithmetic(self):
        # 800 steps: milestones at 300, 500, 600
        cfg = TrainConfig(total_steps=800)
        assert lr_at(299, cfg) == 1e-4
        assert lr_at(350, cfg) == 5e-5
        assert lr_at(799, cfg) == pytest.approx(1.25e-5, abs=1e-20)

    def test_non_increasing(self):
        cfg = TrainConfig(total_steps=100)
        rates = [lr_at(s, cfg) for s in range(100)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_unsorted_milestones_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(milestones=(0.5, 0.3))

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_factor=1.5)

    def test_effective_weights_zero_disabled(self):
        cfg = TrainConfig(use_ms_ssim=False, use_adv=False)
        w = cfg.effective_weights()
        assert w.alpha == 0.0 and w.gamma == 0.0 and w.beta == 0.001


class TestAugment:
    def test_output_shape(self):
        pair = small_dataset(1)[0]
        hz, cl = augment(pair, np.random.default_rng(0), crop=16)
        assert hz.shape == (3, 16, 16) and cl.shape == (3, 16, 16)

    def test_identical_transform_on_both(self):
        # feed the same array as hazy and clear; outputs must stay equal
        img = small_dataset(1)[0].clear
        pair = HazePair(clear=img, hazy=img.copy(),
                        params=small_dataset(1)[0].params)
        hz, cl = augment(pair, np.random.default_rng(1), crop=16)
        np.testing.assert_array_equal(hz, cl)

    def test_values_come_from_source(self):
        pair = small_dataset(1)[0]
        hz, _ = augment(pair, np.random.default_rng(2), crop=16)
        assert np.isin(hz, pair.hazy).all()

    def test_rng_determinism(self):
        pair = small_dataset(1)[0]
        a = augment(pair, np.random.default_rng(3), crop=16)
        b = augment(pair, np.random.default_rng(3), crop=16)
        np.testing.assert_array_equal(a[0], b[0])

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            augment(small_dataset(1)[0], np.random.default_rng(0), crop=64)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # bias correction makes |update| = lr * |g| / (|g| + eps) on step 1
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.array([1.0, -2.0, 0.5, 3.0])
        opt = Adam({"p": p})
        opt.step(lr=0.01)
        np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-6)
        np.testing.assert_array_equal(np.sign(p.data), -np.sign(p.grad))

    def test_none_grad_skipped(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Adam({"p": p})
        opt.step(lr=0.1)
        np.testing.assert_array_equal(p.data, 1.0)

    def test_nonfinite_grad_aborts_with_name(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.array([1.0, np.nan, 0.0])
        opt = Adam({"layer.weight": p})
        with pytest.raises(FloatingPointError, match="layer.weight"):
            opt.step(lr=0.1)

    def test_constant_gradient_drifts_linearly(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam({"p": p})
        for _ in range(10):
            p.grad = np.array([1.0])
            opt.step(lr=0.01)
        assert p.data[0] == pytest.approx(-0.1, rel=1e-4)


class TestTrainGan:
    def test_empty_dataset_rejected(self):
        gen = Generator(small_model_cfg(), seed=0)
        with pytest.raises(ValueError):
            train_gan(gen, None, [], smoke_cfg(use_adv=False))

    def test_adv_requires_discriminator(self):
        gen = Generator(small_model_cfg(), seed=0)
        with pytest.raises(ValueError):
            train_gan(gen, None, small_dataset(), smoke_cfg(use_adv=True))

    def test_zero_steps_checkpoint_only(self, tmp_path):
        gen = Generator(small_model_cfg(), seed=0)
        res = train_gan(gen, None, small_dataset(),
                        smoke_cfg(total_steps=0, use_adv=False),
                        out_dir=tmp_path)
        assert res.log_rows == []
        assert (tmp_path / "final" / "manifest.json").exists()

    def test_smoke_run_log_and_identity(self, tmp_path):
        cfg = small_model_cfg()
        gen = Generator(cfg, seed=0)
        disc = Discriminator(cfg, seed=1)
        tcfg = smoke_cfg(eval_every=25)
        res = train_gan(gen, disc, small_dataset(), tcfg, out_dir=tmp_path)
        assert len(res.log_rows) == 50
        w = tcfg.effective_weights()
        for row in res.log_rows:
            recon = (row["l1"] + w.alpha * row["ms_ssim"]
                     + w.beta * row["perceptual"] + w.gamma * row["adv"])
            assert abs(row["total"] - recon) < 1e-12
        assert [e.step for e in res.evals] == [25, 50]
        assert (tmp_path / "log.csv").exists()

    def test_determinism(self, tmp_path):
        hashes, finals = [], []
        for run in ("a", "b"):
            cfg = small_model_cfg()
            gen = Generator(cfg, seed=0)
            disc = Discriminator(cfg, seed=1)
            res = train_gan(gen, disc, small_dataset(),
                            smoke_cfg(total_steps=10),
                            out_dir=tmp_path / run)
            hashes.append(checkpoint_hash(res.checkpoint_dir))
            finals.append(res.final_psnr)
        assert hashes[0] == hashes[1]
        assert finals[0] == finals[1]

    def test_intermediate_checkpoints(self, tmp_path):
        gen = Generator(small_model_cfg(), seed=0)
        train_gan(gen, None, small_dataset(),
                  smoke_cfg(total_steps=10, use_adv=False,
                            checkpoint_every=5),
                  out_dir=tmp_path)
        assert (tmp_path / "step_000005").is_dir()
        assert (tmp_path / "step_000010").is_dir()

    def test_divergence_guard(self):
        gen = Generator(small_model_cfg(), seed=0)
        first = next(iter(gen.parameters().values()))
        first.data = np.full_like(first.data, np.nan)
        with pytest.raises(FloatingPointError):
            train_gan(gen, None, small_dataset(),
                      smoke_cfg(total_steps=5, use_adv=False))


class TestAblation:
    def test_seven_rows_with_reference(self):
        rows = ablation_run(
            smoke_cfg(total_steps=2, use_adv=True),
            small_model_cfg(), dataset=small_dataset(6))
        assert len(rows) == 7
        for row, ref in zip(rows, ABLATION_CONFIGS):
            assert row.label == ref[0]
            assert row.ref_psnr == ref[7] and row.ref_ssim == ref[8]
            assert not row.reference_reproduced
            assert row.losses["l1"]
        assert rows[0].losses["adv"] is False
        assert rows[6].losses["adv"] is True

    def test_reference_column_values(self):
        # reference anchors: 18.15/0.7483 for the vanilla branch up to
        # 21.99/0.856 with every module and loss enabled
        assert ABLATION_CONFIGS[0][7:] == (18.15, 0.7483)
        assert ABLATION_CONFIGS[3][7:] == (21.52, 0.8403)
        assert ABLATION_CONFIGS[6][7:] == (21.99, 0.856)
