import json

import numpy as np
import pytest
from scipy import stats

from selfir.data import PairDataset, SynthConfig, synth_in_memory
from selfir.model import NetworkConfig
from selfir.train import (
    ConfigError, NonFiniteLossError, TrainConfig, crop_sample, epoch_order, lr_at_epoch,
    make_batch, sample_rng, smoothed, train,
)

TINY_NET = NetworkConfig(n_levels=2, base_channels=4)


def tiny(mode="selfir", **kw):
    base = dict(mode=mode, batch_size=2, crop_size=32, epochs=3, steps_per_epoch=2,
                network=TINY_NET, checkpoint_every=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_set():
    return synth_in_memory(SynthConfig(n_scenes=6, canvas=(48, 48), n_frames=7, seed=3))


class TestSchedule:
    def test_halving_points(self):
        assert [lr_at_epoch(e) for e in (0, 50, 100, 150)] == [3e-4, 1.5e-4, 7.5e-5, 3.75e-5]
        assert lr_at_epoch(49) == 3e-4 and lr_at_epoch(51) == 1.5e-4

    def test_recorded_rates(self, small_set):
        cfg = tiny("baseline_b", epochs=4, steps_per_epoch=1, lr_halving_period=2, batch_size=1)
        hist = train(cfg, small_set).history["lr"]
        assert [h["lr"] for h in hist] == [3e-4, 3e-4, 1.5e-4, 1.5e-4]


class TestCrops:
    def coords(self, h=20, w=24):
        yy, xx = np.mgrid[0:h, 0:w]
        return np.stack([yy, xx], axis=2).astype(np.float32)

    def test_aligned_window_and_flips(self, rng):
        grid = self.coords()
        for _ in range(50):
            out = crop_sample({"a": grid, "b": grid + 1000}, 8, rng)
            top, left, fv, fh = out["_window"]
            np.testing.assert_array_equal(out["b"] - 1000, out["a"])
            c = out["a"]
            corner = c[-1, -1] if (fv and fh) else c[-1, 0] if fv else c[0, -1] if fh else c[0, 0]
            assert tuple(corner) == (top, left)
            assert c[:, :, 0].min() == top and c[:, :, 1].min() == left
            assert c[:, :, 0].max() == top + 7 and c[:, :, 1].max() == left + 7

    def test_no_flips(self, rng):
        out = crop_sample({"a": self.coords()}, 8, rng, flips=False)
        assert out["_window"][2:] == (False, False)
        assert tuple(out["a"][0, 0]) == out["_window"][:2]

    def test_uniform_positions(self):
        rng = np.random.default_rng(0)
        tops = [crop_sample({"a": np.zeros((24, 24, 1))}, 8, rng)["_window"][0] for _ in range(3400)]
        counts = np.bincount(tops, minlength=17)
        assert len(counts) == 17
        assert stats.chisquare(counts).pvalue > 0.001

    def test_too_small(self, rng):
        with pytest.raises(ValueError):
            crop_sample({"a": np.zeros((4, 4, 1))}, 8, rng)

    def test_misaligned(self, rng):
        with pytest.raises(ValueError):
            crop_sample({"a": np.zeros((10, 10, 1)), "b": np.zeros((10, 12, 1))}, 8, rng)


class TestBatches:
    def test_seed_streams(self):
        a = sample_rng(1, 2, 3).random(4)
        assert np.array_equal(a, sample_rng(1, 2, 3).random(4))
        assert not np.array_equal(a, sample_rng(1, 2, 4).random(4))
        assert np.array_equal(epoch_order(0, 1, 10), epoch_order(0, 1, 10))

    def test_selfir_never_reads_clean(self, small_set):
        small_set.clean_reads = 0
        train(tiny("selfir", epochs=1), small_set)
        assert small_set.clean_reads == 0
        train(tiny("nei2nei_style", epochs=1), small_set)
        assert small_set.clean_reads == 0
        train(tiny("baseline_b", epochs=1), small_set)
        assert small_set.clean_reads > 0

    def test_plans_match_crop(self, small_set):
        batch = make_batch(small_set, [0, 1], tiny("selfir"), epoch=0)
        assert batch["blurry"].shape == (2, 3, 32, 32) and len(batch["plans"]) == 2
        assert batch["plans"][0].shape == (16, 16)
        again = make_batch(small_set, [0, 1], tiny("selfir"), epoch=0)
        assert np.array_equal(batch["noisy"].numpy(), again["noisy"].numpy())

    def test_n2n_second_draw(self, small_set):
        batch = make_batch(small_set, [0], tiny("n2n_style"), epoch=0)
        assert not np.array_equal(batch["noisy"].numpy(), batch["noisy2"].numpy())


class TestRuns:
    def test_deterministic_checkpoints(self, small_set, tmp_path):
        a = train(tiny(), small_set, out_dir=tmp_path / "a")
        b = train(tiny(), small_set, out_dir=tmp_path / "b")
        assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
        assert (tmp_path / "a" / "loss.jsonl").read_text() == (tmp_path / "b" / "loss.jsonl").read_text()

    def test_resume_reproduces_trajectory(self, small_set, tmp_path):
        full = train(tiny(epochs=4), small_set, out_dir=tmp_path / "full")
        mid = tmp_path / "full" / "checkpoints" / "epoch_0001.ckpt"
        resumed = train(tiny(epochs=4), small_set, out_dir=tmp_path / "res", resume=mid)
        assert resumed.checkpoint.read_bytes() == full.checkpoint.read_bytes()
        assert resumed.history["loss"] == full.history["loss"]

    def test_outputs(self, small_set, tmp_path):
        res = train(tiny(), small_set, out_dir=tmp_path)
        cfg = json.loads((tmp_path / "config.json").read_text())
        assert cfg["mode"] == "selfir"
        lines = [json.loads(s) for s in (tmp_path / "loss.jsonl").read_text().splitlines()]
        assert {"step", "rec", "reg", "aux", "total", "mask_fill_ratio", "lr"} <= set(lines[0])
        assert res.checkpoint.name == "final.ckpt"

    def test_non_finite_aborts(self, small_set):
        bad = PairDataset(small_set.blurry, [n * np.inf for n in small_set.noisy])
        with pytest.raises(NonFiniteLossError):
            train(tiny(), bad)

    def test_config_errors(self, small_set):
        with pytest.raises(ConfigError):
            tiny("nope")
        with pytest.raises(ConfigError):
            tiny(crop_size=30)
        no_clean = PairDataset(small_set.blurry, small_set.noisy)
        with pytest.raises(ConfigError):
            train(tiny("baseline_b"), no_clean)
        with pytest.raises(ConfigError):
            train(tiny(network=NetworkConfig(n_levels=2, base_channels=4, in_channels=1,
                                             out_channels=1)), small_set)
        with pytest.raises(ConfigError):
            train(tiny(crop_size=64), small_set)

    def test_toy_profile(self):
        cfg = TrainConfig(toy_profile=True)
        assert (cfg.crop_size, cfg.batch_size, cfg.max_steps) == (64, 8, 2000)
        assert (cfg.network.base_channels, cfg.network.n_levels) == (16, 3)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_mode_sets_variant(self):
        assert tiny("nei2nei_style").network.variant == "single"
        assert tiny("baseline_r").network.variant == "dual"


def test_smoothed():
    v = np.arange(300, dtype=float)
    s = smoothed(v, 100)
    assert len(s) == 201 and s[0] == pytest.approx(49.5)


@pytest.mark.slow
def test_toy_smoke_run_loss_decreases(toy_run):
    """Full toy profile: 100-step block means of the total loss go down."""
    run = toy_run("selfir", 0)
    totals = np.array([r["total"] for r in run.history["loss"]])
    assert len(totals) == 2000
    blocks = totals.reshape(20, 100).mean(axis=1)
    assert np.all(np.isfinite(blocks))
    assert np.all(np.diff(blocks) <= 0), blocks
