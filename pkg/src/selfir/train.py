"""Co-learning training loop and supervised / self-supervised baselines."""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import sampler
from .losses import LossConfig, LossReport, LossWeights, loss_supervised, total_loss
from .model import NetworkConfig, build, load_checkpoint, save_checkpoint
from .noise import add_noise
from .imaging import Image

log = logging.getLogger(__name__)

MODES = ("selfir", "baseline_b", "baseline_n", "baseline_r", "n2n_style", "nei2nei_style",
         "deblur_noisy_sup")
SELF_SUPERVISED = ("selfir", "nei2nei_style")
# which images the network sees at train and test time
MODE_INPUTS = {
    "selfir": "dual",
    "baseline_r": "dual",
    "baseline_b": "blurry",
    "deblur_noisy_sup": "blurry",
    "baseline_n": "noisy",
    "n2n_style": "noisy",
    "nei2nei_style": "noisy",
}


class NonFiniteLossError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    crop_size: int = 128
    epochs: int = 200
    lr0: float = 3e-4
    lr_halving_period: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    seed: int = 0
    mode: str = "selfir"
    toy_profile: bool = False
    max_steps: int = 0              # 0 -> run all epochs
    steps_per_epoch: int = 0        # 0 -> len(dataset) // batch_size
    flips: bool = True
    neighbor_only: bool = False
    nei2nei_aux: bool = False       # add the masked blurry term to the noisy-only denoiser
    checkpoint_every: int = 50      # epochs
    log_every: int = 10             # steps
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.network, dict):
            self.network = NetworkConfig(**self.network)
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.toy_profile:
            self.apply_toy_profile()
        if self.crop_size % 4:
            raise ConfigError("crop_size must be divisible by 4")
        if self.batch_size < 1 or self.epochs < 1 or self.lr_halving_period < 1:
            raise ConfigError("batch_size, epochs and lr_halving_period must be positive")
        variant = "dual" if MODE_INPUTS[self.mode] == "dual" else "single"
        if self.network.variant != variant:
            self.network = NetworkConfig(**{**self.network.to_dict(), "variant": variant})

    def apply_toy_profile(self):
        self.crop_size = 64
        self.batch_size = 8
        self.network = NetworkConfig(**{**self.network.to_dict(), "base_channels": 16, "n_levels": 3})
        if not self.max_steps:
            self.max_steps = 2000
        self.toy_profile = False   # applied; keep snapshots idempotent

    def to_dict(self):
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_at_epoch(epoch, lr0=3e-4, period=50):
    return lr0 * 0.5 ** (epoch // period)


@dataclass
class TrainResult:
    net: torch.nn.Module
    checkpoint: Path
    history: dict


# --------------------------------------------------------------------------
# batches


def crop_sample(arrays, crop_size, rng, flips=True):
    """Identical random crop window and flips for every array in ``arrays`` (HWC)."""
    ref = next(iter(arrays.values()))
    h, w = ref.shape[:2]
    if h < crop_size or w < crop_size:
        raise ValueError(f"image {h}x{w} smaller than crop {crop_size}")
    for a in arrays.values():
        if a.shape[:2] != (h, w):
            raise ValueError("arrays are not aligned")
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    flip_v = bool(rng.integers(2)) if flips else False
    flip_h = bool(rng.integers(2)) if flips else False
    out = {}
    for key, a in arrays.items():
        c = a[top:top + crop_size, left:left + crop_size]
        if flip_v:
            c = c[::-1]
        if flip_h:
            c = c[:, ::-1]
        out[key] = np.ascontiguousarray(c)
    out["_window"] = (top, left, flip_v, flip_h)
    return out


def crop_batch(pair, crop_size, rng, flips=True):
    """Aligned crop of a CapturePair (clean included when present)."""
    arrays = {"blurry": pair.blurry.data, "noisy": pair.noisy.data}
    if pair.clean is not None:
        arrays["clean"] = pair.clean.data
    return crop_sample(arrays, crop_size, rng, flips)


def _needs(mode):
    """Dataset fields read by a training mode."""
    return {
        "selfir": ("blurry", "noisy"),
        "nei2nei_style": ("noisy",),
        "baseline_b": ("blurry", "clean"),
        "baseline_n": ("noisy", "clean"),
        "baseline_r": ("blurry", "noisy", "clean"),
        "n2n_style": ("noisy", "clean"),
        "deblur_noisy_sup": ("blurry", "noisy"),
    }[mode]


def sample_rng(seed, epoch, sample_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0, int(sample_id)]))


def epoch_order(seed, epoch, n):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 1])).permutation(n)


def _second_noisy(clean, params, rng, space):
    # independent realization for the noise2noise-style target
    if params is None:
        raise ConfigError("n2n_style needs per-image noise parameters")
    return add_noise(Image(clean, space), params, rng, clamp=False).data


def _nei2nei_aux(cfg):
    return cfg.mode == "nei2nei_style" and cfg.nei2nei_aux and cfg.loss.use_aux and cfg.weights.lambda_aux > 0


def make_batch(dataset, ids, cfg, epoch):
    keys = _needs(cfg.mode)
    if _nei2nei_aux(cfg):
        keys = keys + ("blurry",)
    fields = {k: [] for k in keys}
    plans = []
    second = []
    for i in ids:
        rng = sample_rng(cfg.seed, epoch, dataset.ids[i])
        arrays = {}
        for k in keys:
            arrays[k] = dataset.clean(i) if k == "clean" else getattr(dataset, k)[i]
        crop = crop_sample(arrays, cfg.crop_size, rng, cfg.flips)
        for k in keys:
            fields[k].append(crop[k])
        if cfg.mode in SELF_SUPERVISED:
            plans.append(sampler.draw_plan(cfg.crop_size, cfg.crop_size, rng, cfg.neighbor_only))
        if cfg.mode == "n2n_style":
            second.append(_second_noisy(crop["clean"], dataset.noise[i], rng, dataset.space))
    dtype = next(iter(fields.values()))[0].dtype
    out = {k: torch.from_numpy(np.stack(v).transpose(0, 3, 1, 2).copy()) for k, v in fields.items()}
    if second:
        out["noisy2"] = torch.from_numpy(np.stack(second).astype(dtype).transpose(0, 3, 1, 2).copy())
    out["plans"] = plans
    return out


def step_loss(net, batch, cfg):
    mode = cfg.mode
    if mode == "selfir":
        return total_loss(net, batch["blurry"], batch["noisy"], batch["plans"], cfg.weights, cfg.loss)
    if mode == "nei2nei_style":
        blurry = batch.get("blurry") if _nei2nei_aux(cfg) else None
        return total_loss(net, blurry, batch["noisy"], batch["plans"], cfg.weights, cfg.loss)
    if mode == "baseline_b":
        pred, target = net(batch["blurry"]), batch["clean"]
    elif mode == "deblur_noisy_sup":
        pred, target = net(batch["blurry"]), batch["noisy"]
    elif mode == "baseline_n":
        pred, target = net(batch["noisy"]), batch["clean"]
    elif mode == "n2n_style":
        pred, target = net(batch["noisy"]), batch["noisy2"]
    elif mode == "baseline_r":
        pred, target = net(batch["blurry"], batch["noisy"]), batch["clean"]
    else:
        raise ConfigError(mode)
    loss = loss_supervised(pred, target)
    v = loss.item()
    return loss, LossReport(v, 0.0, 0.0, v, 0.0)


# --------------------------------------------------------------------------
# loop


def set_deterministic(flag):
    torch.use_deterministic_algorithms(bool(flag))
    if flag:
        torch.set_num_threads(1)


def _validate(cfg, dataset):
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    needs = _needs(cfg.mode)
    if "clean" in needs and not dataset.has_clean:
        raise ConfigError(f"mode {cfg.mode} needs clean targets")
    c = dataset.channels
    if cfg.network.in_channels != c or cfg.network.out_channels != c:
        raise ConfigError(f"network channels ({cfg.network.in_channels}) do not match data ({c})")
    h, w = dataset.blurry[0].shape[:2]
    if min(h, w) < cfg.crop_size:
        raise ConfigError(f"images {h}x{w} smaller than crop {cfg.crop_size}")
    sub = cfg.crop_size // 2 if cfg.mode in SELF_SUPERVISED else cfg.crop_size
    if sub % cfg.network.divisor:
        raise ConfigError(f"training resolution {sub} not divisible by {cfg.network.divisor}")
    if cfg.crop_size % cfg.network.divisor:
        raise ConfigError(f"crop {cfg.crop_size} not divisible by {cfg.network.divisor}")
    if (cfg.mode == "selfir" or _nei2nei_aux(cfg)) and cfg.loss.use_aux and cfg.weights.lambda_aux > 0:
        if sub % cfg.loss.mask.patch_size:
            raise ConfigError(f"sub-sampled crop {sub} not a multiple of mask patch {cfg.loss.mask.patch_size}")


def train(cfg, dataset, out_dir=None, resume=None, on_step=None):
    """Train per ``cfg``; returns the network, the last checkpoint path and history.

    History holds per-epoch learning rates and per-step loss reports. Every
    random draw depends only on (seed, epoch, sample id), so resuming from a
    checkpoint reproduces the uninterrupted trajectory.
    """
    _validate(cfg, dataset)
    set_deterministic(cfg.deterministic)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))

    net = build(cfg.network, seed=cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2))
    start_epoch, step = 0, 0
    history = {"lr": [], "loss": []}
    if resume is not None:
        ckpt = load_checkpoint(resume, expected=cfg.network)
        net.load_state_dict(ckpt.state_dict)
        if ckpt.optimizer_state is not None:
            opt.load_state_dict(ckpt.optimizer_state)
        start_epoch = ckpt.epoch + 1
        step = int(ckpt.meta.get("step", 0))
        history = ckpt.meta.get("history", history)

    steps_per_epoch = cfg.steps_per_epoch or max(1, len(dataset) // cfg.batch_size)
    log_fh = open(out_dir / "loss.jsonl", "a") if out_dir is not None else None
    ckpt_path = None
    t0 = time.time()
    net.train()
    try:
        epoch = start_epoch
        done = cfg.max_steps and step >= cfg.max_steps
        while epoch < cfg.epochs and not done:
            lr = lr_at_epoch(epoch, cfg.lr0, cfg.lr_halving_period)
            for g in opt.param_groups:
                g["lr"] = lr
            history["lr"].append({"epoch": epoch, "lr": lr})
            order = epoch_order(cfg.seed, epoch, len(dataset))
            for b in range(steps_per_epoch):
                ids = [order[(b * cfg.batch_size + k) % len(dataset)] for k in range(cfg.batch_size)]
                batch = make_batch(dataset, ids, cfg, epoch)
                loss, report = step_loss(net, batch, cfg)
                if not math.isfinite(report.total):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} step {step}: {report.to_dict()}; "
                        "check the noise model configuration and input ranges")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                step += 1
                rec = {"step": step, "epoch": epoch, **report.to_dict(), "lr": lr}
                history["loss"].append(rec)
                if log_fh is not None and (step % cfg.log_every == 0 or step == 1):
                    log_fh.write(json.dumps(rec) + "\n")
                if on_step is not None:
                    on_step(rec)
                if cfg.max_steps and step >= cfg.max_steps:
                    done = True
                    break
            last_epoch = epoch
            if out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0):
                ckpt_path = _save(out_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt",
                                  net, opt, epoch, step, cfg, history)
            epoch += 1
        if out_dir is not None:
            ckpt_path = _save(out_dir / "checkpoints" / "final.ckpt", net, opt,
                              last_epoch if epoch > start_epoch else start_epoch - 1,
                              step, cfg, history)
    finally:
        if log_fh is not None:
            log_fh.close()
    log.info("trained %s for %d steps in %.1fs", cfg.mode, step, time.time() - t0)
    net.eval()
    return TrainResult(net, ckpt_path, history)


def _save(path, net, opt, epoch, step, cfg, history):
    extra = {"step": step, "mode": cfg.mode, "inputs": MODE_INPUTS[cfg.mode],
             "train_config": cfg.to_dict(), "history": history}
    return save_checkpoint(path, net, opt, epoch, extra)


def smoothed(values, window=100):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")
