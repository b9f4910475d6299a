"""Co-learning objective: reconstruction, stop-gradient regularization and the
masked auxiliary term, plus the plain l2 loss used by supervised baselines."""
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch

from . import sampler
from .model import forward_nograd
from .sharpmask import MaskConfig, SharpMask, training_mask


@dataclass
class LossWeights:
    lambda_reg: float = 2.0
    lambda_aux: float = 2.0

    def __post_init__(self):
        if self.lambda_reg < 0 or self.lambda_aux < 0:
            raise ValueError("loss weights must be non-negative")


SRGB_WEIGHTS = LossWeights(lambda_reg=2.0, lambda_aux=2.0)
RAW_WEIGHTS = LossWeights(lambda_reg=4.0, lambda_aux=2.0)


@dataclass
class LossConfig:
    mask: MaskConfig = None
    sum_reduction: bool = False
    use_aux: bool = True

    def __post_init__(self):
        if self.mask is None:
            self.mask = MaskConfig()
        elif isinstance(self.mask, dict):
            self.mask = MaskConfig(**self.mask)


@dataclass
class LossReport:
    rec: float
    reg: float
    aux: float
    total: float
    mask_fill_ratio: float

    def to_dict(self):
        return asdict(self)


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_rec(pred, target):
    _check(pred, target)
    return torch.mean((pred - target) ** 2)


def loss_supervised(pred, target):
    _check(pred, target)
    return torch.mean((pred - target) ** 2)


def loss_reg(pred, target, g1_full_nograd, g2_full_nograd):
    _check(pred, target)
    _check(pred, g1_full_nograd)
    _check(pred, g2_full_nograd)
    frozen = (g1_full_nograd - g2_full_nograd).detach()
    return torch.mean(((pred - target) - frozen) ** 2)


def loss_aux(pred, g1_blur, mask, sum_reduction=False):
    """Masked per-patch squared error against the sub-sampled blurry image.

    Default: mean patch MSE over selected patches (0 when none are selected).
    ``sum_reduction`` gives the un-normalized sum of squared errors.
    """
    _check(pred, g1_blur)
    values = mask.values if isinstance(mask, SharpMask) else np.asarray(mask)
    p = mask.grid.patch_size if isinstance(mask, SharpMask) else pred.shape[-1] // values.shape[-1]
    n, c, h, w = pred.shape
    if values.ndim == 2:
        values = np.broadcast_to(values, (n,) + values.shape)
    nr, nc = values.shape[1:]
    if nr * p != h or nc * p != w:
        raise ValueError(f"mask grid {nr}x{nc}x{p} does not tile {h}x{w}")
    m = torch.as_tensor(np.ascontiguousarray(values), dtype=pred.dtype, device=pred.device)
    sq = ((pred - g1_blur.detach()) ** 2).reshape(n, c, nr, p, nc, p)
    if sum_reduction:
        return torch.sum(m * sq.sum(dim=(1, 3, 5)))
    patch_mse = sq.mean(dim=(1, 3, 5))
    return torch.sum(m * patch_mse) / max(1.0, float(values.sum()))


# --------------------------------------------------------------------------
# full objective


@dataclass
class Frozen:
    """Terms computed by no-gradient passes at the current parameters."""

    g1_full: torch.Tensor
    g2_full: torch.Tensor
    mask: Optional[SharpMask]


def _sub(x, plans, slot):
    arr = sampler.apply(x.detach().cpu().numpy(), plans, slot)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype=x.dtype, device=x.device)


def _net_inputs(net, blurry, noisy):
    return (blurry, noisy) if net.cfg.variant == "dual" else (noisy, None)


def subsample_batch(blurry, noisy, plans):
    """g1(I_B), g1(I_N), g2(I_N) under one shared plan per sample."""
    g1_b = _sub(blurry, plans, 1) if blurry is not None else None
    return g1_b, _sub(noisy, plans, 1), _sub(noisy, plans, 2)


def frozen_terms(net, blurry, noisy, plans, cfg=None, need_mask=True):
    cfg = cfg or LossConfig()
    full = forward_nograd(net, *_net_inputs(net, blurry, noisy))
    g1_full = _sub(full, plans, 1)
    g2_full = _sub(full, plans, 2)
    mask = None
    if need_mask:
        if blurry is None:
            raise ValueError("the auxiliary mask needs the blurry image")
        g1_b, g1_n, _ = subsample_batch(blurry, noisy, plans)
        restored = forward_nograd(net, *_net_inputs(net, g1_b, g1_n))
        mask = training_mask(g1_b, restored, cfg.mask)
    return Frozen(g1_full, g2_full, mask)


def objective(net, blurry, noisy, plans, frozen, weights, cfg=None):
    """Differentiable total given precomputed frozen terms."""
    cfg = cfg or LossConfig()
    g1_b, g1_n, g2_n = subsample_batch(blurry, noisy, plans)
    pred = net(*_net_inputs(net, g1_b, g1_n))
    rec = loss_rec(pred, g2_n)
    reg = loss_reg(pred, g2_n, frozen.g1_full, frozen.g2_full)
    if frozen.mask is not None and weights.lambda_aux > 0:
        aux = loss_aux(pred, g1_b, frozen.mask, cfg.sum_reduction)
    else:
        aux = pred.new_zeros(())
    total = rec + weights.lambda_reg * reg + weights.lambda_aux * aux
    fill = frozen.mask.fill_ratio if frozen.mask is not None else 0.0
    report = LossReport(rec.item(), reg.item(), aux.item(), total.item(), fill)
    return total, report


def total_loss(net, blurry, noisy, plans, weights, cfg=None):
    """One co-learning step's loss: shared plans, frozen passes, then the objective.

    ``blurry`` may be None for the single-input (noisy-only) denoiser; the
    auxiliary term then needs a blurry image and is skipped when absent.
    """
    cfg = cfg or LossConfig()
    need_mask = cfg.use_aux and weights.lambda_aux > 0 and blurry is not None
    frozen = frozen_terms(net, blurry, noisy, plans, cfg, need_mask=need_mask)
    return objective(net, blurry, noisy, plans, frozen, weights, cfg)
