"""Per-patch detection of approximately sharp regions in the blurry image.

A patch is kept only when it is structurally close to the (denoised) short
exposure AND carries more variance than it; both comparisons are strict, so
ties are rejected.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import _kernels
from .imaging import Image, PatchGrid, center_crop

EPS_SSIM = 0.99
EPS_VAR = 1e-5
MASK_PATCH = 16


@dataclass
class MaskConfig:
    patch_size: int = MASK_PATCH
    eps_s: float = EPS_SSIM
    eps_v: float = EPS_VAR


@dataclass
class SharpMask:
    values: np.ndarray     # (n_rows, n_cols) or (N, n_rows, n_cols), uint8 in {0, 1}
    grid: PatchGrid
    eps_s: float = EPS_SSIM
    eps_v: float = EPS_VAR

    @property
    def patch_size(self):
        return self.grid.patch_size

    @property
    def fill_ratio(self):
        return float(self.values.mean()) if self.values.size else 0.0

    def expand(self):
        """Pixel-resolution mask (... , H, W) matching the grid area."""
        p = self.grid.patch_size
        return np.repeat(np.repeat(self.values, p, axis=-2), p, axis=-1)


def _to_hwc(x):
    if isinstance(x, Image):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    return x


def _patch_stats(blurry, reference, patch_size, backend=None):
    b = _to_hwc(blurry)
    r = _to_hwc(reference)
    if b.shape != r.shape:
        raise ValueError(f"shape mismatch: {b.shape} vs {r.shape}")
    grid = PatchGrid.fit(b.shape[0], b.shape[1], patch_size)
    b = center_crop(b, grid.height, grid.width).transpose(2, 0, 1)
    r = center_crop(r, grid.height, grid.width).transpose(2, 0, 1)
    ssim, var_b, var_r = _kernels.patch_stats(b, r, patch_size, backend=backend)
    return grid, ssim, var_b, var_r


def _gate(score, threshold):
    # sgn(max(0, score - threshold)); ties map to 0
    return (score - threshold > 0).astype(np.uint8)


def similarity_mask(blurry, reference, patch_size=MASK_PATCH, eps_s=EPS_SSIM):
    _, ssim, _, _ = _patch_stats(blurry, reference, patch_size)
    return _gate(ssim, eps_s)


def variance_mask(blurry, reference, patch_size=MASK_PATCH, eps_v=EPS_VAR):
    _, _, var_b, var_r = _patch_stats(blurry, reference, patch_size)
    return _gate(var_b - var_r, eps_v)


def sharp_mask(blurry, reference, patch_size=MASK_PATCH, eps_s=EPS_SSIM, eps_v=EPS_VAR):
    grid, ssim, var_b, var_r = _patch_stats(blurry, reference, patch_size)
    values = _gate(ssim, eps_s) * _gate(var_b - var_r, eps_v)
    return SharpMask(values, grid, eps_s, eps_v)


def training_mask(g1_blur, restored_nograd, cfg=None, backend=None):
    """Batched mask on sub-sampled (N, C, h, w) arrays.

    ``restored_nograd`` must come from a no-gradient pass; torch tensors are
    detached and copied to numpy, so the mask never carries a gradient.
    """
    cfg = cfg or MaskConfig()
    b = _detach(g1_blur)
    r = _detach(restored_nograd)
    if b.shape != r.shape:
        raise ValueError(f"resolution mismatch: {b.shape} vs {r.shape}")
    n, _, h, w = b.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise ValueError(f"sub-sampled size {h}x{w} is not a multiple of mask patch {p}")
    grid = PatchGrid.fit(h, w, p)
    values = np.empty((n, grid.n_rows, grid.n_cols), dtype=np.uint8)
    for i in range(n):
        ssim, var_b, var_r = _kernels.patch_stats(b[i], r[i], p, backend=backend)
        values[i] = _gate(ssim, cfg.eps_s) * _gate(var_b - var_r, cfg.eps_v)
    return SharpMask(values, grid, cfg.eps_s, cfg.eps_v)


def _detach(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def box_reference(noisy, size=3):
    """Stand-in for the pre-denoised short exposure outside of training."""
    data = _to_hwc(noisy)
    out = uniform_filter(data, size=(size, size, 1), mode="reflect")
    if isinstance(noisy, Image):
        return noisy.with_data(out.astype(np.float32))
    return out


def overlay(blurry, mask, alpha=0.35):
    """RGB visualization: sharp patches tinted green, rejected ones red, grid lines dark."""
    img = _to_hwc(blurry)
    img = center_crop(img, mask.grid.height, mask.grid.width)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    img = img[:, :, :3].copy()
    full = mask.expand().astype(bool)
    tint = np.where(full[:, :, None], np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    out = (1 - alpha) * img + alpha * tint
    p = mask.grid.patch_size
    out[::p, :, :] = 0.0
    out[:, ::p, :] = 0.0
    return np.clip(out, 0, 1)
