"""Neighbor sub-sampler: two half-resolution views built from distinct pixels
of every 2x2 cell."""
from dataclasses import dataclass

import numpy as np

from . import _kernels

# Cell positions in raster order: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1).
ORDERED_PAIRS = np.array([(a, b) for a in range(4) for b in range(4) if a != b], dtype=np.int8)
_ADJACENT = {(0, 1), (0, 2), (1, 3), (2, 3)}
ADJACENT_PAIRS = np.array([(a, b) for a, b in ORDERED_PAIRS.tolist()
                           if (min(a, b), max(a, b)) in _ADJACENT], dtype=np.int8)


@dataclass(frozen=True, eq=False)
class SubsamplePlan:
    indices: np.ndarray      # (h, w, 2) int8, distinct per cell
    seed: object = None

    @property
    def shape(self):
        return self.indices.shape[:2]


def draw_plan(h, w, rng, neighbor_only=False):
    if h % 2 or w % 2:
        raise ValueError(f"image dims must be even, got {h}x{w}")
    table = ADJACENT_PAIRS if neighbor_only else ORDERED_PAIRS
    choice = rng.integers(0, len(table), size=(h // 2, w // 2))
    seed = getattr(getattr(rng, "bit_generator", None), "seed_seq", None)
    return SubsamplePlan(np.ascontiguousarray(table[choice]), seed)


def apply(img, plan, slot, backend=None):
    """Sub-sample ``img`` with ``plan``; slot 1 -> g1, slot 2 -> g2.

    Accepts (H, W, C) images and channel-first (C, H, W) or (N, C, H, W)
    arrays; for batches ``plan`` is a sequence with one plan per sample.
    """
    if slot not in (1, 2):
        raise ValueError("slot must be 1 or 2")
    s = slot - 1
    if hasattr(img, "data") and hasattr(img, "colorspace"):
        out = _apply_chw(img.data.transpose(2, 0, 1), plan, s, backend)
        return img.with_data(np.ascontiguousarray(out.transpose(1, 2, 0)))
    arr = np.asarray(img)
    if arr.ndim == 4:
        plans = plan if isinstance(plan, (list, tuple)) else [plan] * arr.shape[0]
        if len(plans) != arr.shape[0]:
            raise ValueError("need one plan per batch sample")
        return np.stack([_apply_chw(x, p, s, backend) for x, p in zip(arr, plans)])
    if arr.ndim == 3:
        return _apply_chw(arr, plan, s, backend)
    raise ValueError(f"unsupported array rank {arr.ndim}")


def _apply_chw(x, plan, s, backend):
    h, w = plan.shape
    if x.shape[1] != 2 * h or x.shape[2] != 2 * w:
        raise ValueError(f"image {x.shape[1]}x{x.shape[2]} does not match plan cells {h}x{w}")
    return _kernels.gather_cells(x, plan.indices, s, backend=backend)


def source_coords(plan, slot):
    """(row, col) of the full-resolution pixel read for every output pixel."""
    idx = plan.indices[:, :, slot - 1].astype(np.intp)
    h, w = plan.shape
    rows = 2 * np.arange(h)[:, None] + idx // 2
    cols = 2 * np.arange(w)[None, :] + idx % 2
    return rows, cols
