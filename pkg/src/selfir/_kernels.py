"""Inner-loop kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and ``SELFIR_DISABLE_NUMBA``
is unset (or "0"). Both paths take and return float64/float32 numpy arrays in
channel-first layout and must agree to floating-point round-off.
"""
import os

import numpy as np

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _numba_requested():
    return os.environ.get("SELFIR_DISABLE_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by SELFIR_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# numpy reference path


def gather_cells_numpy(img, plan, slot):
    """img (C, H, W), plan (H/2, W/2, 2) int -> (C, H/2, W/2)."""
    idx = plan[:, :, slot].astype(np.intp)
    h, w = idx.shape
    rows = 2 * np.arange(h)[:, None] + idx // 2
    cols = 2 * np.arange(w)[None, :] + idx % 2
    return img[:, rows, cols]


def patch_stats_numpy(a, b, patch):
    """Per-patch SSIM and variances of two (C, H, W) arrays.

    Returns (ssim, var_a, var_b), each (H // patch, W // patch), averaged
    over channels. H and W must already be multiples of ``patch``.
    """
    c, h, w = a.shape
    nr, nc = h // patch, w // patch
    a = a.astype(np.float64).reshape(c, nr, patch, nc, patch)
    b = b.astype(np.float64).reshape(c, nr, patch, nc, patch)
    mu_a = a.mean(axis=(2, 4), keepdims=True)
    mu_b = b.mean(axis=(2, 4), keepdims=True)
    da = a - mu_a
    db = b - mu_b
    var_a = (da * da).mean(axis=(2, 4))
    var_b = (db * db).mean(axis=(2, 4))
    cov = (da * db).mean(axis=(2, 4))
    mu_a = mu_a[:, :, 0, :, 0]
    mu_b = mu_b[:, :, 0, :, 0]
    ssim = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
    return ssim.mean(axis=0), var_a.mean(axis=0), var_b.mean(axis=0)


def frame_mean_numpy(frames):
    """frames (T, H, W, C) -> (H, W, C) arithmetic mean in float64."""
    return frames.astype(np.float64).mean(axis=0)


# --------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _gather_cells_nb(img, plan, slot):
        c, hh, ww = img.shape
        h = hh // 2
        w = ww // 2
        out = np.empty((c, h, w), dtype=img.dtype)
        for i in range(h):
            for j in range(w):
                k = plan[i, j, slot]
                r = 2 * i + k // 2
                q = 2 * j + k % 2
                for ch in range(c):
                    out[ch, i, j] = img[ch, r, q]
        return out

    @njit(cache=True)
    def _patch_stats_nb(a, b, patch):
        c, h, w = a.shape
        nr = h // patch
        nc = w // patch
        n = patch * patch
        ssim = np.zeros((nr, nc))
        var_a = np.zeros((nr, nc))
        var_b = np.zeros((nr, nc))
        for pr in range(nr):
            for pc in range(nc):
                r0 = pr * patch
                c0 = pc * patch
                for ch in range(c):
                    sa = 0.0
                    sb = 0.0
                    for i in range(patch):
                        for j in range(patch):
                            sa += a[ch, r0 + i, c0 + j]
                            sb += b[ch, r0 + i, c0 + j]
                    ma = sa / n
                    mb = sb / n
                    vaa = 0.0
                    vbb = 0.0
                    vab = 0.0
                    for i in range(patch):
                        for j in range(patch):
                            xa = a[ch, r0 + i, c0 + j] - ma
                            xb = b[ch, r0 + i, c0 + j] - mb
                            vaa += xa * xa
                            vbb += xb * xb
                            vab += xa * xb
                    vaa /= n
                    vbb /= n
                    vab /= n
                    s = ((2.0 * ma * mb + SSIM_C1) * (2.0 * vab + SSIM_C2)) / (
                        (ma * ma + mb * mb + SSIM_C1) * (vaa + vbb + SSIM_C2))
                    ssim[pr, pc] += s / c
                    var_a[pr, pc] += vaa / c
                    var_b[pr, pc] += vbb / c
        return ssim, var_a, var_b

    @njit(cache=True)
    def _frame_mean_nb(frames):
        t = frames.shape[0]
        flat = frames.reshape(t, -1)
        n = flat.shape[1]
        out = np.zeros(n)
        for k in range(t):
            for p in range(n):
                out[p] += flat[k, p]
        return (out / t).reshape(frames.shape[1:])


def gather_cells(img, plan, slot, backend=None):
    if _use_numba(backend):
        return _gather_cells_nb(np.ascontiguousarray(img), np.ascontiguousarray(plan), slot)
    return gather_cells_numpy(img, plan, slot)


def patch_stats(a, b, patch, backend=None):
    if _use_numba(backend):
        a = np.ascontiguousarray(a, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        return _patch_stats_nb(a, b, patch)
    return patch_stats_numpy(a, b, patch)


def frame_mean(frames, backend=None):
    if _use_numba(backend):
        return _frame_mean_nb(np.ascontiguousarray(frames))
    return frame_mean_numpy(frames)


def _use_numba(backend):
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but unavailable")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")


def active_backend():
    return "numba" if HAVE_NUMBA else "numpy"
