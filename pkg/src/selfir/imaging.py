"""Image containers, patch arithmetic, metrics and file I/O."""
import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import _kernels

PSNR_CAP = 99.0
SIRT_MAGIC = b"SIRT"
SIRT_VERSION = 1
SIRT_DTYPES = {0: np.dtype("<f4")}


class ImageIOError(ValueError):
    pass


class ColorSpace(str, enum.Enum):
    SRGB = "srgb"
    LINEAR = "linear"


class BitOrigin(str, enum.Enum):
    F32 = "f32"
    U8 = "u8"
    U16 = "u16"


@dataclass
class Image:
    """H x W x C float image tagged with its color space."""

    data: np.ndarray
    colorspace: ColorSpace = ColorSpace.SRGB
    bit_origin: BitOrigin = BitOrigin.F32

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"image data must be H x W x C, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        self.data = data
        self.colorspace = ColorSpace(self.colorspace)
        self.bit_origin = BitOrigin(self.bit_origin)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data, colorspace=None):
        return Image(data, colorspace or self.colorspace, self.bit_origin)


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    n_rows: int
    n_cols: int

    @property
    def n_patches(self):
        return self.n_rows * self.n_cols

    @property
    def height(self):
        return self.n_rows * self.patch_size

    @property
    def width(self):
        return self.n_cols * self.patch_size

    @classmethod
    def fit(cls, height, width, patch_size):
        if patch_size < 4:
            raise ValueError("patch_size must be >= 4")
        if patch_size > height or patch_size > width:
            raise ValueError(f"patch_size {patch_size} larger than image {height}x{width}")
        return cls(patch_size, height // patch_size, width // patch_size)


def _array(x):
    return x.data if isinstance(x, Image) else np.asarray(x)


def center_crop(arr, height, width):
    h, w = arr.shape[:2]
    if height > h or width > w:
        raise ValueError(f"cannot crop {h}x{w} to {height}x{width}")
    top = (h - height) // 2
    left = (w - width) // 2
    return arr[top:top + height, left:left + width]


def crop_even(arr):
    h, w = arr.shape[:2]
    return center_crop(arr, h - h % 2, w - w % 2)


# --------------------------------------------------------------------------
# binary tensor container


def write_sirt(path_or_file, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = SIRT_MAGIC + struct.pack("<III", SIRT_VERSION, 0, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = header + arr.tobytes(order="C")
    if hasattr(path_or_file, "write"):
        path_or_file.write(payload)
    else:
        Path(path_or_file).write_bytes(payload)


def decode_sirt(buf):
    if len(buf) < 16 or buf[:4] != SIRT_MAGIC:
        raise ImageIOError("not a SIRT container (bad magic)")
    version, dtype_code, ndim = struct.unpack_from("<III", buf, 4)
    if version != SIRT_VERSION:
        raise ImageIOError(f"unsupported SIRT version {version}")
    if dtype_code not in SIRT_DTYPES:
        raise ImageIOError(f"unsupported SIRT dtype code {dtype_code}")
    offset = 16 + 4 * ndim
    if len(buf) < offset:
        raise ImageIOError("truncated SIRT header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 16)
    dtype = SIRT_DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != offset + count * dtype.itemsize:
        raise ImageIOError("SIRT payload size does not match header")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims).astype(np.float32)


def read_sirt(path):
    return decode_sirt(Path(path).read_bytes())


# --------------------------------------------------------------------------
# image files


def load_image(path, colorspace=ColorSpace.SRGB):
    """Load a PNG (8/16-bit) or .sirt file as an even-sized [0,1] Image."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"no such file: {path}")
    if path.suffix.lower() == ".sirt":
        data = read_sirt(path)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ImageIOError(f"expected a rank-2 or rank-3 tensor in {path}, got rank {data.ndim}")
        origin = BitOrigin.F32
    else:
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ImageIOError(f"unreadable image: {path}")
        if raw.dtype == np.uint8:
            scale, origin = 255.0, BitOrigin.U8
        elif raw.dtype == np.uint16:
            scale, origin = 65535.0, BitOrigin.U16
        else:
            raise ImageIOError(f"unsupported bit depth {raw.dtype} in {path}")
        if raw.ndim == 2:
            raw = raw[:, :, None]
        elif raw.shape[2] == 4:
            raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
        else:
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        data = (raw.astype(np.float64) / scale).astype(np.float32)
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ImageIOError(f"zero-sized image: {path}")
    data = crop_even(data)
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ImageIOError(f"image too small after even crop: {path}")
    return Image(np.ascontiguousarray(data), colorspace, origin)


def save_image(img, path, bits=8):
    """PNG output is clamped and quantized; .sirt keeps float32 values as-is."""
    path = Path(path)
    data = _array(img)
    if data.ndim == 2:
        data = data[:, :, None]
    if path.suffix.lower() == ".sirt":
        write_sirt(path, data)
        return path
    if bits == 8:
        dtype, peak = np.uint8, 255.0
    elif bits == 16:
        dtype, peak = np.uint16, 65535.0
    else:
        raise ValueError("bits must be 8 or 16")
    q = np.rint(np.clip(data, 0.0, 1.0) * peak).astype(dtype)
    if q.shape[2] == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    elif q.shape[2] == 1:
        q = q[:, :, 0]
    else:
        raise ValueError(f"PNG output needs 1 or 3 channels, got {q.shape[2]}")
    if not cv2.imwrite(str(path), q):
        raise ImageIOError(f"failed to write {path}")
    return path


# --------------------------------------------------------------------------
# patches


def split_patches(img, patch_size):
    data = _array(img)
    if data.ndim == 2:
        data = data[:, :, None]
    grid = PatchGrid.fit(data.shape[0], data.shape[1], patch_size)
    data = center_crop(data, grid.height, grid.width)
    p = patch_size
    patches = [data[r * p:(r + 1) * p, c * p:(c + 1) * p].copy()
               for r in range(grid.n_rows) for c in range(grid.n_cols)]
    return patches, grid


def assemble_patches(patches, grid):
    if len(patches) != grid.n_patches:
        raise ValueError(f"expected {grid.n_patches} patches, got {len(patches)}")
    rows = [np.concatenate(patches[r * grid.n_cols:(r + 1) * grid.n_cols], axis=1)
            for r in range(grid.n_rows)]
    return np.concatenate(rows, axis=0)


# --------------------------------------------------------------------------
# metrics


def psnr(a, b, peak=1.0):
    a = np.asarray(_array(a), dtype=np.float64)
    b = np.asarray(_array(b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak ** 2 / mse))


def ssim_global(a, b):
    """Single-window SSIM over a whole patch, averaged over channels."""
    a = np.asarray(_array(a), dtype=np.float64)
    b = np.asarray(_array(b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    axes = (0, 1)
    mu_a = a.mean(axis=axes)
    mu_b = b.mean(axis=axes)
    var_a = ((a - mu_a) ** 2).mean(axis=axes)
    var_b = ((b - mu_b) ** 2).mean(axis=axes)
    cov = ((a - mu_a) * (b - mu_b)).mean(axis=axes)
    c1, c2 = _kernels.SSIM_C1, _kernels.SSIM_C2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


def ssim_tiled(a, b, tile=16):
    """Mean of ssim_global over non-overlapping tiles (reporting metric)."""
    a = _array(a)
    b = _array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    grid = PatchGrid.fit(a.shape[0], a.shape[1], tile)
    a = center_crop(a, grid.height, grid.width).transpose(2, 0, 1)
    b = center_crop(b, grid.height, grid.width).transpose(2, 0, 1)
    s, _, _ = _kernels.patch_stats(a, b, tile)
    return float(s.mean())
