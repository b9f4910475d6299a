"""Synthetic sharp bursts, frame-averaging blur and blurry/noisy pair assembly."""
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np

from . import _kernels
from .imaging import ColorSpace, Image
from .noise import Gaussian, IspParams, Poisson, Sensor, add_noise, unprocess

OBJECT_KINDS = ("rect", "ellipse", "strokes")
MAX_DISPLACEMENT_FRACTION = 0.25
MAX_NB_SIGMA = 2.0 / 255.0


@dataclass
class SceneObject:
    kind: str
    center: tuple          # (x, y) at frame 0, pixels
    size: tuple            # (width, height), pixels
    velocity: tuple        # (dx, dy) pixels / frame
    color: tuple = (0.8, 0.3, 0.2)
    texture_seed: int = 0
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")


@dataclass
class SceneSpec:
    canvas_size: tuple                       # (height, width)
    objects: list = field(default_factory=list)
    background: str = "texture"              # "texture" | "flat"
    background_seed: int = 0
    background_level: float = 0.5
    shake_amplitude: float = 0.0             # random-walk step std, pixels / frame
    channels: int = 3

    def validate(self, n_frames):
        h, w = self.canvas_size
        if h < 8 or w < 8 or self.channels < 1:
            raise ValueError(f"degenerate canvas {self.canvas_size}")
        limit = MAX_DISPLACEMENT_FRACTION * w
        for obj in self.objects:
            disp = np.hypot(*obj.velocity) * (n_frames - 1)
            if disp > limit + 1e-9:
                raise ValueError(f"object displacement {disp:.1f}px exceeds {limit:.1f}px over the burst")


@dataclass
class Burst:
    frames: list
    frame_interval: float = 1.0

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a burst needs at least 2 frames")
        ref = self.frames[0]
        for f in self.frames[1:]:
            if f.shape != ref.shape or f.colorspace != ref.colorspace:
                raise ValueError("burst frames differ in shape or colorspace")

    @property
    def reference_index(self):
        return len(self.frames) // 2

    @property
    def reference(self):
        return self.frames[self.reference_index]

    def stack(self):
        return np.stack([f.data for f in self.frames])


@dataclass
class CapturePair:
    blurry: Image
    noisy: Image
    clean: Optional[Image] = None
    noise: object = None
    space: ColorSpace = ColorSpace.SRGB
    isp: Optional[IspParams] = None


# --------------------------------------------------------------------------
# rendering


def _background(spec, height, width):
    c = spec.channels
    if spec.background == "flat":
        return np.full((height, width, c), spec.background_level)
    rng = np.random.default_rng(spec.background_seed)
    img = np.zeros((height, width, c))
    # multi-scale smoothed noise plus a few oriented gratings
    for scale in (2.0, 5.0, 12.0):
        layer = rng.random((height, width, c))
        layer = cv2.GaussianBlur(layer, (0, 0), scale)
        layer = (layer - layer.mean()) / (layer.std() + 1e-8)
        img += layer * (0.12 / np.sqrt(scale))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(2):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.08, 0.5)
        amp = rng.uniform(0.03, 0.1)
        wave = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))
        img += amp * wave[:, :, None] * rng.uniform(0.5, 1.0, size=c)
    img += rng.uniform(0.3, 0.7, size=c)
    return np.clip(img, 0.02, 0.98)


def _coverage(obj, center, height, width, ss=2):
    """Anti-aliased occupancy of ``obj`` centered at ``center`` (x, y).

    Returns (coverage, u, v, (row_slice, col_slice)) restricted to the
    object's bounding box; u, v are object-frame coordinates.
    """
    r = 0.5 * np.hypot(*obj.size) + 2
    y0, y1 = max(0, int(np.floor(center[1] - r))), min(height, int(np.ceil(center[1] + r)) + 1)
    x0, x1 = max(0, int(np.floor(center[0] - r))), min(width, int(np.ceil(center[0] + r)) + 1)
    box = (slice(y0, max(y0, y1)), slice(x0, max(x0, x1)))
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    yy = np.arange(y0, max(y0, y1))[:, None, None, None] + offs[None, None, :, None]
    xx = np.arange(x0, max(x0, x1))[None, :, None, None] + offs[None, None, None, :]
    dx = xx - center[0]
    dy = yy - center[1]
    ca, sa = np.cos(obj.angle), np.sin(obj.angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    hw, hh = obj.size[0] / 2.0, obj.size[1] / 2.0
    if obj.kind == "rect":
        inside = (np.abs(u) <= hw) & (np.abs(v) <= hh)
    elif obj.kind == "ellipse":
        inside = (u / hw) ** 2 + (v / hh) ** 2 <= 1.0
    else:
        # glyph-like strokes: a few thick segments inside the object box
        rng = np.random.default_rng(obj.texture_seed + 7919)
        inside = np.zeros(u.shape, dtype=bool)
        thick = max(1.0, 0.12 * min(obj.size))
        for _ in range(3):
            p = rng.uniform(-1, 1, size=2) * (hw, hh)
            q = rng.uniform(-1, 1, size=2) * (hw, hh)
            d = q - p
            t = np.clip(((u - p[0]) * d[0] + (v - p[1]) * d[1]) / (d @ d + 1e-9), 0, 1)
            dist = np.hypot(u - p[0] - t * d[0], v - p[1] - t * d[1])
            inside |= dist <= thick / 2
    return inside.mean(axis=(2, 3)), u.mean(axis=(2, 3)), v.mean(axis=(2, 3)), box


def _object_texture(obj, u, v, channels):
    rng = np.random.default_rng(obj.texture_seed)
    color = np.resize(np.asarray(obj.color, dtype=np.float64), channels)
    f1, f2 = rng.uniform(0.3, 1.2, size=2)
    pattern = 0.5 + 0.5 * np.sin(f1 * u) * np.cos(f2 * v)
    contrast = rng.uniform(0.15, 0.35)
    return np.clip(color[None, None, :] * (1 - contrast + contrast * pattern[:, :, None]), 0, 1)


def _shake_trajectory(spec, n_frames, rng):
    if spec.shake_amplitude <= 0:
        return np.zeros((n_frames, 2))
    steps = rng.normal(0.0, spec.shake_amplitude, size=(n_frames, 2))
    steps[0] = 0.0
    path = np.cumsum(steps, axis=0)
    return path - path[n_frames // 2]


def render_burst(spec, n_frames, rng):
    """Render ``n_frames`` sharp frames; frame n_frames // 2 is the latent clean image."""
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    spec.validate(n_frames)
    h, w = spec.canvas_size
    shake = _shake_trajectory(spec, n_frames, rng)
    margin = int(np.ceil(np.abs(shake).max())) + 2 if spec.shake_amplitude > 0 else 0
    H, W = h + 2 * margin, w + 2 * margin
    bg = _background(spec, H, W)
    frames = []
    for t in range(n_frames):
        canvas = bg.copy()
        for obj in spec.objects:
            center = (obj.center[0] + obj.velocity[0] * t + margin,
                      obj.center[1] + obj.velocity[1] * t + margin)
            cov, u, v, box = _coverage(obj, center, H, W)
            if cov.size == 0:
                continue
            tex = _object_texture(obj, u, v, spec.channels)
            canvas[box] = canvas[box] * (1 - cov[:, :, None]) + tex * cov[:, :, None]
        if margin:
            sx, sy = shake[t]
            m = np.float64([[1, 0, -(margin + sx)], [0, 1, -(margin + sy)]])
            canvas = cv2.warpAffine(canvas, m, (w, h), flags=cv2.INTER_LINEAR,
                                    borderMode=cv2.BORDER_REFLECT)
            if canvas.ndim == 2:
                canvas = canvas[:, :, None]
        frames.append(Image(np.clip(canvas, 0, 1).astype(np.float32), ColorSpace.SRGB))
    return Burst(frames)


def random_scene(rng, canvas_size=(96, 96), n_frames=11, n_objects=None,
                 static_prob=0.3, max_shake=1.5, channels=3):
    """Draw a SceneSpec whose motion respects the per-burst displacement bound."""
    h, w = canvas_size
    if n_objects is None:
        n_objects = int(rng.integers(2, 6))
    vmax = MAX_DISPLACEMENT_FRACTION * w / max(n_frames - 1, 1)
    objects = []
    for _ in range(n_objects):
        speed = rng.uniform(0.0, vmax) if rng.random() < 0.8 else 0.0
        ang = rng.uniform(0, 2 * np.pi)
        objects.append(SceneObject(
            kind=OBJECT_KINDS[int(rng.integers(len(OBJECT_KINDS)))],
            center=(float(rng.uniform(0.1, 0.9) * w), float(rng.uniform(0.1, 0.9) * h)),
            size=(float(rng.uniform(0.12, 0.35) * w), float(rng.uniform(0.12, 0.35) * h)),
            velocity=(float(speed * np.cos(ang)), float(speed * np.sin(ang))),
            color=tuple(float(c) for c in rng.uniform(0.1, 0.95, size=3)),
            texture_seed=int(rng.integers(2 ** 31)),
            angle=float(rng.uniform(0, np.pi)),
        ))
    shake = 0.0 if rng.random() < static_prob else float(rng.uniform(0.1, max_shake))
    return SceneSpec(canvas_size=tuple(canvas_size), objects=objects,
                     background_seed=int(rng.integers(2 ** 31)), shake_amplitude=shake,
                     channels=channels)


# --------------------------------------------------------------------------
# blur and pairs


def average_blur(burst, nb_sigma=0.0, rng=None):
    """Long-exposure image: pixel-wise mean of the burst, plus optional weak noise."""
    if burst is None or len(burst.frames) == 0:
        raise ValueError("empty burst")
    mean = _kernels.frame_mean(burst.stack())
    if nb_sigma > 0:
        if nb_sigma > MAX_NB_SIGMA:
            raise ValueError(f"blurry-image noise std must be <= {MAX_NB_SIGMA:.5f}")
        if rng is None:
            raise ValueError("rng required when nb_sigma > 0")
        mean = mean + rng.normal(0.0, nb_sigma, size=mean.shape)
    ref = burst.frames[0]
    return Image(mean.astype(np.float32), ref.colorspace, ref.bit_origin)


def make_pair(burst, noise, space=ColorSpace.SRGB, isp=None, rng=None, clamp=True, nb_sigma=0.0):
    space = ColorSpace(space)
    if rng is None:
        raise ValueError("make_pair needs an rng")
    clean = burst.reference
    blurry = average_blur(burst, nb_sigma=nb_sigma, rng=rng)
    if isinstance(noise, Sensor) and space != ColorSpace.LINEAR:
        raise ValueError("sensor noise requires the LINEAR space")
    if not isinstance(noise, (Gaussian, Poisson, Sensor)):
        raise TypeError(f"unsupported noise params {noise!r}")
    if space == ColorSpace.LINEAR and clean.colorspace == ColorSpace.SRGB:
        if isp is None:
            raise ValueError("an IspParams is required to take an sRGB burst to LINEAR")
        clean = unprocess(clean, isp)
        blurry = unprocess(blurry, isp)
    elif clean.colorspace != space:
        raise ValueError(f"cannot take a {clean.colorspace.value} burst to {space.value}")
    noisy = add_noise(clean, noise, rng, clamp=clamp)
    return CapturePair(blurry=blurry, noisy=noisy, clean=clean, noise=noise, space=space, isp=isp)
