"""Synthetic noise models (Gaussian, Poisson, heteroscedastic sensor) and a
small invertible ISP used to move between sRGB and linear intensities."""
import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import ColorSpace, Image

SIGMA_RANGE = (5.0 / 255.0, 50.0 / 255.0)
POISSON_RANGE = (5.0, 50.0)
# log-uniform bounds for the shot-noise factor (SIDD fit)
SHOT_RANGE = (0.00068674, 0.02194856)
READ_SLOPE = 1.85
READ_INTERCEPT = 0.3
READ_STD = 0.2

DEFAULT_CCM = np.array([
    [1.55, -0.40, -0.15],
    [-0.25, 1.45, -0.20],
    [-0.05, -0.45, 1.50],
])


@dataclass(frozen=True)
class Gaussian:
    sigma: float
    kind = "gaussian"

    def to_dict(self):
        return {"model": self.kind, "sigma": self.sigma}


@dataclass(frozen=True)
class Poisson:
    lam: float
    kind = "poisson"

    def to_dict(self):
        return {"model": self.kind, "lambda": self.lam}


@dataclass(frozen=True)
class Sensor:
    lambda_shot: float
    lambda_read: float
    kind = "sensor"

    def to_dict(self):
        return {"model": self.kind, "lambda_shot": self.lambda_shot, "lambda_read": self.lambda_read}


def params_from_dict(d):
    model = d["model"]
    if model == "gaussian":
        return Gaussian(float(d["sigma"]))
    if model == "poisson":
        return Poisson(float(d["lambda"]))
    if model == "sensor":
        return Sensor(float(d["lambda_shot"]), float(d["lambda_read"]))
    raise ValueError(f"unknown noise model {model!r}")


@dataclass
class NoiseConfig:
    """Run-config block describing how per-image noise parameters are drawn."""

    model: str = "gaussian"
    sigma_range: tuple = SIGMA_RANGE
    lambda_range: tuple = POISSON_RANGE
    seed: int = 0
    # read-noise mean regressor: log(lambda_shot) unless literal_read_mean is set
    literal_read_mean: bool = False

    def __post_init__(self):
        if self.model not in ("gaussian", "poisson", "sensor"):
            raise ValueError(f"unknown noise model {self.model!r}")
        self.sigma_range = tuple(float(v) for v in self.sigma_range)
        self.lambda_range = tuple(float(v) for v in self.lambda_range)

    def sample(self, rng):
        if self.model == "gaussian":
            return Gaussian(float(rng.uniform(*self.sigma_range)))
        if self.model == "poisson":
            return Poisson(float(rng.uniform(*self.lambda_range)))
        return sample_sensor_params(rng, literal=self.literal_read_mean)


# --------------------------------------------------------------------------
# samplers


def add_gaussian(img, sigma, rng, clamp=True):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.with_data(img.data.copy())
    noisy = img.data.astype(np.float64) + rng.normal(0.0, sigma, size=img.data.shape)
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return img.with_data(noisy.astype(np.float32))


def add_poisson(img, lam, rng, clamp=True):
    if lam <= 0:
        raise ValueError("lambda must be positive")
    rate = np.maximum(img.data.astype(np.float64), 0.0) * lam
    noisy = rng.poisson(rate).astype(np.float64) / lam
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return img.with_data(noisy.astype(np.float32))


def sample_sensor_params(rng, literal=False):
    """Draw (lambda_shot, lambda_read).

    ``literal=True`` regresses the read-noise log-mean on lambda_shot itself
    rather than on log(lambda_shot).
    """
    log_shot = rng.uniform(math.log(SHOT_RANGE[0]), math.log(SHOT_RANGE[1]))
    regressor = math.exp(log_shot) if literal else log_shot
    log_read = rng.normal(READ_SLOPE * regressor + READ_INTERCEPT, READ_STD)
    return Sensor(float(math.exp(log_shot)), float(math.exp(log_read)))


def add_sensor(img, params, rng, clamp=True):
    if img.colorspace != ColorSpace.LINEAR:
        raise ValueError("sensor noise must be applied to a LINEAR image")
    if params.lambda_shot < 0 or params.lambda_read < 0:
        raise ValueError("sensor noise factors must be non-negative")
    x = img.data.astype(np.float64)
    if params.lambda_shot == 0 and params.lambda_read == 0:
        return img.with_data(img.data.copy())
    var = params.lambda_read + params.lambda_shot * np.maximum(x, 0.0)
    noisy = x + rng.normal(size=x.shape) * np.sqrt(var)
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return img.with_data(noisy.astype(np.float32))


def add_noise(img, params, rng, clamp=True):
    if isinstance(params, Gaussian):
        return add_gaussian(img, params.sigma, rng, clamp=clamp)
    if isinstance(params, Poisson):
        return add_poisson(img, params.lam, rng, clamp=clamp)
    if isinstance(params, Sensor):
        return add_sensor(img, params, rng, clamp=clamp)
    raise TypeError(f"unsupported noise params {params!r}")


# --------------------------------------------------------------------------
# ISP


@dataclass
class IspParams:
    wb_gains: np.ndarray = field(default_factory=lambda: np.ones(3))
    ccm: np.ndarray = field(default_factory=lambda: DEFAULT_CCM.copy())
    gamma: float = 2.2

    def __post_init__(self):
        self.wb_gains = np.asarray(self.wb_gains, dtype=np.float64)
        self.ccm = np.asarray(self.ccm, dtype=np.float64)
        if self.ccm.shape != (3, 3):
            raise ValueError("ccm must be 3x3")
        if not np.isfinite(self.ccm).all() or np.linalg.cond(self.ccm) >= 1e4:
            raise ValueError("ccm is not (well) invertible")
        if np.any(self.wb_gains < 1) or np.any(self.wb_gains > 4):
            raise ValueError("wb_gains must lie in [1, 4]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def to_dict(self):
        return {"wb_gains": self.wb_gains.tolist(), "ccm": self.ccm.tolist(), "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        return cls(d["wb_gains"], d["ccm"], d["gamma"])


def random_isp(rng, gain_range=(1.0, 2.0)):
    return IspParams(wb_gains=rng.uniform(*gain_range, size=3))


def _signed_pow(x, p):
    return np.sign(x) * np.abs(x) ** p


def unprocess_array(x, isp):
    lin = _signed_pow(x.astype(np.float64), isp.gamma)
    lin = lin @ np.linalg.inv(isp.ccm).T
    return lin / isp.wb_gains


def process_array(x, isp):
    cam = x.astype(np.float64) * isp.wb_gains
    rgb = cam @ isp.ccm.T
    return _signed_pow(rgb, 1.0 / isp.gamma)


def unprocess(img, isp):
    if img.colorspace != ColorSpace.SRGB:
        raise ValueError("unprocess expects an SRGB image")
    return Image(unprocess_array(img.data, isp), ColorSpace.LINEAR, img.bit_origin)


def process(img, isp):
    if img.colorspace != ColorSpace.LINEAR:
        raise ValueError("process expects a LINEAR image")
    return Image(process_array(img.data, isp), ColorSpace.SRGB, img.bit_origin)
