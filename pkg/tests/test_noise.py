import math

import numpy as np
import pytest
from scipy import stats

from selfir.imaging import ColorSpace, Image
from selfir.noise import (
    SHOT_RANGE, Gaussian, IspParams, NoiseConfig, Poisson, Sensor, add_gaussian, add_noise,
    add_poisson, add_sensor, params_from_dict, process, random_isp, sample_sensor_params,
    unprocess,
)

N_PIX = 1000 * 1000


def const(value, n=1000, space=ColorSpace.SRGB):
    return Image(np.full((n, n, 1), value, np.float32), space)


class TestGaussian:
    def test_zero_sigma_identity(self, rng):
        img = Image(rng.random((8, 8, 3)).astype(np.float32))
        np.testing.assert_array_equal(add_gaussian(img, 0.0, rng).data, img.data)

    def test_std(self, rng):
        sigma = 10 / 255
        out = add_gaussian(const(0.5), sigma, rng, clamp=False).data.astype(np.float64)
        assert out.size >= 10 ** 6
        assert abs(out.std() / sigma - 1) <= 0.02
        assert abs(out.mean() - 0.5) <= 3 * sigma / math.sqrt(out.size)

    def test_determinism(self):
        img = const(0.3, 64)
        a = add_gaussian(img, 0.1, np.random.default_rng(7)).data
        b = add_gaussian(img, 0.1, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)

    def test_clamp(self, rng):
        out = add_gaussian(const(0.99, 100), 0.2, rng, clamp=True).data
        assert out.min() >= 0 and out.max() <= 1

    def test_negative_sigma(self, rng):
        with pytest.raises(ValueError):
            add_gaussian(const(0.5, 4), -0.1, rng)


class TestPoisson:
    def test_zero_pixel(self, rng):
        out = add_poisson(const(0.0, 200), 5.0, rng).data
        assert np.all(out == 0)

    def test_mean_and_variance(self, rng):
        lam = 50.0
        out = add_poisson(const(0.5), lam, rng, clamp=False).data.astype(np.float64)
        assert abs(out.mean() / 0.5 - 1) <= 0.01
        assert abs(out.var() / (0.5 / lam) - 1) <= 0.05

    @pytest.mark.parametrize("x", [0.25, 0.5, 1.0])
    def test_variance_scales_with_intensity(self, rng, x):
        lam = 20.0
        out = add_poisson(const(x), lam, rng, clamp=False).data.astype(np.float64)
        assert abs(out.mean() - x) <= 4 * math.sqrt(x / lam / out.size)
        assert abs(out.var() / (x / lam) - 1) <= 0.05

    def test_large_lambda_converges(self, rng):
        img = Image(rng.random((200, 200, 1)).astype(np.float32))
        devs = [np.abs(add_poisson(img, lam, rng, clamp=False).data - img.data).max()
                for lam in (1e2, 1e3, 1e5)]
        assert devs[0] > devs[1] > devs[2]
        assert devs[2] < 0.02

    def test_bad_lambda(self, rng):
        with pytest.raises(ValueError):
            add_poisson(const(0.5, 4), 0.0, rng)


class TestSensorParams:
    def test_range(self, rng):
        shots = np.array([sample_sensor_params(rng).lambda_shot for _ in range(10 ** 5)])
        assert shots.min() >= 0.00068674 and shots.max() <= 0.02194856

    def test_reproducible(self):
        a = sample_sensor_params(np.random.default_rng(3))
        b = sample_sensor_params(np.random.default_rng(3))
        assert a == b

    def test_log_uniform_ks(self, rng):
        lo, hi = math.log(SHOT_RANGE[0]), math.log(SHOT_RANGE[1])
        logs = np.log([sample_sensor_params(rng).lambda_shot for _ in range(20000)])
        assert stats.kstest(logs, stats.uniform(loc=lo, scale=hi - lo).cdf).pvalue > 0.01

    def test_read_noise_log_regression(self, rng):
        draws = [sample_sensor_params(rng) for _ in range(20000)]
        ls = np.log([d.lambda_shot for d in draws])
        lr = np.log([d.lambda_read for d in draws])
        slope, intercept = np.polyfit(ls, lr, 1)
        assert slope == pytest.approx(1.85, abs=0.03)
        assert intercept == pytest.approx(0.3, abs=0.15)
        assert np.std(lr - (1.85 * ls + 0.3)) == pytest.approx(0.2, rel=0.03)

    def test_literal_interpretation(self, rng):
        draws = [sample_sensor_params(rng, literal=True) for _ in range(20000)]
        shot = np.array([d.lambda_shot for d in draws])
        lr = np.log([d.lambda_read for d in draws])
        resid = lr - (1.85 * shot + 0.3)
        assert abs(resid.mean()) < 0.01 and resid.std() == pytest.approx(0.2, rel=0.03)

    def test_noise_config_sampling(self, rng):
        g = NoiseConfig("gaussian").sample(rng)
        assert 5 / 255 <= g.sigma <= 50 / 255
        p = NoiseConfig("poisson").sample(rng)
        assert 5 <= p.lam <= 50
        assert isinstance(NoiseConfig("sensor").sample(rng), Sensor)
        for params in (g, p, Sensor(0.01, 0.001)):
            assert params_from_dict(params.to_dict()) == params


class TestSensorNoise:
    P = Sensor(lambda_shot=0.01, lambda_read=0.0004)

    def test_dark_variance(self, rng):
        out = add_sensor(const(0.0, space=ColorSpace.LINEAR), self.P, rng, clamp=False).data
        assert abs(out.astype(np.float64).var() / self.P.lambda_read - 1) <= 0.05

    def test_bright_variance(self, rng):
        out = add_sensor(const(1.0, space=ColorSpace.LINEAR), self.P, rng, clamp=False).data
        expected = self.P.lambda_read + self.P.lambda_shot
        assert abs(out.astype(np.float64).var() / expected - 1) <= 0.05

    def test_zero_params_identity(self, rng):
        img = Image(rng.random((8, 8, 3)).astype(np.float32), ColorSpace.LINEAR)
        np.testing.assert_array_equal(add_sensor(img, Sensor(0.0, 0.0), rng).data, img.data)

    def test_rejects_srgb(self, rng):
        with pytest.raises(ValueError):
            add_sensor(const(0.5, 4), self.P, rng)

    def test_zero_mean(self, rng):
        x = 0.4
        out = add_sensor(const(x, space=ColorSpace.LINEAR), self.P, rng, clamp=False).data
        sd = math.sqrt(self.P.lambda_read + self.P.lambda_shot * x)
        assert abs(out.astype(np.float64).mean() - x) <= 3 * sd / math.sqrt(out.size)

    def test_affine_variance_regression(self, rng):
        xs = np.linspace(0.0, 1.0, 6)
        vs = [add_sensor(const(x, 500, ColorSpace.LINEAR), self.P, rng, clamp=False)
              .data.astype(np.float64).var() for x in xs]
        slope, intercept = np.polyfit(xs, vs, 1)
        assert abs(slope / self.P.lambda_shot - 1) <= 0.10
        assert abs(intercept / self.P.lambda_read - 1) <= 0.10

    def test_dispatch(self, rng):
        img = const(0.5, 8, ColorSpace.LINEAR)
        for p in (Gaussian(0.1), Poisson(10.0), self.P):
            a = add_noise(img, p, np.random.default_rng(1))
            b = add_noise(img, p, np.random.default_rng(1))
            np.testing.assert_array_equal(a.data, b.data)


class TestIsp:
    def test_identity_chain(self, rng):
        isp = IspParams(wb_gains=np.ones(3), ccm=np.eye(3), gamma=1.0)
        img = Image(rng.random((6, 6, 3)).astype(np.float32))
        out = unprocess(img, isp)
        assert out.colorspace == ColorSpace.LINEAR
        np.testing.assert_allclose(out.data, img.data, atol=1e-7)

    def test_round_trip(self, rng):
        for _ in range(5):
            isp = random_isp(rng)
            img = Image(rng.random((16, 16, 3)).astype(np.float32))
            back = process(unprocess(img, isp), isp)
            assert back.colorspace == ColorSpace.SRGB
            assert np.max(np.abs(back.data - img.data)) <= 1e-5

    def test_gain_algebra(self):
        isp = IspParams(wb_gains=[2.0, 1.0, 1.0], ccm=np.eye(3), gamma=1.0)
        lin = unprocess(Image(np.ones((2, 2, 3), np.float32)), isp)
        assert lin.data[0, 0, 0] == pytest.approx(0.5)
        assert process(lin, isp).data[0, 0, 0] == pytest.approx(1.0)

    def test_direction_checks(self):
        isp = IspParams()
        with pytest.raises(ValueError):
            process(Image(np.zeros((2, 2, 3)), ColorSpace.SRGB), isp)
        with pytest.raises(ValueError):
            unprocess(Image(np.zeros((2, 2, 3)), ColorSpace.LINEAR), isp)

    def test_singular_ccm(self):
        with pytest.raises(ValueError):
            IspParams(ccm=np.ones((3, 3)))

    def test_gain_bounds(self):
        with pytest.raises(ValueError):
            IspParams(wb_gains=[0.5, 1, 1])
