import math

import numpy as np
import pytest
from scipy import integrate, stats

from sggm.diffusion import (FEATURE_ONLY, JOINT, STRUCTURE_ONLY, NoiseSchedule, TimeGrid, active_channels,
                            alpha, diffuse, diffused_gaussian, forward_sample, gaussian_kl, prior_sample,
                            sigma2)
from sggm.errors import ParameterError
from sggm.graphs import Graph


class TestSchedule:
    def test_endpoints(self):
        assert alpha(0) == 1.0 and sigma2(0) == 0.0
        assert alpha(math.log(4)) == pytest.approx(0.5, abs=1e-15)
        assert sigma2(math.log(4)) == pytest.approx(0.75, abs=1e-15)
        assert abs(sigma2(50) - 1) < 1e-12

    def test_negative_time(self):
        with pytest.raises(ParameterError):
            alpha(-0.1)
        with pytest.raises(ParameterError):
            sigma2(-1e-9)

    def test_variance_preserving(self):
        t = np.linspace(0, 50, 2001)
        np.testing.assert_allclose(alpha(t) ** 2 + sigma2(t), 1.0, atol=1e-12)
        assert np.all(np.diff(alpha(t)) < 0) and np.all(np.diff(sigma2(t)) >= 0)

    def test_noise_schedule(self):
        s = NoiseSchedule(10.0)
        assert s.alpha(1.0) == alpha(1.0)
        with pytest.raises(ParameterError):
            NoiseSchedule(0.0)


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(10.0, 4)
        assert g.points == (0.0, 2.5, 5.0, 7.5, 10.0)
        np.testing.assert_allclose(g.deltas, 2.5)
        assert g.steps == 4 and g.horizon == 10.0

    def test_reverse_points(self):
        g = TimeGrid((0.0, 1.0, 3.0, 6.0))
        np.testing.assert_allclose(g.reverse_points(), [0.0, 3.0, 5.0, 6.0])

    def test_sum_of_steps(self):
        g = TimeGrid.uniform(7.3, 37)
        assert math.fsum(g.deltas) == pytest.approx(7.3, abs=1e-12)

    @pytest.mark.parametrize("pts", [(0.0,), (0.1, 1.0), (0.0, 1.0, 1.0), (0.0, 2.0, 1.0)])
    def test_invalid(self, pts):
        with pytest.raises(ParameterError):
            TimeGrid(pts)

    def test_dict_round_trip(self):
        g = TimeGrid.uniform(10, 200)
        assert g.to_dict() == {"T": 10.0, "M": 200, "kind": "uniform"}
        assert TimeGrid.from_dict(g.to_dict()) == g
        h = TimeGrid((0.0, 0.5, 2.0))
        assert TimeGrid.from_dict(h.to_dict()) == h


class TestForwardSample:
    def test_time_zero_identity(self):
        rng = np.random.default_rng(0)
        g = Graph(rng.normal(size=(3, 2)), rng.normal(size=(3, 3)))
        out = forward_sample(g, 0.0, seed=1)
        np.testing.assert_array_equal(out.x, g.x)
        np.testing.assert_array_equal(out.a, g.a)

    def test_out_of_range(self):
        g = Graph(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            forward_sample(g, -1.0, 0)
        with pytest.raises(ParameterError):
            forward_sample(g, 11.0, 0, horizon=10.0)

    def test_large_time_variance(self):
        rng = np.random.default_rng(3)
        draws = diffuse(np.zeros((10000, 2, 2)), 10.0, rng)
        assert abs(draws.var() / float(sigma2(10.0)) - 1) < 0.05

    def test_conditional_mean(self):
        x0 = np.array([[1.0, -2.0], [0.5, 3.0]])
        draws = diffuse(np.broadcast_to(x0, (10000, 2, 2)), 1.0, np.random.default_rng(4))
        se = math.sqrt(float(sigma2(1.0)) / 10000)
        assert np.all(np.abs(draws.mean(0) - float(alpha(1.0)) * x0) < 3 * se)

    def test_channels_independent(self):
        g = Graph(np.zeros((2, 2)), np.zeros((2, 2)))
        xs, as_ = [], []
        for s in range(3000):
            out = forward_sample(g, 2.0, s)
            xs.append(out.x[0, 0])
            as_.append(out.a[0, 0])
        r, _ = stats.pearsonr(xs, as_)
        assert abs(r) < 4 / math.sqrt(3000)

    def test_composition(self):
        # two hops s then t-s match one hop to t in the first two moments
        rng = np.random.default_rng(5)
        x0 = np.full((20000, 1, 1), 2.0)
        s, t = 0.7, 1.9
        one = diffuse(x0, t, rng)
        mid = diffuse(x0, s, rng)
        two = diffuse(mid, t - s, rng)
        se_mean = math.sqrt(float(sigma2(t)) / 20000)
        assert abs(one.mean() - two.mean()) < 3 * math.sqrt(2) * se_mean
        assert abs(one.var() - two.var()) < 3 * math.sqrt(2) * float(sigma2(t)) * math.sqrt(2 / 20000)


class TestPrior:
    def test_moments(self):
        draws = np.stack([prior_sample(2, 2, s).x for s in range(10000)])
        assert np.all(np.abs(draws.mean(0)) < 3 / math.sqrt(10000))
        assert abs(draws.var() - 1) < 0.05

    def test_deterministic_and_shape(self):
        a, b = prior_sample(3, 2, 7), prior_sample(3, 2, 7)
        np.testing.assert_array_equal(a.x, b.x)
        g = prior_sample(1, 1, 0)
        assert g.x.shape == (1, 1) and g.a.shape == (1, 1)


class TestGaussianKL:
    def test_zero_cases(self):
        m = np.arange(6.0).reshape(2, 3)
        assert gaussian_kl(m, 1.7, m, 1.7) == 0.0
        assert gaussian_kl(np.zeros(9), 2.0, np.zeros(9), 2.0) == 0.0

    def test_mean_shift(self):
        assert gaussian_kl(np.ones(1), 1.0, np.zeros(1), 1.0) == pytest.approx(0.5)

    def test_against_scipy_entropy(self):
        # numerically integrated univariate KL as an independent oracle
        m1, v1, m2, v2 = 0.3, 1.7, -0.4, 0.6
        grid = np.linspace(-15, 15, 200001)
        p = stats.norm.pdf(grid, m1, math.sqrt(v1))
        q = stats.norm.pdf(grid, m2, math.sqrt(v2))
        oracle = integrate.trapezoid(p * np.log(p / q), grid)
        assert gaussian_kl(np.array([m1]), v1, np.array([m2]), v2) == pytest.approx(oracle, rel=1e-6)

    def test_errors(self):
        with pytest.raises(ParameterError):
            gaussian_kl(np.zeros(2), 0.0, np.zeros(2), 1.0)
        with pytest.raises(ParameterError):
            gaussian_kl(np.zeros(2), 1.0, np.zeros(3), 1.0)

    def test_contraction(self):
        for t in (0, 1, 2, 4):
            m0, v0 = diffused_gaussian(1.0, 2.0, t)
            m1, v1 = diffused_gaussian(1.0, 2.0, t + 1)
            k0 = gaussian_kl(np.array([m0]), v0, np.zeros(1), 1.0)
            k1 = gaussian_kl(np.array([m1]), v1, np.zeros(1), 1.0)
            assert k1 <= math.exp(-1) * k0 + 1e-9


def test_active_channels():
    assert active_channels(JOINT) == (True, True)
    assert active_channels(FEATURE_ONLY) == (True, False)
    assert active_channels(STRUCTURE_ONLY) == (False, True)
    with pytest.raises(ParameterError):
        active_channels("both")
