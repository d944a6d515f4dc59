import math

import numpy as np
import pytest

from particlemle.models import (GaussianLinearModel, TinyDecoderModel, ToyHM,
                                toyhm_lipschitz, toyhm_mle, toyhm_posterior)
from particlemle.state import make_generator

LOG_2PI = math.log(2 * math.pi)


def fd_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestToyHM:
    def test_log_joint_zero_residuals(self):
        model = ToyHM([0.0, 0.0], sigma2=1.0)
        assert model.log_joint([0.0], [0.0, 0.0]) == pytest.approx(-2 * LOG_2PI, abs=1e-12)
        assert model.log_joint([0.0], [0.0, 0.0]) == pytest.approx(-3.6758, abs=1e-4)

    def test_log_joint_single_unit_residual(self):
        model = ToyHM([1.0], sigma2=1.0)
        assert model.log_joint([0.0], [0.0]) == pytest.approx(-LOG_2PI - 0.5, abs=1e-12)

    def test_grad_theta_centered(self):
        y = np.array([1.0, 3.0, -2.0])
        model = ToyHM(y, sigma2=1.0)
        g = model.grad_theta([y.mean()], y)
        assert g == pytest.approx([0.0], abs=1e-12)

    def test_grad_theta_direct_sum(self):
        model = ToyHM([0.0, 0.0], sigma2=1.0)
        assert model.grad_theta([0.0], [3.0, 1.0]) == pytest.approx([4.0])

    def test_grad_x_vanishes_at_posterior_mode(self):
        y = np.array([2.0, -1.0])
        model = ToyHM(y, sigma2=1.0)
        x = (y + 0.3) / 2.0
        assert model.grad_x([0.3], x) == pytest.approx(np.zeros(2), abs=1e-12)

    def test_grad_x_direct(self):
        model = ToyHM([2.0], sigma2=1.0)
        assert model.grad_x([0.0], [0.0]) == pytest.approx([2.0])

    def test_dimension_mismatch_raises(self):
        model = ToyHM([1.0, 2.0], sigma2=1.0)
        with pytest.raises(ValueError):
            model.log_joint([0.0], [1.0])
        with pytest.raises(ValueError):
            model.grad_x([0.0, 1.0], [1.0, 2.0])

    def test_batch_paths_match_rows(self):
        rng = make_generator(3, 0)
        y = rng.normal(size=4)
        model = ToyHM(y, sigma2=0.5)
        X = rng.normal(size=(6, 4))
        theta = np.array([0.7])
        batch = model.grad_x_batch(theta, X)
        for i in range(6):
            assert batch[i] == pytest.approx(model.grad_x(theta, X[i]))
        mean = np.mean([model.grad_theta(theta, row) for row in X], axis=0)
        assert model.grad_theta_mean(theta, X) == pytest.approx(mean)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            ToyHM([1.0], sigma2=0.0)
        with pytest.raises(ValueError):
            ToyHM([], sigma2=1.0)


class TestToyHMAnalytics:
    def test_mle_constant(self):
        assert toyhm_mle([100.0] * 7) == pytest.approx(100.0)

    def test_mle_centered_average(self):
        rng = make_generator(4, 0)
        y = rng.normal(size=50)
        y = y - y.mean() + 10.0
        assert toyhm_mle(y) == pytest.approx(10.0, abs=1e-12)

    def test_mle_empty_raises(self):
        with pytest.raises(ValueError):
            toyhm_mle([])

    def test_posterior_unit_sigma(self):
        y = np.array([1.0, -3.0])
        mean, var = toyhm_posterior(0.5, y, 1.0)
        assert mean == pytest.approx((y + 0.5) / 2.0)
        assert var == pytest.approx(0.5)

    def test_posterior_limits(self):
        y = np.array([2.0])
        mean_flat, _ = toyhm_posterior(7.0, y, 1e12)
        assert mean_flat == pytest.approx([2.0], abs=1e-10)
        mean_point, var_point = toyhm_posterior(7.0, y, 1e-12)
        assert mean_point == pytest.approx([7.0], abs=1e-10)
        assert var_point == pytest.approx(1e-12, rel=1e-6)

    def test_posterior_invalid_sigma(self):
        with pytest.raises(ValueError):
            toyhm_posterior(0.0, [1.0], -1.0)

    @pytest.mark.parametrize("d_x,expected", [
        (1, (3 + math.sqrt(5)) / 2),
        (2, 2 + math.sqrt(2)),
        (100, ((2 + 100) + math.sqrt(100**2 + 4)) / 2),
    ])
    def test_lipschitz_formula(self, d_x, expected):
        assert toyhm_lipschitz(d_x) == pytest.approx(expected, abs=1e-12)

    def test_lipschitz_d100_value(self):
        assert toyhm_lipschitz(100) == pytest.approx(101.0100, abs=5e-5)

    def test_lipschitz_invalid(self):
        with pytest.raises(ValueError):
            toyhm_lipschitz(0)

    @pytest.mark.parametrize("d_x", [1, 2, 5, 10])
    def test_lipschitz_is_spectral_radius(self, d_x):
        model = ToyHM(np.zeros(d_x), sigma2=1.0)
        H = model.to_gaussian().hessian()
        rho = np.abs(np.linalg.eigvalsh(H)).max()
        assert toyhm_lipschitz(d_x) == pytest.approx(rho, abs=1e-8)

    @pytest.mark.parametrize("d_x", [1, 2, 5, 10])
    def test_hessian_eigenvalue_set(self, d_x):
        model = ToyHM(np.zeros(d_x), sigma2=1.0)
        eigs = np.sort(np.linalg.eigvalsh(model.to_gaussian().hessian()))
        roots = np.roots([1.0, 2.0 + d_x, d_x])
        expected = np.sort(np.concatenate([np.full(d_x - 1, -2.0), roots]))
        assert eigs == pytest.approx(expected, abs=1e-8)


class TestGaussianLinearModel:
    def test_represents_toyhm(self):
        rng = make_generator(5, 0)
        y = rng.normal(size=5)
        toy = ToyHM(y, sigma2=0.8)
        glm = toy.to_gaussian()
        for _ in range(10):
            theta = rng.normal(size=1)
            x = rng.normal(size=5)
            assert glm.log_joint(theta, x) == pytest.approx(toy.log_joint(theta, x), abs=1e-9)
            assert glm.grad_theta(theta, x) == pytest.approx(toy.grad_theta(theta, x))
            assert glm.grad_x(theta, x) == pytest.approx(toy.grad_x(theta, x))

    def test_marginal_and_optimum_match_toyhm(self):
        rng = make_generator(6, 0)
        y = rng.normal(2.0, 1.0, size=6)
        toy = ToyHM(y, sigma2=1.4)
        glm = toy.to_gaussian()
        assert glm.log_marginal([0.3]) == pytest.approx(toy.log_marginal(0.3), abs=1e-9)
        assert glm.optimal_theta() == pytest.approx([toyhm_mle(y)], abs=1e-10)
        assert glm.min_free_energy() == pytest.approx(toy.min_free_energy(), abs=1e-9)

    def test_rejects_non_psd(self):
        with pytest.raises(ValueError):
            GaussianLinearModel([[1.0]], [[0.0]], [[-1.0]], [0.0], [0.0])

    def test_hessian_constant_and_symmetric(self):
        glm = ToyHM(np.arange(3.0), sigma2=2.0).to_gaussian()
        H = glm.hessian()
        assert np.allclose(H, H.T)
        assert np.linalg.eigvalsh(H).max() < 0


class TestTinyDecoder:
    @pytest.fixture
    def model(self):
        rng = make_generator(7, 0)
        return TinyDecoderModel(rng.normal(size=4), latent_dim=3, width=8)

    def test_independent_density_evaluation(self, model):
        # straightforward per-datum re-implementation of the log density
        rng = make_generator(8, 0)
        theta = model.default_theta(rng)
        x = rng.normal(size=model.d_x)
        W1 = theta[:24].reshape(8, 3)
        b1 = theta[24:32]
        W2 = theta[32:96].reshape(8, 8)
        b2 = theta[96:104]
        w3 = theta[104:112]
        b3 = theta[112]

        def lrelu(v):
            return np.where(v > 0, v, 0.01 * v)

        total = 0.0
        for j in range(model.n_data):
            z = x[3 * j:3 * (j + 1)]
            f = model.output_scale * math.tanh(w3 @ lrelu(W2 @ lrelu(W1 @ z + b1) + b2) + b3)
            r = model.y[j] - f
            total += (-0.5 * math.log(2 * math.pi * model.sigma2) - r * r / (2 * model.sigma2)
                      - 1.5 * LOG_2PI - 0.5 * (z @ z))
        assert model.log_joint(theta, x) == pytest.approx(total, rel=1e-12)

    def test_gradients_match_finite_differences(self, model):
        rng = make_generator(9, 0)
        for _ in range(5):
            theta = model.default_theta(rng) + 0.3 * rng.standard_normal(model.d_theta)
            x = rng.normal(size=model.d_x)
            gt = model.grad_theta(theta, x)
            gx = model.grad_x(theta, x)
            fd_t = fd_gradient(lambda t: model.log_joint(t, x), theta)
            fd_x = fd_gradient(lambda z: model.log_joint(theta, z), x)
            assert np.linalg.norm(gt - fd_t) <= 1e-4 * (1 + np.linalg.norm(gt))
            assert np.linalg.norm(gx - fd_x) <= 1e-4 * (1 + np.linalg.norm(gx))

    def test_batch_matches_rows(self, model):
        rng = make_generator(10, 0)
        theta = model.default_theta(rng)
        X = rng.normal(size=(4, model.d_x))
        batch = model.grad_x_batch(theta, X)
        for i in range(4):
            assert batch[i] == pytest.approx(model.grad_x(theta, X[i]), rel=1e-12, abs=1e-12)
        mean = np.mean([model.grad_theta(theta, row) for row in X], axis=0)
        assert model.grad_theta_mean(theta, X) == pytest.approx(mean, rel=1e-10, abs=1e-12)

    def test_block_restriction_consistent(self, model):
        rng = make_generator(11, 0)
        theta = model.default_theta(rng)
        X = rng.normal(size=(3, model.d_x))
        idx = np.array([1, 3])
        full = model.grad_x_batch(theta, X)
        cols = model._block_columns(idx)
        assert model.grad_x_blocks(theta, X, idx) == pytest.approx(full[:, cols])

    def test_sampling_shape_and_range(self, model):
        rng = make_generator(12, 0)
        theta = model.default_theta(rng)
        samples = model.sample(theta, 500, rng)
        assert samples.shape == (500,)
        assert np.all(np.abs(samples) < model.output_scale + 10 * math.sqrt(model.sigma2))


@pytest.mark.parametrize("make_model", [
    lambda rng: ToyHM(rng.normal(size=5), sigma2=0.9),
    lambda rng: ToyHM(rng.normal(size=3), sigma2=2.5).to_gaussian(),
    lambda rng: TinyDecoderModel(rng.normal(size=3), latent_dim=2, width=6),
])
def test_gradient_fd_invariant_100_points(make_model):
    """100 random points: analytic gradients within 1e-4 relative of FD."""
    rng = make_generator(13, 0)
    model = make_model(rng)
    for _ in range(100):
        theta = (model.default_theta(rng) + 0.3 * rng.standard_normal(model.d_theta)
                 if isinstance(model, TinyDecoderModel)
                 else rng.standard_normal(model.d_theta))
        x = rng.standard_normal(model.d_x)
        gt = model.grad_theta(theta, x)
        gx = model.grad_x(theta, x)
        fd_t = fd_gradient(lambda t: model.log_joint(t, x), theta)
        fd_x = fd_gradient(lambda z: model.log_joint(theta, z), x)
        assert np.linalg.norm(gt - fd_t) <= 1e-4 * (1 + np.linalg.norm(gt))
        assert np.linalg.norm(gx - fd_x) <= 1e-4 * (1 + np.linalg.norm(gx))


def test_model_evaluation_is_pure():
    rng = make_generator(14, 0)
    model = ToyHM(rng.normal(size=4), sigma2=1.0)
    theta, x = np.array([0.5]), rng.normal(size=4)
    first = (model.log_joint(theta, x), model.grad_theta(theta, x), model.grad_x(theta, x))
    second = (model.log_joint(theta, x), model.grad_theta(theta, x), model.grad_x(theta, x))
    assert first[0] == second[0]
    assert np.array_equal(first[1], second[1])
    assert np.array_equal(first[2], second[2])
