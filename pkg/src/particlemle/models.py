"""Latent-variable models with log-joint densities and their gradients.

Every model works on a fixed dataset ``y`` and exposes the unnormalized
log-joint ``log p_theta(y, x)`` together with its gradients in ``theta`` and
``x``.  Three models ship:

* :class:`ToyHM` -- hierarchical Gaussian model, one scalar latent per
  observation; every quantity of interest is available in closed form.
* :class:`GaussianLinearModel` -- any model whose log-joint is jointly
  quadratic in ``(theta, x)``; generalizes ToyHM so moment-based oracles
  apply to a family of targets.
* :class:`TinyDecoderModel` -- a small MLP decoder for 1-d density
  estimation with a standard-normal latent prior and hand-written
  reverse-mode gradients.

Model evaluation is pure: methods never mutate the model, so instances are
safe to share across worker threads.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


class LatentModel:
    """Interface shared by all latent-variable models.

    Attributes
    ----------
    d_theta : int
        Parameter dimension.
    d_x : int
        Total latent dimension (all data blocks concatenated).
    n_data : int
        Number of observations; latent coordinates factor into ``n_data``
        blocks of ``block_dim`` for models that factorize over data.
    """

    d_theta: int
    d_x: int
    n_data: int
    block_dim: int = 1
    factorizes: bool = False

    def log_joint(self, theta, x) -> float:
        raise NotImplementedError

    def grad_theta(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    # Batch paths used by the particle updates.  X has shape (M, d_x); the
    # defaults loop over rows, concrete models override with vectorized code.

    def grad_x_batch(self, theta, X: np.ndarray) -> np.ndarray:
        return np.stack([self.grad_x(theta, row) for row in X])

    def grad_theta_mean(self, theta, X: np.ndarray) -> np.ndarray:
        out = np.zeros(self.d_theta)
        for row in X:
            out += self.grad_theta(theta, row)
        return out / len(X)

    def _check_dims(self, theta, x):
        theta = _as_vector(theta, "theta")
        x = _as_vector(x, "x")
        if theta.shape[0] != self.d_theta:
            raise ValueError(f"theta has dim {theta.shape[0]}, expected {self.d_theta}")
        if x.shape[0] != self.d_x:
            raise ValueError(f"x has dim {x.shape[0]}, expected {self.d_x}")
        return theta, x

    def block_slice(self, j: int) -> slice:
        """Latent columns belonging to datum ``j`` (factorizing models only)."""
        if not self.factorizes:
            raise ValueError("model does not factorize over data")
        return slice(j * self.block_dim, (j + 1) * self.block_dim)

    def default_theta(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.d_theta)

    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` observations from the fitted generative model."""
        raise NotImplementedError


class ToyHM(LatentModel):
    """Hierarchical Gaussian model: y_i ~ N(x_i, 1), x_i ~ N(theta, sigma2).

    ``log p_theta(y, x) = sum_i [log N(y_i; x_i, 1) + log N(x_i; theta, sigma2)]``
    with one latent coordinate per observation and a scalar parameter.  The
    marginal likelihood is Gaussian, so the MLE, the posterior over each
    latent, and the free energy of any Gaussian approximation are all closed
    form (see also :mod:`particlemle.diagnostics`).
    """

    factorizes = True
    block_dim = 1

    def __init__(self, y, sigma2: float = 1.0):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.y = _as_vector(y, "y")
        if self.y.size == 0:
            raise ValueError("dataset y must be nonempty")
        self.sigma2 = float(sigma2)
        self.n_data = self.y.size
        self.d_x = self.n_data
        self.d_theta = 1

    def log_joint(self, theta, x) -> float:
        theta, x = self._check_dims(theta, x)
        th = theta[0]
        r_obs = self.y - x
        r_pri = x - th
        return float(
            -0.5 * self.d_x * (2.0 * LOG_2PI + math.log(self.sigma2))
            - 0.5 * r_obs @ r_obs
            - 0.5 * (r_pri @ r_pri) / self.sigma2
        )

    def grad_theta(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        return np.array([(x - theta[0]).sum() / self.sigma2])

    def grad_x(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        return (self.y - x) + (theta[0] - x) / self.sigma2

    def grad_x_batch(self, theta, X: np.ndarray) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        return (self.y[None, :] - X) + (th - X) / self.sigma2

    def grad_theta_mean(self, theta, X: np.ndarray) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        return np.array([(X.mean(axis=0) - th).sum() / self.sigma2])

    # Restricted variants for mini-batch updates: `idx` selects data.

    def grad_x_blocks(self, theta, X: np.ndarray, idx: np.ndarray) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        sub = X[:, idx]
        return (self.y[idx][None, :] - sub) + (th - sub) / self.sigma2

    def grad_theta_mean_minibatch(self, theta, X: np.ndarray, idx: np.ndarray) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        return np.array([(X[:, idx].mean(axis=0) - th).sum() / self.sigma2])

    def log_marginal(self, theta) -> float:
        """log p_theta(y); each y_i is N(theta, 1 + sigma2) marginally."""
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        v = 1.0 + self.sigma2
        r = self.y - th
        return float(-0.5 * self.n_data * (LOG_2PI + math.log(v)) - 0.5 * (r @ r) / v)

    def min_free_energy(self) -> float:
        """Global free-energy minimum: -max_theta log p_theta(y)."""
        return -self.log_marginal(toyhm_mle(self.y))

    def to_gaussian(self) -> "GaussianLinearModel":
        n, s2 = self.n_data, self.sigma2
        h_tt = np.array([[-n / s2]])
        h_tx = np.full((1, n), 1.0 / s2)
        h_xx = -(1.0 + 1.0 / s2) * np.eye(n)
        b_theta = np.zeros(1)
        b_x = self.y.copy()
        const = -0.5 * (self.y @ self.y) - 0.5 * n * (2.0 * LOG_2PI + math.log(s2))
        return GaussianLinearModel(h_tt, h_tx, h_xx, b_theta, b_x, const)

    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)[0]
        return th + math.sqrt(1.0 + self.sigma2) * rng.standard_normal(n)


def toyhm_mle(y) -> float:
    """Marginal maximum-likelihood estimate for :class:`ToyHM`: the data mean."""
    y = _as_vector(y, "y")
    if y.size == 0:
        raise ValueError("y must be nonempty")
    return float(y.mean())


def toyhm_posterior(theta: float, y, sigma2: float):
    """Conjugate posterior over each latent: returns (means, variance).

    ``x_i | y, theta ~ N((y_i + theta/sigma2) / (1 + 1/sigma2), 1/(1 + 1/sigma2))``.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    y = _as_vector(y, "y")
    prec = 1.0 + 1.0 / sigma2
    mean = (y + theta / sigma2) / prec
    return mean, 1.0 / prec


def toyhm_lipschitz(d_x: int) -> float:
    """Gradient Lipschitz constant of the sigma2=1 model's log-joint.

    Equals the spectral radius of the constant joint Hessian:
    ``((2 + d_x) + sqrt(d_x^2 + 4)) / 2``.
    """
    if d_x < 1:
        raise ValueError("d_x must be at least 1")
    return ((2.0 + d_x) + math.sqrt(d_x * d_x + 4.0)) / 2.0


class GaussianLinearModel(LatentModel):
    """Model whose log-joint is jointly quadratic in (theta, x).

    ``l(theta, x) = 0.5 z^T H z + b^T z + c`` with ``z = (theta, x)``,
    constant symmetric Hessian ``H`` (given in blocks) and ``-H`` positive
    semi-definite.  ToyHM is representable as an instance via
    :meth:`ToyHM.to_gaussian`.
    """

    factorizes = False

    def __init__(self, h_tt, h_tx, h_xx, b_theta, b_x, const: float = 0.0):
        self.h_tt = np.atleast_2d(np.asarray(h_tt, dtype=float))
        self.h_tx = np.atleast_2d(np.asarray(h_tx, dtype=float))
        self.h_xx = np.atleast_2d(np.asarray(h_xx, dtype=float))
        self.b_theta = _as_vector(b_theta, "b_theta")
        self.b_x = _as_vector(b_x, "b_x")
        self.const = float(const)
        self.d_theta = self.h_tt.shape[0]
        self.d_x = self.h_xx.shape[0]
        self.n_data = self.d_x
        if self.h_tx.shape != (self.d_theta, self.d_x):
            raise ValueError("h_tx block has inconsistent shape")
        if self.b_theta.shape[0] != self.d_theta or self.b_x.shape[0] != self.d_x:
            raise ValueError("offset vectors inconsistent with Hessian blocks")
        H = self.hessian()
        if not np.allclose(H, H.T, atol=1e-10):
            raise ValueError("Hessian must be symmetric")
        if np.linalg.eigvalsh(H).max() > 1e-8:
            raise ValueError("-Hessian must be positive semi-definite")

    def hessian(self) -> np.ndarray:
        top = np.hstack([self.h_tt, self.h_tx])
        bot = np.hstack([self.h_tx.T, self.h_xx])
        return np.vstack([top, bot])

    def log_joint(self, theta, x) -> float:
        theta, x = self._check_dims(theta, x)
        quad = theta @ (self.h_tt @ theta) + 2.0 * theta @ (self.h_tx @ x) + x @ (self.h_xx @ x)
        return float(0.5 * quad + self.b_theta @ theta + self.b_x @ x + self.const)

    def grad_theta(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        return self.h_tt @ theta + self.h_tx @ x + self.b_theta

    def grad_x(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        return self.h_tx.T @ theta + self.h_xx @ x + self.b_x

    def grad_x_batch(self, theta, X: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return X @ self.h_xx.T + (self.h_tx.T @ theta + self.b_x)[None, :]

    def grad_theta_mean(self, theta, X: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return self.h_tt @ theta + self.h_tx @ X.mean(axis=0) + self.b_theta

    def conditional_x_mode(self, theta) -> np.ndarray:
        """argmax_x l(theta, x); solves H_xx x = -(H_xt theta + b_x)."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return np.linalg.solve(self.h_xx, -(self.h_tx.T @ theta + self.b_x))

    def log_marginal(self, theta) -> float:
        """log p_theta(y) by Gaussian integration over x (requires -H_xx PD)."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        xhat = self.conditional_x_mode(theta)
        sign, logdet = np.linalg.slogdet(-self.h_xx)
        if sign <= 0:
            raise ValueError("-H_xx must be positive definite for the marginal")
        return self.log_joint(theta, xhat) + 0.5 * self.d_x * LOG_2PI - 0.5 * logdet

    def optimal_theta(self) -> np.ndarray:
        """Maximizer of the marginal likelihood (Schur-complement solve)."""
        s = self.h_tt - self.h_tx @ np.linalg.solve(self.h_xx, self.h_tx.T)
        rhs = self.b_theta - self.h_tx @ np.linalg.solve(self.h_xx, self.b_x)
        return np.linalg.solve(s, -rhs)

    def min_free_energy(self) -> float:
        return -self.log_marginal(self.optimal_theta())


class TinyDecoderModel(LatentModel):
    """1-d density estimation model with a small MLP decoder.

    Per datum ``j``: latent ``z_j ~ N(0, I_L)`` and observation
    ``y_j ~ N(f_theta(z_j), sigma2)`` where ``f_theta`` is an MLP with two
    leaky-ReLU hidden layers and a tanh output scaled by ``output_scale``
    (the scale bounds the decoder's range; it must cover the data for the
    model to be able to fit it).  ``theta`` flattens all weights and biases;
    gradients are accumulated by hand-written reverse-mode on the fixed
    architecture.
    """

    factorizes = True

    def __init__(self, y, latent_dim: int = 10, width: int = 32,
                 sigma2: float = 0.01, leaky_slope: float = 0.01,
                 output_scale: float = 4.0):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if output_scale <= 0:
            raise ValueError("output_scale must be positive")
        self.output_scale = float(output_scale)
        self.y = _as_vector(y, "y")
        if self.y.size == 0:
            raise ValueError("dataset y must be nonempty")
        self.latent_dim = int(latent_dim)
        self.width = int(width)
        self.sigma2 = float(sigma2)
        self.leaky_slope = float(leaky_slope)
        self.n_data = self.y.size
        self.block_dim = self.latent_dim
        self.d_x = self.n_data * self.latent_dim
        L, w = self.latent_dim, self.width
        sizes = [w * L, w, w * w, w, w, 1]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.d_theta = int(self._offsets[-1])

    def _unpack(self, theta):
        L, w, o = self.latent_dim, self.width, self._offsets
        theta = np.asarray(theta, dtype=float)
        W1 = theta[o[0]:o[1]].reshape(w, L)
        b1 = theta[o[1]:o[2]]
        W2 = theta[o[2]:o[3]].reshape(w, w)
        b2 = theta[o[3]:o[4]]
        w3 = theta[o[4]:o[5]]
        b3 = theta[o[5]]
        return W1, b1, W2, b2, w3, b3

    def default_theta(self, rng: np.random.Generator) -> np.ndarray:
        L, w = self.latent_dim, self.width
        parts = [
            rng.standard_normal((w, L)).ravel() * math.sqrt(2.0 / L),
            np.zeros(w),
            rng.standard_normal((w, w)).ravel() * math.sqrt(2.0 / w),
            np.zeros(w),
            rng.standard_normal(w) * math.sqrt(1.0 / w),
            np.zeros(1),
        ]
        return np.concatenate(parts)

    def _lrelu(self, t):
        return np.where(t > 0, t, self.leaky_slope * t)

    def _lrelu_grad(self, t):
        return np.where(t > 0, 1.0, self.leaky_slope)

    def _forward(self, theta, Z):
        """Decoder forward pass on rows of Z; returns outputs and caches."""
        W1, b1, W2, b2, w3, b3 = self._unpack(theta)
        p1 = Z @ W1.T + b1
        h1 = self._lrelu(p1)
        p2 = h1 @ W2.T + b2
        h2 = self._lrelu(p2)
        p3 = h2 @ w3 + b3
        t = np.tanh(p3)
        return self.output_scale * t, (Z, p1, h1, p2, h2, t)

    def decode(self, theta, Z) -> np.ndarray:
        return self._forward(theta, np.atleast_2d(np.asarray(Z, dtype=float)))[0]

    def _backward(self, theta, cache, df):
        """Backprop df (dl/df per row) to theta and latent gradients."""
        W1, b1, W2, b2, w3, b3 = self._unpack(theta)
        Z, p1, h1, p2, h2, t = cache
        d3 = df * self.output_scale * (1.0 - t * t)
        g_w3 = h2.T @ d3
        g_b3 = d3.sum()
        d2 = np.outer(d3, w3) * self._lrelu_grad(p2)
        g_W2 = d2.T @ h1
        g_b2 = d2.sum(axis=0)
        d1 = (d2 @ W2) * self._lrelu_grad(p1)
        g_W1 = d1.T @ Z
        g_b1 = d1.sum(axis=0)
        g_theta = np.concatenate(
            [g_W1.ravel(), g_b1, g_W2.ravel(), g_b2, g_w3, [g_b3]]
        )
        g_z = d1 @ W1
        return g_theta, g_z

    def _log_joint_rows(self, theta, Z, y):
        f, _ = self._forward(theta, Z)
        r = y - f
        n, L = Z.shape
        return (
            -0.5 * n * (LOG_2PI + math.log(self.sigma2))
            - 0.5 * (r @ r) / self.sigma2
            - 0.5 * n * L * LOG_2PI
            - 0.5 * float((Z * Z).sum())
        )

    def log_joint(self, theta, x) -> float:
        theta, x = self._check_dims(theta, x)
        Z = x.reshape(self.n_data, self.latent_dim)
        return float(self._log_joint_rows(theta, Z, self.y))

    def grad_theta(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        Z = x.reshape(self.n_data, self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (self.y - f) / self.sigma2
        g_theta, _ = self._backward(theta, cache, df)
        return g_theta

    def grad_x(self, theta, x) -> np.ndarray:
        theta, x = self._check_dims(theta, x)
        Z = x.reshape(self.n_data, self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (self.y - f) / self.sigma2
        _, g_z = self._backward(theta, cache, df)
        return (g_z - Z).ravel()

    def grad_x_batch(self, theta, X: np.ndarray) -> np.ndarray:
        M = X.shape[0]
        Z = X.reshape(M * self.n_data, self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (np.tile(self.y, M) - f) / self.sigma2
        _, g_z = self._backward(theta, cache, df)
        return (g_z - Z).reshape(M, self.d_x)

    def grad_theta_mean(self, theta, X: np.ndarray) -> np.ndarray:
        M = X.shape[0]
        Z = X.reshape(M * self.n_data, self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (np.tile(self.y, M) - f) / self.sigma2
        g_theta, _ = self._backward(theta, cache, df)
        return g_theta / M

    def grad_x_blocks(self, theta, X: np.ndarray, idx: np.ndarray) -> np.ndarray:
        M = X.shape[0]
        cols = self._block_columns(idx)
        Z = X[:, cols].reshape(M * len(idx), self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (np.tile(self.y[idx], M) - f) / self.sigma2
        _, g_z = self._backward(theta, cache, df)
        return (g_z - Z).reshape(M, len(idx) * self.latent_dim)

    def grad_theta_mean_minibatch(self, theta, X: np.ndarray, idx: np.ndarray) -> np.ndarray:
        M = X.shape[0]
        cols = self._block_columns(idx)
        Z = X[:, cols].reshape(M * len(idx), self.latent_dim)
        f, cache = self._forward(theta, Z)
        df = (np.tile(self.y[idx], M) - f) / self.sigma2
        g_theta, _ = self._backward(theta, cache, df)
        return g_theta / M

    def _block_columns(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return (idx[:, None] * self.latent_dim + np.arange(self.latent_dim)[None, :]).ravel()

    def sample(self, theta, n: int, rng: np.random.Generator) -> np.ndarray:
        Z = rng.standard_normal((n, self.latent_dim))
        f, _ = self._forward(theta, Z)
        return f + math.sqrt(self.sigma2) * rng.standard_normal(n)
