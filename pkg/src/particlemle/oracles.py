"""Independent references used by the test suite and the ``validate`` command.

Nothing here is on the optimization hot path.  The module provides

* fine-step Euler--Maruyama simulation of the frozen-gradient kinetic SDE,
  plus the exact moment recursion of that discrete chain (a noise-free
  stand-in for very large path counts);
* Gauss--Legendre quadrature evaluation of the transition's drift weights
  and covariance blocks straight from their integral representations, which
  is cancellation-free and fully independent of the closed forms;
* the dense joint Hessian of quadratic models;
* the Gaussian moment flow: for a jointly quadratic log-density the
  mean-field dynamics preserves Gaussians, so the continuous-time claims
  (free-energy descent, exponential decay) can be checked by integrating
  closed moment ODEs with RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import LOG_2PI, GaussianLinearModel, ToyHM
from .integrators import MomentumParams


def em_fine_simulate(x0, u0, frozen_g, gamma: float, eta: float, t: float,
                     substeps: int, rng: np.random.Generator, n_paths: int = 1):
    """Euler--Maruyama paths of dX = eta*U dt, dU = (g - gamma*eta*U) dt + sqrt(2 gamma) dW.

    The gradient ``frozen_g`` stays constant along the path.  Returns final
    ``(X, U)`` with shape ``(n_paths, d)``.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    g = np.atleast_1d(np.asarray(frozen_g, dtype=float))
    d = x0.size
    dt = t / substeps
    diff = math.sqrt(2.0 * gamma * dt)
    X = np.tile(x0, (n_paths, 1))
    U = np.tile(u0, (n_paths, 1))
    ge = gamma * eta
    for _ in range(substeps):
        X = X + dt * eta * U
        U = U + dt * (g[None, :] - ge * U) + diff * rng.standard_normal((n_paths, d))
    return X, U


def em_chain_moments(x0, u0, frozen_g, gamma: float, eta: float, t: float, substeps: int):
    """Exact first/second moments of the Euler--Maruyama chain above.

    The chain is linear with additive Gaussian noise, so its moments follow
    a deterministic recursion; per-coordinate covariance is shared.  Returns
    ``(mean_x, mean_u, cov_xx, cov_ux, cov_uu)``.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    g = np.atleast_1d(np.asarray(frozen_g, dtype=float))
    dt = t / substeps
    A = np.array([[1.0, dt * eta], [0.0, 1.0 - dt * gamma * eta]])
    Q = np.array([[0.0, 0.0], [0.0, 2.0 * gamma * dt]])
    C = np.zeros((2, 2))
    for _ in range(substeps):
        x, u = x + dt * eta * u, u + dt * (g - gamma * eta * u)
        C = A @ C @ A.T + Q
    return x, u, C[0, 0], C[1, 0], C[1, 1]


def transition_quadrature(gamma: float, eta: float, t: float, nodes: int = 96):
    """Transition drift weights and covariance from their integral forms.

    Gauss--Legendre quadrature of
      pos_drift   = (1/gamma) * int_0^t (1 - omega(t-s)) ds
      mom_drift   =            int_0^t      omega(t-s)  ds
      cov_xx      = (2/gamma) * int_0^t (1 - omega(t-s))^2 ds
      cov_ux      =        2 * int_0^t omega(t-s)(1 - omega(t-s)) ds
      cov_uu      =  2*gamma * int_0^t omega(t-s)^2 ds
    with omega(r) = exp(-gamma*eta*r).  No differences of near-equal terms,
    so this is accurate for arbitrarily small gamma*eta*t.
    """
    z, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * t * (z + 1.0)
    w = 0.5 * t * w
    om = np.exp(-gamma * eta * (t - s))
    one_m = -np.expm1(-gamma * eta * (t - s))
    return {
        "drift_pos_weight": float(np.sum(one_m * w) / gamma),
        "drift_mom_weight": float(np.sum(om * w)),
        "cov_xx": float(2.0 / gamma * np.sum(one_m**2 * w)),
        "cov_ux": float(2.0 * np.sum(om * one_m * w)),
        "cov_uu": float(2.0 * gamma * np.sum(om**2 * w)),
    }


def dense_hessian(model) -> np.ndarray:
    """Constant joint Hessian of a quadratic model's log-density."""
    if isinstance(model, GaussianLinearModel):
        return model.hessian()
    if isinstance(model, ToyHM):
        return model.to_gaussian().hessian()
    raise ValueError("dense_hessian requires a quadratic model")


@dataclass
class GaussianFlowState:
    """Exact Gaussian-family state of the mean-field flow for quadratic models.

    ``mean`` stacks the latent and momentum means ``(x, u)``; ``cov`` is the
    full symmetric (2 d_x)^2 covariance over that stack.
    """

    theta: np.ndarray
    m: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        d2 = self.mean.size
        if self.cov.shape != (d2, d2):
            raise ValueError("cov shape must match the stacked (x, u) mean")


def stationary_flow_state(model: GaussianLinearModel, params: MomentumParams) -> GaussianFlowState:
    """Global minimizer of the momentum-enriched free energy."""
    theta = model.optimal_theta()
    d = model.d_x
    mean = np.concatenate([model.conditional_x_mode(theta), np.zeros(d)])
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = np.linalg.inv(-model.h_xx)
    cov[d:, d:] = np.eye(d) / params.eta_x
    return GaussianFlowState(theta=theta, m=np.zeros(model.d_theta), mean=mean, cov=cov)


def _flow_derivative(model: GaussianLinearModel, params: MomentumParams,
                     theta, m, mean, cov):
    d = model.d_x
    mx, mu = mean[:d], mean[d:]
    dtheta = params.eta_theta * m
    dm = (model.h_tt @ theta + model.h_tx @ mx + model.b_theta
          - params.gamma_theta * params.eta_theta * m)
    dmx = params.eta_x * mu
    dmu = (model.h_tx.T @ theta + model.h_xx @ mx + model.b_x
           - params.gamma_x * params.eta_x * mu)
    A = np.zeros((2 * d, 2 * d))
    A[:d, d:] = params.eta_x * np.eye(d)
    A[d:, :d] = model.h_xx
    A[d:, d:] = -params.gamma_x * params.eta_x * np.eye(d)
    dcov = A @ cov + cov @ A.T
    dcov[d:, d:] += 2.0 * params.gamma_x * np.eye(d)
    return dtheta, dm, np.concatenate([dmx, dmu]), dcov


def gaussian_moment_flow(model: GaussianLinearModel, params: MomentumParams,
                         init: GaussianFlowState, t_end: float, dt: float,
                         record_every: int = 1):
    """Integrate the closed moment ODEs of the mean-field flow with RK4.

    Returns ``(times, states)``.  The covariance is re-symmetrized after
    every step and must stay positive definite; losing definiteness raises,
    which signals the step size is too large.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    if params.gamma_x * params.eta_x <= 0 or params.gamma_theta * params.eta_theta <= 0:
        raise ValueError("the moment flow needs positive gamma*eta on both blocks")
    n_steps = int(round(t_end / dt))
    theta, m = init.theta.copy(), init.m.copy()
    mean, cov = init.mean.copy(), init.cov.copy()
    times = [0.0]
    states = [GaussianFlowState(theta.copy(), m.copy(), mean.copy(), cov.copy())]
    for k in range(1, n_steps + 1):
        k1 = _flow_derivative(model, params, theta, m, mean, cov)
        k2 = _flow_derivative(model, params, theta + 0.5 * dt * k1[0], m + 0.5 * dt * k1[1],
                              mean + 0.5 * dt * k1[2], cov + 0.5 * dt * k1[3])
        k3 = _flow_derivative(model, params, theta + 0.5 * dt * k2[0], m + 0.5 * dt * k2[1],
                              mean + 0.5 * dt * k2[2], cov + 0.5 * dt * k2[3])
        k4 = _flow_derivative(model, params, theta + dt * k3[0], m + dt * k3[1],
                              mean + dt * k3[2], cov + dt * k3[3])
        theta = theta + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        m = m + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        mean = mean + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        cov = cov + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError(f"covariance lost positive definiteness at step {k}; reduce dt")
        if k % record_every == 0 or k == n_steps:
            times.append(k * dt)
            states.append(GaussianFlowState(theta.copy(), m.copy(), mean.copy(), cov.copy()))
    return np.array(times), states


def flow_free_energy(model: GaussianLinearModel, params: MomentumParams,
                     state: GaussianFlowState) -> float:
    """Momentum-enriched free energy of a full-covariance Gaussian state.

    ``F = -entropy(q) - E_q[l(theta, X)] - E_q[log r_eta(U)]
        + eta_theta/2 ||m||^2`` where q is the joint Gaussian over (x, u).
    """
    d = model.d_x
    mx, mu = state.mean[:d], state.mean[d:]
    cov_xx = state.cov[:d, :d]
    cov_uu = state.cov[d:, d:]
    sign, logdet = np.linalg.slogdet(state.cov)
    if sign <= 0:
        raise ValueError("covariance must be positive definite")
    entropy = 0.5 * (2 * d) * (1.0 + LOG_2PI) + 0.5 * logdet
    e_log_joint = model.log_joint(state.theta, mx) + 0.5 * np.sum(model.h_xx * cov_xx.T)
    e_log_r = (-0.5 * d * (LOG_2PI - math.log(params.eta_x))
               - 0.5 * params.eta_x * (mu @ mu + np.trace(cov_uu)))
    kinetic = 0.5 * params.eta_theta * (state.m @ state.m)
    return float(-entropy - e_log_joint - e_log_r + kinetic)


def simulate_mean_field(model: GaussianLinearModel, params: MomentumParams,
                        init: GaussianFlowState, t_end: float, substeps: int,
                        n_particles: int, rng: np.random.Generator):
    """Euler--Maruyama particle simulation of the full mean-field dynamics.

    Used to cross-check the moment ODEs: returns the final
    ``(theta, m, empirical mean, empirical cov)`` of a large particle cloud
    initialized from ``init``'s Gaussian.
    """
    d = model.d_x
    dt = t_end / substeps
    L = np.linalg.cholesky(init.cov + 1e-14 * np.eye(2 * d))
    Z = init.mean[None, :] + rng.standard_normal((n_particles, 2 * d)) @ L.T
    X, U = Z[:, :d].copy(), Z[:, d:].copy()
    theta, m = init.theta.copy(), init.m.copy()
    diff = math.sqrt(2.0 * params.gamma_x * dt)
    for _ in range(substeps):
        g_theta = model.grad_theta_mean(theta, X)
        gx = model.grad_x_batch(theta, X)
        theta = theta + dt * params.eta_theta * m
        m = m + dt * (g_theta - params.gamma_theta * params.eta_theta * m)
        X = X + dt * params.eta_x * U
        U = U + dt * (gx - params.gamma_x * params.eta_x * U) \
            + diff * rng.standard_normal((n_particles, d))
    stacked = np.hstack([X, U])
    return theta, m, stacked.mean(axis=0), np.cov(stacked.T, ddof=0)
