"""One-step updates for every algorithm variant.

The momentum updates discretize the damped-Hamiltonian particle system

    d theta = eta_t * m dt
    d m     = [-grad_theta_free_energy - gamma_t * eta_t * m] dt
    d X^i   = eta_x * U^i dt
    d U^i   = [grad_x log p(y, X^i) - gamma_x * eta_x * U^i] dt + sqrt(2 gamma_x) dW^i

by freezing the gradient over one step and solving the resulting linear SDE
exactly.  With ``omega(t) = exp(-gamma*eta*t)`` and ``iota = 1 - omega(h)``
the one-step transition of a block with frozen gradient ``g`` is Gaussian:

    mean_U = omega*U0 + iota/(gamma*eta) * g
    mean_X = X0 + [iota*U0 + (h - iota/(gamma*eta))*g] / gamma
    cov_XX = [2h - omega(2h)/(gamma*eta) + 4*omega(h)/(gamma*eta) - 3/(gamma*eta)] / gamma
    cov_UX = iota^2 / (gamma*eta)
    cov_UU = (1 - omega(2h)) / eta

sampled through the 2x2 block Cholesky scalars (L_xx, L_xu, L_uu).  For
``gamma*eta*h < SERIES_THRESHOLD`` the position drift weight and cov_XX are
evaluated by truncated Taylor series: the closed forms subtract nearly equal
O(h) terms to produce O(h^2)/O(h^3) results and lose ~eps/(gamma*eta*h)^2
relative accuracy in double precision.

RNG consumption contract (determinism depends on it): per step and particle,
an enriched (momentum) block draws one ``standard_normal((2, dim))`` -- row 0
drives positions, row 1 momenta -- and a plain gradient-descent block draws
one ``standard_normal(dim)``.  All draws come from the particle's own stream,
particles in ascending index order within a step.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .extras import RmsPropState, precondition
from .state import ParticleCloud, ThetaState

SERIES_THRESHOLD = 0.1
_SERIES_ORDER = 16

ALGORITHMS = ("PGD", "MPD_EXP", "MPD_NC")
CORRECTIONS = ("NONE", "THETA_ONLY", "FULL")


@dataclass(frozen=True)
class MomentumParams:
    """Damping/mass hyperparameters and per-block step sizes."""

    gamma_theta: float = 0.0
    eta_theta: float = 0.0
    gamma_x: float = 0.0
    eta_x: float = 0.0
    h_theta: float = 1e-3
    h_x: float = 1e-3

    def __post_init__(self):
        if self.h_theta <= 0 or self.h_x <= 0:
            raise ValueError("step sizes must be positive")
        for name in ("gamma_theta", "eta_theta", "gamma_x", "eta_x"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class VariantConfig:
    """Selects the algorithm, which blocks carry momentum, and the gradient
    evaluation points (``FULL`` evaluates the x-gradient at the freshly
    updated theta, ``THETA_ONLY`` only shifts the theta-gradient to the
    partial update, ``NONE`` uses the previous iterate everywhere)."""

    algorithm: str = "MPD_EXP"
    enrich_theta: bool = True
    enrich_x: bool = True
    gradient_correction: str = "FULL"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.gradient_correction not in CORRECTIONS:
            raise ValueError(f"unknown correction {self.gradient_correction!r}")
        if self.algorithm == "PGD" and (self.enrich_theta or self.enrich_x):
            raise ValueError("PGD must have both enrichment flags off")
        if self.algorithm != "PGD" and not (self.enrich_theta or self.enrich_x):
            raise ValueError(f"{self.algorithm} needs at least one enriched component")


@dataclass(frozen=True)
class TransitionCoefficients:
    """Precomputed scalars of the exact one-step Gaussian transition."""

    iota: float
    omega: float
    drift_pos_weight: float
    drift_mom_weight: float
    L_xx: float
    L_xu: float
    L_uu: float
    gamma: float
    eta: float
    h: float


def _pos_drift_scaled(s: float) -> float:
    """g1(s) = s - 1 + exp(-s) = sum_{n>=2} (-s)^n / n!"""
    if s < SERIES_THRESHOLD:
        acc = 0.0
        for n in range(_SERIES_ORDER, 1, -1):
            acc = (acc + ((-1.0) ** n) / math.factorial(n)) * s
        return acc * s
    return s - 1.0 + math.exp(-s)


def _cov_xx_scaled(s: float) -> float:
    """f(s) = 2s - 3 + 4 exp(-s) - exp(-2s) = sum_{n>=3} (-1)^(n+1) (2^n - 4) s^n / n!"""
    if s < SERIES_THRESHOLD:
        acc = 0.0
        for n in range(_SERIES_ORDER, 2, -1):
            acc = (acc + ((-1.0) ** (n + 1)) * (2.0 ** n - 4.0) / math.factorial(n)) * s
        return acc * s * s
    return 2.0 * s + (4.0 * math.expm1(-s) - math.expm1(-2.0 * s))


def transition_covariance(gamma: float, eta: float, t: float):
    """Covariance blocks (cov_XX, cov_UX, cov_UU) of the exact transition."""
    if gamma <= 0 or eta <= 0 or t <= 0:
        raise ValueError("gamma, eta, t must be positive")
    a = gamma * eta
    s = a * t
    iota = -math.expm1(-s)
    cov_xx = _cov_xx_scaled(s) / (gamma * a)
    cov_ux = iota * iota / a
    cov_uu = -math.expm1(-2.0 * s) / eta
    return cov_xx, cov_ux, cov_uu


def transition_coefficients(gamma: float, eta: float, h: float) -> TransitionCoefficients:
    """All scalars of the exact frozen-gradient transition over step ``h``."""
    if gamma <= 0 or eta <= 0 or h <= 0:
        raise ValueError("gamma, eta, h must be positive")
    a = gamma * eta
    s = a * h
    iota = -math.expm1(-s)
    omega = math.exp(-s)
    drift_pos = _pos_drift_scaled(s) / (a * gamma)
    drift_mom = iota / a
    cov_xx, cov_ux, cov_uu = transition_covariance(gamma, eta, h)
    l_xx = math.sqrt(max(cov_xx, 0.0))
    l_xu = cov_ux / l_xx if l_xx > 0.0 else 0.0
    l_uu = math.sqrt(max(cov_uu - l_xu * l_xu, 0.0))
    return TransitionCoefficients(
        iota=iota, omega=omega,
        drift_pos_weight=drift_pos, drift_mom_weight=drift_mom,
        L_xx=l_xx, L_xu=l_xu, L_uu=l_uu,
        gamma=gamma, eta=eta, h=h,
    )


def exact_transition_moments(x0, u0, g, gamma: float, eta: float, t: float):
    """Mean and covariance of the frozen-gradient transition at time ``t``.

    Returns ``(mean_X, mean_U, cov_XX, cov_UX, cov_UU)``; covariances are
    scalar multiples of the identity and returned as scalars.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if gamma <= 0 or eta <= 0:
        raise ValueError("gamma and eta must be positive")
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    g = np.asarray(g, dtype=float)
    a = gamma * eta
    s = a * t
    iota = -math.expm1(-s)
    omega = math.exp(-s)
    drift_pos = _pos_drift_scaled(s) / (a * gamma)
    mean_u = omega * u0 + (iota / a) * g
    mean_x = x0 + (iota * u0) / gamma + drift_pos * g
    cov_xx, cov_ux, cov_uu = transition_covariance(gamma, eta, t)
    return mean_x, mean_u, cov_xx, cov_ux, cov_uu


def grad_free_energy_theta(model, theta, cloud) -> np.ndarray:
    """Free-energy theta-gradient under the empirical cloud measure:
    the negated cloud average of ``grad_theta log p(y, X^i)``."""
    X = cloud.X if isinstance(cloud, ParticleCloud) else np.asarray(cloud, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cloud must be a nonempty (M, d_x) array")
    return -model.grad_theta_mean(theta, X)


def partial_theta(theta, m, coeffs: TransitionCoefficients) -> np.ndarray:
    """Momentum half-update of theta: the zero-gradient transition mean."""
    return np.asarray(theta, dtype=float) + (coeffs.iota / coeffs.gamma) * np.asarray(m, dtype=float)


def _chunk_bounds(n: int, threads: int):
    k = max(1, min(threads, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(int(edges[j]), int(edges[j + 1])) for j in range(k)]


def _run_chunked(n: int, threads: int, fn):
    bounds = _chunk_bounds(n, threads)
    if len(bounds) == 1:
        fn(*bounds[0])
        return
    with ThreadPoolExecutor(max_workers=len(bounds)) as ex:
        list(ex.map(lambda ab: fn(*ab), bounds))


def _pgd_x_update(cloud, grads, h_x, noise_scale, threads, out_X):
    """X^i += h * grad + sqrt(2h) * xi^i, one normal vector per particle."""
    step_noise = noise_scale * math.sqrt(2.0 * h_x)
    X = cloud.X
    Z = np.empty_like(X)

    def work(a, b):
        for i in range(a, b):
            cloud.rngs[i].standard_normal(out=Z[i])
        np.multiply(grads[a:b], h_x, out=out_X[a:b])
        out_X[a:b] += X[a:b]
        out_X[a:b] += step_noise * Z[a:b]

    _run_chunked(cloud.n_particles, threads, work)


def _momentum_x_update(cloud, grads, coeffs, noise_scale, threads, out_X, out_U):
    """Exact-transition update of (X, U); two normal vectors per particle."""
    X, U = cloud.X, cloud.U
    cu = coeffs.iota / coeffs.gamma
    cg = coeffs.drift_pos_weight
    cm = coeffs.drift_mom_weight
    om = coeffs.omega
    lxx = noise_scale * coeffs.L_xx
    lxu = noise_scale * coeffs.L_xu
    luu = noise_scale * coeffs.L_uu
    M, d = X.shape
    Z = np.empty((M, 2, d))

    def work(a, b):
        for i in range(a, b):
            cloud.rngs[i].standard_normal(out=Z[i])
        np.multiply(U[a:b], cu, out=out_X[a:b])
        out_X[a:b] += X[a:b]
        out_X[a:b] += cg * grads[a:b]
        out_X[a:b] += lxx * Z[a:b, 0]
        np.multiply(U[a:b], om, out=out_U[a:b])
        out_U[a:b] += cm * grads[a:b]
        out_U[a:b] += lxu * Z[a:b, 0]
        out_U[a:b] += luu * Z[a:b, 1]

    _run_chunked(cloud.n_particles, threads, work)


def pgd_step(state: ThetaState, cloud: ParticleCloud, model, h_theta: float,
             h_x: float, preconditioner: RmsPropState | None = None, *,
             disable_noise: bool = False, threads: int = 1):
    """One particle-gradient-descent step (Euler--Maruyama on both blocks).

    ``theta' = theta + h_theta * mean_i grad_theta l(theta, X^i)``;
    ``X'^i = X^i + h_x grad_x l(theta, X^i) + sqrt(2 h_x) xi^i``.  Momenta
    are untouched.  ``disable_noise`` is a test hook that zeroes the
    diffusion term.
    """
    if h_theta <= 0 or h_x <= 0:
        raise ValueError("step sizes must be positive")
    g_theta = -grad_free_energy_theta(model, state.theta, cloud)
    if preconditioner is not None:
        preconditioner.update(-g_theta)
        g_theta = -precondition(-g_theta, preconditioner)
    new_theta = state.theta + h_theta * g_theta

    grads = model.grad_x_batch(state.theta, cloud.X)
    out_X = np.empty_like(cloud.X)
    _pgd_x_update(cloud, grads, h_x, 0.0 if disable_noise else 1.0, threads, out_X)
    return ThetaState(new_theta, state.m.copy()), cloud.replace(out_X, cloud.U.copy())


def mpd_step(state: ThetaState, cloud: ParticleCloud, model,
             params: MomentumParams, config: VariantConfig,
             preconditioner: RmsPropState | None = None, *,
             disable_noise: bool = False, threads: int = 1):
    """One momentum-particle-descent step with the exponential integrator.

    Enriched blocks take the exact frozen-gradient transition; a block with
    its enrichment flag off falls back to the PGD update (same RNG pattern
    as :func:`pgd_step` for that block).  The theta-gradient is evaluated at
    the partial update ``theta + iota/gamma * m`` unless the correction mode
    is ``NONE``; the x-gradient at the fully updated theta under ``FULL``.
    The preconditioner, when given, is updated in place with the raw
    theta-gradient and its output replaces that gradient everywhere in the
    theta block.
    """
    if config.algorithm == "PGD":
        raise ValueError("use pgd_step for the PGD variant")
    if config.enrich_theta and params.gamma_theta * params.eta_theta <= 0:
        raise ValueError("enriched theta block needs gamma_theta * eta_theta > 0")
    if config.enrich_x and params.gamma_x * params.eta_x <= 0:
        raise ValueError("enriched x block needs gamma_x * eta_x > 0")

    noise_scale = 0.0 if disable_noise else 1.0
    theta_old = state.theta

    # theta block
    if config.enrich_theta:
        ct = transition_coefficients(params.gamma_theta, params.eta_theta, params.h_theta)
        if config.gradient_correction in ("THETA_ONLY", "FULL"):
            theta_eval = partial_theta(theta_old, state.m, ct)
        else:
            theta_eval = theta_old
        g_e = grad_free_energy_theta(model, theta_eval, cloud)
        if preconditioner is not None:
            preconditioner.update(g_e)
            g_e = precondition(g_e, preconditioner)
        new_theta = theta_old + (ct.iota / ct.gamma) * state.m - ct.drift_pos_weight * g_e
        new_m = (1.0 - ct.iota) * state.m - ct.drift_mom_weight * g_e
    else:
        g_e = grad_free_energy_theta(model, theta_old, cloud)
        if preconditioner is not None:
            preconditioner.update(g_e)
            g_e = precondition(g_e, preconditioner)
        new_theta = theta_old - params.h_theta * g_e
        new_m = state.m.copy()

    # x block
    theta_for_x = new_theta if config.gradient_correction == "FULL" else theta_old
    out_X = np.empty_like(cloud.X)
    if config.enrich_x:
        cx = transition_coefficients(params.gamma_x, params.eta_x, params.h_x)
        grads = model.grad_x_batch(theta_for_x, cloud.X)
        out_U = np.empty_like(cloud.U)
        _momentum_x_update(cloud, grads, cx, noise_scale, threads, out_X, out_U)
    else:
        grads = model.grad_x_batch(theta_old, cloud.X)
        out_U = cloud.U.copy()
        _pgd_x_update(cloud, grads, params.h_x, noise_scale, threads, out_X)

    return ThetaState(new_theta, new_m), cloud.replace(out_X, out_U)


def nc_step(state: ThetaState, cloud: ParticleCloud, model,
            params: MomentumParams, mu_theta: float, *,
            disable_noise: bool = False, threads: int = 1):
    """One Nesterov--Cheng step: NAG-style theta update coupled with the
    exact-transition x update evaluated at the new theta.

        theta' = theta + v
        v'     = mu * v - h_theta^2 * grad_free_energy(theta + mu v, cloud)

    ``state.m`` holds the NAG velocity ``v``.
    """
    if not (0.0 <= mu_theta < 1.0):
        raise ValueError("mu_theta must lie in [0, 1)")
    if params.gamma_x * params.eta_x <= 0:
        raise ValueError("the x block needs gamma_x * eta_x > 0")
    v = state.m
    new_theta = state.theta + v
    lookahead = state.theta + mu_theta * v
    g_e = grad_free_energy_theta(model, lookahead, cloud)
    new_v = mu_theta * v - params.h_theta ** 2 * g_e

    cx = transition_coefficients(params.gamma_x, params.eta_x, params.h_x)
    grads = model.grad_x_batch(new_theta, cloud.X)
    out_X = np.empty_like(cloud.X)
    out_U = np.empty_like(cloud.U)
    _momentum_x_update(cloud, grads, cx, 0.0 if disable_noise else 1.0,
                       threads, out_X, out_U)
    return ThetaState(new_theta, new_v), cloud.replace(out_X, out_U)
