"""Run metrics: parameter error, 1-d empirical Wasserstein distance, the
area-between-curves score, and closed-form free energies for Gaussian
approximations of the toy hierarchical model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import LOG_2PI, toyhm_posterior


@dataclass
class RunRecord:
    """One trace row: iteration, parameter snapshot, scalar metrics."""

    iteration: int
    theta: np.ndarray
    metrics: dict = field(default_factory=dict)
    wallclock: float = 0.0


def empirical_w1(a, b) -> float:
    """Wasserstein-1 distance between two 1-d empirical distributions.

    For equal sample counts this is the mean absolute difference of order
    statistics; unequal counts are handled through the quantile coupling
    (integral of |F_a - F_b|), which coincides with the former when counts
    match.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empirical_w1 needs nonempty samples")
    if a.size == b.size:
        return float(np.abs(a - b).mean())
    grid = np.concatenate([a, b])
    grid.sort()
    pts = grid[:-1]
    widths = np.diff(grid)
    cdf_a = np.searchsorted(a, pts, side="right") / a.size
    cdf_b = np.searchsorted(b, pts, side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def abc(pgd_curve, mpd_curve, raw_weights: bool = False) -> float:
    """Area-between-curves score sum_k w(k) [pgd(k) - mpd(k)].

    Weights ``w(k) = 2k / (K (K + 1))`` emphasize the end of the run and sum
    to one, so a constant curve gap of ``c`` scores exactly ``c``.
    ``raw_weights=True`` keeps the two extra 1/K factors of the unnormalized
    variant (which sums weights to 1/K), i.e. returns the score divided by
    K^2.
    """
    p = np.asarray(pgd_curve, dtype=float).ravel()
    m = np.asarray(mpd_curve, dtype=float).ravel()
    if p.size != m.size:
        raise ValueError("curves must have equal length")
    if p.size == 0:
        raise ValueError("curves must be nonempty")
    k = p.size
    w = 2.0 * np.arange(1, k + 1) / (k * (k + 1.0))
    val = float(np.sum(w * (p - m)))
    return val / (k * k) if raw_weights else val


def _gauss_kl(mean1, var1, mean2, var2) -> float:
    """KL(N(mean1, var1) || N(mean2, var2)) summed over coordinates."""
    mean1 = np.asarray(mean1, dtype=float).ravel()
    var1 = np.broadcast_to(np.asarray(var1, dtype=float), mean1.shape)
    mean2 = np.asarray(mean2, dtype=float).ravel()
    var2 = np.broadcast_to(np.asarray(var2, dtype=float), mean1.shape)
    return float(0.5 * np.sum(
        var1 / var2 + (mean1 - mean2) ** 2 / var2 - 1.0 + np.log(var2 / var1)
    ))


def toyhm_free_energy(theta: float, q_mean, q_var, y, sigma2: float) -> float:
    """Free energy of an independent-Gaussian approximation on ToyHM.

    ``E(theta, q) = -log p_theta(y) + sum_i KL(N(q_mean_i, q_var_i) ||
    posterior_i)``, both terms in closed form.
    """
    y = np.asarray(y, dtype=float).ravel()
    q_mean = np.asarray(q_mean, dtype=float).ravel()
    q_var = np.broadcast_to(np.asarray(q_var, dtype=float), q_mean.shape)
    if q_mean.shape != y.shape:
        raise ValueError("q_mean must have one entry per observation")
    if np.any(q_var <= 0):
        raise ValueError("q variances must be positive")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    v = 1.0 + sigma2
    r = y - theta
    neg_log_marginal = 0.5 * y.size * (LOG_2PI + math.log(v)) + 0.5 * (r @ r) / v
    post_mean, post_var = toyhm_posterior(theta, y, sigma2)
    return float(neg_log_marginal + _gauss_kl(q_mean, q_var, post_mean, post_var))


def momentum_free_energy(theta: float, m, q_mean, q_var, u_mean, u_var,
                         eta_theta: float, eta_x: float, y, sigma2: float) -> float:
    """Momentum-enriched free energy for independent Gaussian blocks.

    Adds to :func:`toyhm_free_energy` the KL of the momentum marginal to its
    stationary law ``N(0, I/eta_x)`` and the kinetic term
    ``eta_theta/2 * ||m||^2``.
    """
    if eta_theta <= 0 or eta_x <= 0:
        raise ValueError("eta_theta and eta_x must be positive")
    u_mean = np.asarray(u_mean, dtype=float).ravel()
    u_var = np.broadcast_to(np.asarray(u_var, dtype=float), u_mean.shape)
    if np.any(u_var <= 0):
        raise ValueError("u variances must be positive")
    m = np.asarray(m, dtype=float).ravel()
    base = toyhm_free_energy(theta, q_mean, q_var, y, sigma2)
    kl_u = _gauss_kl(u_mean, u_var, np.zeros_like(u_mean), 1.0 / eta_x)
    return float(base + kl_u + 0.5 * eta_theta * (m @ m))


def param_error(theta, theta_star) -> float:
    """Euclidean distance to the reference parameter."""
    d = np.asarray(theta, dtype=float).ravel() - np.asarray(theta_star, dtype=float).ravel()
    return float(np.linalg.norm(d))


def sign_changes_after_first_crossing(values, target: float, hysteresis: float = 0.0) -> int:
    """Count sign changes of ``values - target`` after the first crossing.

    A crossing only counts once the series moves beyond ``hysteresis`` on
    the far side, which keeps noise-floor dithering around the target from
    registering as oscillation.  Returns 0 when the series never crosses.
    """
    v = np.asarray(values, dtype=float).ravel() - target
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0
    crossings = 0
    cur = math.copysign(1.0, v[0]) if v[0] != 0 else 1.0
    for x in v[1:]:
        if x * cur < -hysteresis:
            crossings += 1
            cur = -cur
    return max(0, crossings - 1)
