"""Optimizer accessories: RMSProp preconditioning, the momentum-coefficient
heuristic, and the missed-time subsampling scheduler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .state import ThetaState


@dataclass
class RmsPropState:
    """Running elementwise squared-gradient average G with decay beta."""

    d_theta: int
    beta: float = 0.9
    eps: float = 1e-8
    G: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ValueError("beta must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.G is None:
            self.G = np.zeros(self.d_theta)
        else:
            self.G = np.asarray(self.G, dtype=float)

    def update(self, grad) -> None:
        """In-place variant of :func:`rmsprop_update` used inside steps."""
        self.G = rmsprop_update(self, grad).G


def rmsprop_update(state: RmsPropState, grad) -> RmsPropState:
    """G' = beta * G + (1 - beta) * grad**2 (elementwise)."""
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if grad.shape[0] != state.G.shape[0]:
        raise ValueError("gradient dimension does not match preconditioner")
    return RmsPropState(d_theta=state.d_theta, beta=state.beta, eps=state.eps,
                        G=state.beta * state.G + (1.0 - state.beta) * grad * grad)


def precondition(grad, state: RmsPropState) -> np.ndarray:
    """Rescale a gradient elementwise by 1 / (sqrt(G) + eps)."""
    grad = np.asarray(grad, dtype=float).reshape(-1)
    return grad / (np.sqrt(state.G) + state.eps)


def eta_from_mu(mu: float, gamma: float, h: float) -> float:
    """Invert the momentum-coefficient heuristic mu = 1 - h*gamma*eta."""
    if not (0.0 <= mu < 1.0):
        raise ValueError("mu must lie in [0, 1)")
    if gamma <= 0 or h <= 0:
        raise ValueError("gamma and h must be positive")
    return (1.0 - mu) / (h * gamma)


@dataclass(frozen=True)
class SubsampleSchedule:
    """Mini-batch size for a dataset of N factorizing blocks.

    ``catch_up="single"`` advances a stale latent block with one exact
    transition over the whole missed interval ``h_x * missed``;
    ``"repeated"`` replays the missed steps one at a time (fresh noise per
    replayed step, gradient re-frozen each sub-step).
    """

    batch_size: int
    n_data: int
    catch_up: str = "single"

    def __post_init__(self):
        if not (1 <= self.batch_size <= self.n_data):
            raise ValueError("need 1 <= batch_size <= n_data")
        if self.catch_up not in ("single", "repeated"):
            raise ValueError(f"unknown catch-up mode {self.catch_up!r}")

    def draw_indices(self, rng: np.random.Generator) -> np.ndarray:
        """Sorted without-replacement batch for one iteration."""
        idx = rng.choice(self.n_data, size=self.batch_size, replace=False)
        idx.sort()
        return idx


def subsampled_step(state, cloud, model, params, config, indices,
                    schedule: SubsampleSchedule | None = None,
                    preconditioner=None, *, disable_noise: bool = False):
    """One mini-batch step over latent blocks ``indices``.

    First every selected stale block catches up on the time it missed, then
    the selected blocks and (theta, m) take one full step of size h with the
    theta-gradient estimated from the mini-batch and rescaled by N/B to stay
    unbiased.  Counters of unselected blocks are incremented.  Draw order
    (per particle, blocks ascending) is fixed so runs stay deterministic.
    """
    from .integrators import transition_coefficients  # local to avoid a cycle

    if not getattr(model, "factorizes", False):
        raise ValueError("subsampling requires a model that factorizes over data")
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("indices must be nonempty")
    idx = np.unique(idx)
    if idx.min() < 0 or idx.max() >= model.n_data:
        raise ValueError("indices out of range")
    catch_up = schedule.catch_up if schedule is not None else "single"

    noise = 0.0 if disable_noise else 1.0
    momentum_x = config.enrich_x and config.algorithm != "PGD"
    X = cloud.X.copy()
    U = cloud.U.copy()
    missed = cloud.missed.copy()
    M = cloud.n_particles
    bdim = model.block_dim

    # catch-up: advance stale selected blocks by their missed time
    stale = [int(j) for j in idx if missed[j] > 0]
    cols_of = {j: np.arange(j * bdim, (j + 1) * bdim) for j in stale}
    if stale:
        for i in range(M):
            gen = cloud.rngs[i]
            for j in stale:
                cols = cols_of[j]
                reps = int(missed[j]) if catch_up == "repeated" else 1
                t_step = params.h_x if catch_up == "repeated" else params.h_x * float(missed[j])
                for _ in range(reps):
                    g = model.grad_x_blocks(state.theta, X[i:i + 1], np.array([j]))[0]
                    if momentum_x:
                        cc = transition_coefficients(params.gamma_x, params.eta_x, t_step)
                        z = gen.standard_normal((2, bdim))
                        x_new = (X[i, cols] + (cc.iota / cc.gamma) * U[i, cols]
                                 + cc.drift_pos_weight * g + noise * cc.L_xx * z[0])
                        U[i, cols] = (cc.omega * U[i, cols] + cc.drift_mom_weight * g
                                      + (noise * cc.L_xu) * z[0] + (noise * cc.L_uu) * z[1])
                        X[i, cols] = x_new
                    else:
                        z = gen.standard_normal(bdim)
                        X[i, cols] = (X[i, cols] + t_step * g
                                      + noise * math.sqrt(2.0 * t_step) * z)
    missed[idx] = 0

    # theta block on the caught-up cloud, minibatch gradient rescaled by N/B
    scale = model.n_data / idx.size
    momentum_theta = config.enrich_theta and config.algorithm != "PGD"
    ct = None
    theta_eval = state.theta
    if momentum_theta:
        ct = transition_coefficients(params.gamma_theta, params.eta_theta, params.h_theta)
        if config.gradient_correction in ("THETA_ONLY", "FULL"):
            theta_eval = state.theta + (ct.iota / ct.gamma) * state.m
    g_e = -scale * model.grad_theta_mean_minibatch(theta_eval, X, idx)
    if preconditioner is not None:
        preconditioner.update(g_e)
        g_e = precondition(g_e, preconditioner)
    if momentum_theta:
        new_theta = state.theta + (ct.iota / ct.gamma) * state.m - ct.drift_pos_weight * g_e
        new_m = (1.0 - ct.iota) * state.m - ct.drift_mom_weight * g_e
    else:
        new_theta = state.theta - params.h_theta * g_e
        new_m = state.m.copy()

    # x block restricted to the batch
    theta_for_x = new_theta if (momentum_x and config.gradient_correction == "FULL") else state.theta
    all_cols = model._block_columns(idx) if hasattr(model, "_block_columns") else \
        np.concatenate([np.arange(j * bdim, (j + 1) * bdim) for j in idx])
    grads = model.grad_x_blocks(theta_for_x, X, idx)
    if momentum_x:
        cx = transition_coefficients(params.gamma_x, params.eta_x, params.h_x)
        for i in range(M):
            z = cloud.rngs[i].standard_normal((2, all_cols.size))
            x_new = (X[i, all_cols] + (cx.iota / cx.gamma) * U[i, all_cols]
                     + cx.drift_pos_weight * grads[i] + noise * cx.L_xx * z[0])
            U[i, all_cols] = (cx.omega * U[i, all_cols] + cx.drift_mom_weight * grads[i]
                              + (noise * cx.L_xu) * z[0] + (noise * cx.L_uu) * z[1])
            X[i, all_cols] = x_new
    else:
        for i in range(M):
            z = cloud.rngs[i].standard_normal(all_cols.size)
            X[i, all_cols] = (X[i, all_cols] + params.h_x * grads[i]
                              + noise * math.sqrt(2.0 * params.h_x) * z)

    not_selected = np.setdiff1d(np.arange(model.n_data), idx, assume_unique=False)
    missed[not_selected] += 1

    return ThetaState(new_theta, new_m), cloud.replace(X, U, missed=missed)
