"""Momentum particle descent and baselines for latent-variable MLE.

The package discretizes the damped-Hamiltonian interacting-particle dynamics
that minimizes the free energy of a latent-variable model, alongside plain
particle gradient descent and a Nesterov-style ablation, with analytic toy
models, closed-form oracles, and a CLI for running, comparing, and sweeping
experiments.
"""

from .diagnostics import RunRecord, abc, empirical_w1, momentum_free_energy, toyhm_free_energy
from .extras import RmsPropState, SubsampleSchedule, eta_from_mu, precondition, rmsprop_update, subsampled_step
from .integrators import (MomentumParams, TransitionCoefficients, VariantConfig,
                          exact_transition_moments, grad_free_energy_theta, mpd_step,
                          nc_step, partial_theta, pgd_step, transition_coefficients)
from .models import (GaussianLinearModel, LatentModel, TinyDecoderModel, ToyHM,
                     toyhm_lipschitz, toyhm_mle, toyhm_posterior)
from .state import (CloudInit, ParticleCloud, RngSpec, ThetaState, gaussian_draw,
                    init_state, load_checkpoint, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "CloudInit", "GaussianLinearModel", "LatentModel", "MomentumParams",
    "ParticleCloud", "RmsPropState", "RngSpec", "RunRecord", "SubsampleSchedule",
    "ThetaState", "TinyDecoderModel", "ToyHM", "TransitionCoefficients",
    "VariantConfig", "abc", "empirical_w1", "eta_from_mu",
    "exact_transition_moments", "gaussian_draw", "grad_free_energy_theta",
    "init_state", "load_checkpoint", "momentum_free_energy", "mpd_step", "nc_step",
    "partial_theta", "pgd_step", "precondition", "rmsprop_update", "save_checkpoint",
    "subsampled_step", "toyhm_free_energy", "toyhm_lipschitz", "toyhm_mle",
    "toyhm_posterior", "transition_coefficients",
]
