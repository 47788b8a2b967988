"""Training-free conditional sampling from diffusion models via SMC-MLMC.

Analytic Gaussian-mixture targets supply exact scores, posteriors, and
membership oracles, so every estimator and the full sampler can be validated
against closed-form ground truth.
"""

from .errors import AllParticlesInfeasible, ConfigurationError, PropagationError
from .estimators import (
    LikelihoodEstimate, MlmcPlan, estimate_dps, estimate_gaussian_mc,
    estimate_mlmc, estimate_naive_mc,
)
from .gmm import (
    GmmModel, denoising_posterior, forward_sample, make_gmm, make_ring_gmm,
    make_symmetric_pair, membership_prob, posterior_mean, score,
)
from .likelihoods import (
    Ball, Box, ClassifierLikelihood, GaussianLikelihood, IndicatorLikelihood,
    log_likelihood, smoothed_indicator_log,
)
from .reverse import (
    CoupledPair, GmmScoreOracle, GuidedScoreOracle, coupled_denoise,
    denoise_trajectory, guided_score, reverse_step,
)
from .rng import Stream
from .schedule import (
    DiffusionSchedule, LevelGrid, make_default_schedule, make_level_grid,
    make_linear_schedule,
)
from .smc import (
    ParticleSet, Proposal, ResampleSchedule, SamplerSetup, ess, init_particles,
    propagate, run_sampler, weigh_and_resample,
)

__version__ = "0.1.0"
