"""Isotropic Gaussian-mixture prior with closed-form diffusion quantities.

For a mixture with means mu_k, shared variance sigma0^2 and weights w_k, the
forward-noised marginal at step t is again a mixture,

    q_t(x) = sum_k w_k N(x; sqrt(abar_t) mu_k, var_t I),
    var_t  = 1 - abar_t (1 - sigma0^2),

so the score, the class-membership probabilities, and the denoising posterior
p(x0 | x_t) are all exact.  These stand in for a trained denoising network and
double as oracles for every estimator in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import ncx2, norm

from .errors import ConfigurationError
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class GmmModel:
    """K-component isotropic Gaussian mixture in R^d."""

    means: np.ndarray      # (K, d)
    sigma0_sq: float
    weights: np.ndarray    # (K,), positive, sums to 1

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


@dataclass(frozen=True)
class ForwardMarginal:
    """Mixture parameters of q_t: component means sqrt(abar_t) mu_k, shared var."""

    t: int
    component_means: np.ndarray  # (K, d)
    var: float


@dataclass(frozen=True)
class DenoisingPosterior:
    """p(x0 | x_t) as a mixture of isotropic Gaussians."""

    responsibilities: np.ndarray  # (K,)
    component_means: np.ndarray   # (K, d)
    component_var: float


def make_gmm(means, sigma0_sq: float = 1.0, weights=None) -> GmmModel:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    K = means.shape[0]
    violations = []
    if sigma0_sq <= 0:
        violations.append(f"sigma0_sq: must be > 0, got {sigma0_sq}")
    if not np.all(np.isfinite(means)):
        violations.append("means: must be finite")
    if weights is None:
        weights = np.full(K, 1.0 / K)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (K,):
            violations.append(f"weights: expected {K} entries, got shape {weights.shape}")
        elif np.any(weights <= 0):
            violations.append("weights: must be positive")
        elif abs(weights.sum() - 1.0) > 1e-12:
            violations.append(f"weights: must sum to 1 within 1e-12, got {weights.sum()!r}")
    if violations:
        raise ConfigurationError(violations)
    return GmmModel(means=means, sigma0_sq=float(sigma0_sq), weights=weights)


def make_ring_gmm(
    n_components: int = 8, radius: float = 8.0, sigma0_sq: float = 1.0, weights=None
) -> GmmModel:
    """Means equally spaced on a circle of the given radius in d=2."""
    angles = 2.0 * np.pi * np.arange(n_components) / n_components
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return make_gmm(means, sigma0_sq, weights)


def make_symmetric_pair(mu, sigma0_sq: float = 1.0, weights=None) -> GmmModel:
    """Two components at +mu and -mu."""
    mu = np.asarray(mu, dtype=float)
    return make_gmm(np.stack([mu, -mu]), sigma0_sq, weights)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _check_dim(model: GmmModel, x: np.ndarray):
    if x.shape[-1] != model.d:
        raise ValueError(f"point dimension {x.shape[-1]} does not match model d={model.d}")


def forward_marginal(model: GmmModel, schedule: DiffusionSchedule, t: int) -> ForwardMarginal:
    abar = schedule.alpha_bar_t(t)
    var = 1.0 - abar * (1.0 - model.sigma0_sq)
    return ForwardMarginal(t=t, component_means=np.sqrt(abar) * model.means, var=var)


def forward_sample(model: GmmModel, schedule: DiffusionSchedule, t: int, x0, noise) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    _check_dim(model, x0)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} does not match x0 shape {x0.shape}")
    abar = schedule.alpha_bar_t(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def _log_component_densities(x: np.ndarray, means: np.ndarray, var: float,
                             log_weights: np.ndarray) -> np.ndarray:
    """(n, K) array of log w_k + log N(x; mean_k, var I)."""
    d = x.shape[1]
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return log_weights[None, :] - 0.5 * sq / var - 0.5 * d * np.log(2.0 * np.pi * var)


def log_marginal(model: GmmModel, schedule: DiffusionSchedule, t: int, x) -> np.ndarray | float:
    """log q_t(x)."""
    xb, single = _as_batch(x)
    _check_dim(model, xb)
    fm = forward_marginal(model, schedule, t)
    lc = _log_component_densities(xb, fm.component_means, fm.var, model.log_weights)
    out = logsumexp(lc, axis=1)
    return float(out[0]) if single else out


def responsibilities(model: GmmModel, schedule: DiffusionSchedule, t: int, x) -> np.ndarray:
    """Per-component posterior probabilities r_k(x) under q_t; shape (n, K) or (K,)."""
    xb, single = _as_batch(x)
    _check_dim(model, xb)
    fm = forward_marginal(model, schedule, t)
    lc = _log_component_densities(xb, fm.component_means, fm.var, model.log_weights)
    r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    return r[0] if single else r


def score(model: GmmModel, schedule: DiffusionSchedule, t: int, x) -> np.ndarray:
    """Exact score of the noised marginal: grad_x log q_t(x)."""
    xb, single = _as_batch(x)
    _check_dim(model, xb)
    fm = forward_marginal(model, schedule, t)
    lc = _log_component_densities(xb, fm.component_means, fm.var, model.log_weights)
    r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    # sum_k r_k (mu_{k,t} - x) / var = (rbar - x) / var with rbar the r-weighted mean
    out = (r @ fm.component_means - xb) / fm.var
    return out[0] if single else out


def membership_prob(model: GmmModel, schedule: DiffusionSchedule, t: int, x, k: int) -> np.ndarray | float:
    """Pr(y=k | x_t), the class posterior under the time-t mixture."""
    if not (0 <= k < model.K):
        raise IndexError(f"class {k} out of range for K={model.K}")
    r = responsibilities(model, schedule, t, x)
    return r[..., k]


def membership_log_odds(model: GmmModel, schedule: DiffusionSchedule, t: int, x, k: int) -> float:
    """log[ r_k / (1 - r_k) ] at time t, stable where r_k saturates to 0 or 1."""
    if not (0 <= k < model.K):
        raise IndexError(f"class {k} out of range for K={model.K}")
    x = np.asarray(x, dtype=float)
    fm = forward_marginal(model, schedule, t)
    lc = _log_component_densities(x[None, :], fm.component_means, fm.var, model.log_weights)[0]
    others = np.delete(lc, k)
    return float(lc[k] - logsumexp(others))


def class_posterior(model: GmmModel, x) -> np.ndarray:
    """Class posterior at t=0 (abar=1): responsibilities of the prior mixture."""
    xb, single = _as_batch(x)
    _check_dim(model, xb)
    lc = _log_component_densities(xb, model.means, model.sigma0_sq, model.log_weights)
    r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    return r[0] if single else r


def _posterior_coeffs(model: GmmModel, schedule: DiffusionSchedule, t: int) -> tuple[float, float, float]:
    """(abar, marginal var, posterior component var 1/lambda) for step t >= 1."""
    if t < 1:
        raise ValueError(f"denoising posterior needs t >= 1, got t={t}")
    abar = schedule.alpha_bar_t(t)
    var_t = 1.0 - abar * (1.0 - model.sigma0_sq)
    lam = abar / (1.0 - abar) + 1.0 / model.sigma0_sq
    return abar, var_t, 1.0 / lam


def denoising_posterior(model: GmmModel, schedule: DiffusionSchedule, t: int, x_t) -> DenoisingPosterior:
    """Exact p(x0 | x_t): mixture with time-t responsibilities.

    Per-component Gaussian conjugacy gives precision
    lambda = abar/(1-abar) + 1/sigma0^2 and means
    m_k = (sqrt(abar) x_t / (1-abar) + mu_k / sigma0^2) / lambda.
    """
    x_t = np.asarray(x_t, dtype=float)
    if x_t.ndim != 1:
        raise ValueError("denoising_posterior takes a single point")
    _check_dim(model, x_t)
    abar, _, s_sq = _posterior_coeffs(model, schedule, t)
    r = responsibilities(model, schedule, t, x_t)
    m = s_sq * (np.sqrt(abar) * x_t[None, :] / (1.0 - abar) + model.means / model.sigma0_sq)
    return DenoisingPosterior(responsibilities=r, component_means=m, component_var=s_sq)


def posterior_mean(model: GmmModel, schedule: DiffusionSchedule, t: int, x) -> np.ndarray:
    """E[x0 | x_t] = sum_k r_k m_k; accepts a point or an (n, d) batch."""
    xb, single = _as_batch(x)
    _check_dim(model, xb)
    abar, var_t, s_sq = _posterior_coeffs(model, schedule, t)
    r = responsibilities(model, schedule, t, xb)
    # m_k(x) = (sigma0^2 sqrt(abar) x + (1-abar) mu_k) / var_t
    a = model.sigma0_sq * np.sqrt(abar) / var_t
    out = a * xb + (1.0 - abar) / var_t * (r @ model.means)
    return out[0] if single else out


def sample_denoising_posterior(
    model: GmmModel, schedule: DiffusionSchedule, t: int, x_t, n: int,
    generator: np.random.Generator,
) -> np.ndarray:
    """n exact draws from p(x0 | x_t)."""
    post = denoising_posterior(model, schedule, t, x_t)
    ks = generator.choice(model.K, size=n, p=post.responsibilities)
    z = generator.standard_normal((n, model.d))
    return post.component_means[ks] + np.sqrt(post.component_var) * z


def sample_prior(model: GmmModel, n: int, generator: np.random.Generator) -> np.ndarray:
    """n draws from the mixture prior p0."""
    ks = generator.choice(model.K, size=n, p=model.weights)
    z = generator.standard_normal((n, model.d))
    return model.means[ks] + np.sqrt(model.sigma0_sq) * z


def box_mass(model: GmmModel, lo, hi) -> float:
    """Exact prior mass of the axis-aligned box [lo, hi] under the mixture."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    sd = np.sqrt(model.sigma0_sq)
    per_dim = norm.cdf((hi[None, :] - model.means) / sd) - norm.cdf(
        (lo[None, :] - model.means) / sd
    )
    return float(model.weights @ per_dim.prod(axis=1))


def ball_mass(model: GmmModel, center, radius: float) -> float:
    """Exact prior mass of the ball ||x - center|| <= radius (noncentral chi^2)."""
    center = np.asarray(center, dtype=float)
    nc = ((model.means - center[None, :]) ** 2).sum(axis=1) / model.sigma0_sq
    q = radius**2 / model.sigma0_sq
    return float(model.weights @ ncx2.cdf(q, df=model.d, nc=nc))
