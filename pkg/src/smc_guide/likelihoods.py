"""Conditioning functions p(y | x0): classifier, Gaussian, and indicator.

All evaluation is in log space; the hard indicator returns exactly -inf on a
miss.  Indicator likelihoods also expose a differentiable relaxation
-softplus(signed_distance / smoothing) used only by guided proposals, never by
importance weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError
from .gmm import GmmModel, class_posterior, _as_batch


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        """Negative inside, positive outside, zero on the boundary."""
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        q = np.abs(x - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def distance_grad(self, x: np.ndarray) -> np.ndarray:
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        rel = x - center
        q = np.abs(rel) - half
        qpos = np.maximum(q, 0.0)
        outside = np.linalg.norm(qpos, axis=-1, keepdims=True)
        grad = np.zeros_like(x)
        out = outside[..., 0] > 0
        grad[out] = qpos[out] * np.sign(rel[out]) / outside[out]
        if np.any(~out):
            # inside: push along the axis closest to the boundary
            j = q[~out].argmax(axis=-1)
            g_in = np.zeros_like(grad[~out])
            g_in[np.arange(len(j)), j] = np.sign(rel[~out][np.arange(len(j)), j])
            grad[~out] = g_in
        return grad


@dataclass(frozen=True)
class Ball:
    """Euclidean ball of the given center and radius."""

    center: np.ndarray
    radius: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x - self.center, axis=-1) <= self.radius

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def distance_grad(self, x: np.ndarray) -> np.ndarray:
        rel = x - self.center
        r = np.linalg.norm(rel, axis=-1, keepdims=True)
        return np.divide(rel, r, out=np.zeros_like(rel), where=r > 0)


class Likelihood:
    """Base class; subclasses implement log_lik (and grad_log_lik if smooth)."""

    differentiable = False

    def log_lik(self, x0) -> np.ndarray | float:
        raise NotImplementedError

    def grad_log_lik(self, x0) -> np.ndarray:
        raise ValueError(f"{type(self).__name__} has no gradient; use a smoothed surrogate")


@dataclass(frozen=True)
class ClassifierLikelihood(Likelihood):
    """p(y=k | x0): exact class posterior of the mixture prior, tempered by 1/tau."""

    model: GmmModel
    target_class: int
    temperature: float = 1.0
    differentiable = True

    def __post_init__(self):
        if not (0 <= self.target_class < self.model.K):
            raise IndexError(
                f"target_class {self.target_class} out of range for K={self.model.K}"
            )
        if self.temperature <= 0:
            raise ConfigurationError(f"likelihood.temperature: must be > 0, got {self.temperature}")

    def log_lik(self, x0):
        xb, single = _as_batch(x0)
        r = class_posterior(self.model, xb)
        with np.errstate(divide="ignore"):
            out = np.log(r[:, self.target_class]) / self.temperature
        return float(out[0]) if single else out

    def grad_log_lik(self, x0):
        xb, single = _as_batch(x0)
        r = class_posterior(self.model, xb)
        mu_k = self.model.means[self.target_class]
        out = (mu_k[None, :] - r @ self.model.means) / (
            self.model.sigma0_sq * self.temperature
        )
        return out[0] if single else out


@dataclass(frozen=True)
class GaussianLikelihood(Likelihood):
    """Unnormalized density exp(-||x0 - center||^2 / (2 omega^2))."""

    center: np.ndarray
    omega_sq: float
    differentiable = True

    def __post_init__(self):
        if self.omega_sq <= 0:
            raise ConfigurationError(f"likelihood.omega_sq: must be > 0, got {self.omega_sq}")

    def log_lik(self, x0):
        xb, single = _as_batch(x0)
        out = -((xb - self.center) ** 2).sum(axis=-1) / (2.0 * self.omega_sq)
        return float(out[0]) if single else out

    def grad_log_lik(self, x0):
        xb, single = _as_batch(x0)
        out = -(xb - self.center) / self.omega_sq
        return out[0] if single else out


@dataclass(frozen=True)
class IndicatorLikelihood(Likelihood):
    """1 if x0 in the region else 0; log form is exactly 0 / -inf."""

    region: Box | Ball
    smoothing: float | None = None  # length scale for the guided-proposal surrogate

    def log_lik(self, x0):
        xb, single = _as_batch(x0)
        out = np.where(self.region.contains(xb), 0.0, -np.inf)
        return float(out[0]) if single else out

    def smoothed_log(self, x0, smoothing: float | None = None):
        return smoothed_indicator_log(self, x0, smoothing or self.smoothing)

    def smoothed_grad(self, x0, smoothing: float | None = None) -> np.ndarray:
        h = smoothing or self.smoothing
        if h is None or h <= 0:
            raise ConfigurationError(f"likelihood.smoothing: must be > 0, got {h}")
        xb, single = _as_batch(x0)
        sd = self.region.signed_distance(xb)
        sig = expit(sd / h)
        out = -(sig / h)[:, None] * self.region.distance_grad(xb)
        return out[0] if single else out


def log_likelihood(lik: Likelihood, x0) -> np.ndarray | float:
    """log p(y | x0) for any likelihood kind."""
    return lik.log_lik(x0)


def smoothed_indicator_log(lik: IndicatorLikelihood, x0, smoothing: float) -> np.ndarray | float:
    """-softplus(signed_distance / smoothing): ~0 deep inside, -> -inf outside."""
    if not isinstance(lik, IndicatorLikelihood):
        raise ValueError("smoothed_indicator_log applies to indicator likelihoods only")
    if smoothing is None or smoothing <= 0:
        raise ConfigurationError(f"likelihood.smoothing: must be > 0, got {smoothing}")
    xb, single = _as_batch(x0)
    sd = lik.region.signed_distance(xb)
    out = -np.logaddexp(0.0, sd / smoothing)
    return float(out[0]) if single else out
