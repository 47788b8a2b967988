"""Reverse-time integrators: single steps, trajectories, and coupled pairs.

A step from time t_hi down to t_lo treats the gap as one Gaussian reverse step
with effective coefficient a = abar_{t_hi} / abar_{t_lo}:

    mean = (x + (1 - a) * score(x, t_hi)) / sqrt(a)

and injected variance (1 - abar_{t_lo}) / (1 - abar_{t_hi}) * (1 - a) in
posterior mode or (1 - a) in forward mode.  No noise is injected on the final
step into t=0.  Coupled coarse/fine pairs share one noise realization: each
coarse increment is the variance-preserving weighted sum of its M fine
increments, which leaves the coarse endpoint's marginal law unchanged while
correlating the two trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import gmm
from .errors import PropagationError
from .gmm import GmmModel, responsibilities, _as_batch
from .likelihoods import IndicatorLikelihood, Likelihood
from .rng import Stream
from .schedule import DiffusionSchedule, LevelGrid


class ScoreOracle(Protocol):
    d: int

    def score(self, t: int, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class CoupledPair:
    """Endpoints of a fine and a coarse trajectory driven by shared noise."""

    x0_fine: np.ndarray
    x0_coarse: np.ndarray


@dataclass(frozen=True)
class GmmScoreOracle:
    """Exact score of the analytic mixture; the stand-in for a trained network."""

    model: GmmModel
    schedule: DiffusionSchedule

    @property
    def d(self) -> int:
        return self.model.d

    def score(self, t: int, x: np.ndarray) -> np.ndarray:
        return gmm.score(self.model, self.schedule, t, x)


class CountingOracle:
    """Wraps an oracle and counts score evaluations (one per call, any batch)."""

    def __init__(self, base: ScoreOracle):
        self.base = base
        self.calls = 0

    @property
    def d(self) -> int:
        return self.base.d

    def score(self, t: int, x: np.ndarray) -> np.ndarray:
        self.calls += 1
        return self.base.score(t, x)


def guidance_grad(
    model: GmmModel, schedule: DiffusionSchedule, likelihood: Likelihood,
    t: int, x,
) -> np.ndarray:
    """grad_x log p(y | xhat(x)) with xhat the exact posterior mean.

    With r_k the time-t responsibilities, m_k(x) = a x + b_k the per-component
    posterior means and g the likelihood gradient at xhat, the chain rule gives

        J^T g = a g + sum_k r_k <m_k, g> (mu_{k,t} - rbar_t) / var_t.
    """
    xb, single = _as_batch(x)
    abar = schedule.alpha_bar_t(t)
    var_t = 1.0 - abar * (1.0 - model.sigma0_sq)
    r = responsibilities(model, schedule, t, xb)                      # (n, K)
    a = model.sigma0_sq * np.sqrt(abar) / var_t
    mk = a * xb[:, None, :] + ((1.0 - abar) / var_t) * model.means[None, :, :]  # (n, K, d)
    xhat = (r[:, :, None] * mk).sum(axis=1)
    if isinstance(likelihood, IndicatorLikelihood):
        g = np.atleast_2d(likelihood.smoothed_grad(xhat))
    else:
        g = np.atleast_2d(likelihood.grad_log_lik(xhat))
    mu_t = np.sqrt(abar) * model.means                                # (K, d)
    rbar = r @ mu_t                                                   # (n, d)
    mk_dot_g = (mk * g[:, None, :]).sum(axis=2)                       # (n, K)
    corr = ((r * mk_dot_g)[:, :, None] * (mu_t[None, :, :] - rbar[:, None, :])).sum(axis=1)
    out = a * g + corr / var_t
    return out[0] if single else out


@dataclass(frozen=True)
class GuidedScoreOracle:
    """Base score plus scaled likelihood guidance through the posterior mean."""

    base: GmmScoreOracle
    likelihood: Likelihood
    guidance_scale: float

    @property
    def d(self) -> int:
        return self.base.d

    def score(self, t: int, x: np.ndarray) -> np.ndarray:
        s = self.base.score(t, x)
        if self.guidance_scale == 0.0:
            return s
        g = guidance_grad(self.base.model, self.base.schedule, self.likelihood, t, x)
        return s + self.guidance_scale * g


def guided_score(
    base: GmmScoreOracle, likelihood: Likelihood, guidance_scale: float, t: int, x
) -> np.ndarray:
    """Score of the heuristically guided proposal at (t, x)."""
    if isinstance(likelihood, IndicatorLikelihood) and not (
        likelihood.smoothing and likelihood.smoothing > 0
    ):
        raise ValueError("indicator likelihood needs a smoothing length for guidance")
    return GuidedScoreOracle(base, likelihood, guidance_scale).score(t, x)


def step_coeffs(schedule: DiffusionSchedule, t_hi: int, t_lo: int) -> tuple[float, float]:
    """(alpha_eff, injected variance) for the reverse step t_hi -> t_lo."""
    if not (0 <= t_lo < t_hi <= schedule.T):
        raise ValueError(f"invalid step {t_hi} -> {t_lo} for T={schedule.T}")
    ab_hi = schedule.alpha_bar_t(t_hi)
    ab_lo = schedule.alpha_bar_t(t_lo)
    a = ab_hi / ab_lo
    if t_lo == 0:
        return a, 0.0
    if schedule.reverse_var_mode == "posterior":
        return a, (1.0 - ab_lo) / (1.0 - ab_hi) * (1.0 - a)
    return a, 1.0 - a


def reverse_mean(
    oracle: ScoreOracle, schedule: DiffusionSchedule, t_hi: int, t_lo: int, x: np.ndarray
) -> np.ndarray:
    a, _ = step_coeffs(schedule, t_hi, t_lo)
    s = oracle.score(t_hi, x)
    if not np.all(np.isfinite(s)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(s)).all(axis=1))
        raise PropagationError(t_hi, int(bad[0, 0]) if bad.size else None)
    return (x + (1.0 - a) * s) / np.sqrt(a)


def reverse_step(
    oracle: ScoreOracle, schedule: DiffusionSchedule, t: int, x_t, noise,
    t_next: int | None = None,
) -> np.ndarray:
    """One reverse step x_t -> x_{t_next} (default t-1)."""
    t_next = t - 1 if t_next is None else t_next
    x_t = np.asarray(x_t, dtype=float)
    noise = np.asarray(noise, dtype=float)
    _, var = step_coeffs(schedule, t, t_next)
    mean = reverse_mean(oracle, schedule, t, t_next, x_t)
    return mean + np.sqrt(var) * noise


def denoise_batch(
    oracle: ScoreOracle, schedule: DiffusionSchedule, grid: LevelGrid,
    x_start: np.ndarray, streams: list[Stream],
) -> np.ndarray:
    """Integrate m trajectories along the grid; one keyed stream per sample.

    Each stream yields exactly one noise vector per grid step, drawn up front
    so the math vectorizes across samples.
    """
    x = np.array(x_start, dtype=float, copy=True)
    m, d = x.shape
    n = grid.n_steps
    noise = np.stack([s.generator().standard_normal((n, d)) for s in streams])
    for j in range(n):
        t_hi, t_lo = int(grid.indices[j]), int(grid.indices[j + 1])
        _, var = step_coeffs(schedule, t_hi, t_lo)
        x = reverse_mean(oracle, schedule, t_hi, t_lo, x) + np.sqrt(var) * noise[:, j, :]
    return x


def denoise_trajectory(
    oracle: ScoreOracle, schedule: DiffusionSchedule, grid: LevelGrid,
    x_start, stream: Stream,
) -> np.ndarray:
    """Endpoint x0 of the reverse trajectory started at (grid.t_start, x_start)."""
    x_start = np.asarray(x_start, dtype=float)
    return denoise_batch(oracle, schedule, grid, x_start[None, :], [stream])[0]


def _fine_step_vars(schedule: DiffusionSchedule, grid: LevelGrid) -> np.ndarray:
    return np.array([
        step_coeffs(schedule, int(grid.indices[j]), int(grid.indices[j + 1]))[1]
        for j in range(grid.n_steps)
    ])


def coupled_denoise_batch(
    oracle: ScoreOracle, schedule: DiffusionSchedule, grid_fine: LevelGrid,
    x_start: np.ndarray, streams: list[Stream],
) -> tuple[np.ndarray, np.ndarray]:
    """m coupled fine/coarse trajectory pairs from shared fine noise."""
    if grid_fine.level < 1:
        raise ValueError("coupled_denoise needs a grid of level >= 1")
    grid_coarse = grid_fine.coarsened()
    M = grid_fine.refinement
    x = np.array(x_start, dtype=float, copy=True)
    m, d = x.shape
    n_f = grid_fine.n_steps
    noise = np.stack([s.generator().standard_normal((n_f, d)) for s in streams])

    # coarse increments: variance-preserving sums of the fine increments
    v = _fine_step_vars(schedule, grid_fine).reshape(grid_coarse.n_steps, M)
    sq = np.sqrt(v)
    denom = np.sqrt(v.sum(axis=1))
    grouped = noise.reshape(m, grid_coarse.n_steps, M, d)
    coarse_noise = (grouped * sq[None, :, :, None]).sum(axis=2)
    np.divide(coarse_noise, denom[None, :, None], out=coarse_noise,
              where=denom[None, :, None] > 0)
    coarse_noise[:, denom == 0, :] = 0.0

    xf = x
    for j in range(n_f):
        t_hi, t_lo = int(grid_fine.indices[j]), int(grid_fine.indices[j + 1])
        _, var = step_coeffs(schedule, t_hi, t_lo)
        xf = reverse_mean(oracle, schedule, t_hi, t_lo, xf) + np.sqrt(var) * noise[:, j, :]

    xc = np.array(x_start, dtype=float, copy=True)
    for j in range(grid_coarse.n_steps):
        t_hi, t_lo = int(grid_coarse.indices[j]), int(grid_coarse.indices[j + 1])
        _, var = step_coeffs(schedule, t_hi, t_lo)
        xc = reverse_mean(oracle, schedule, t_hi, t_lo, xc) + np.sqrt(var) * coarse_noise[:, j, :]
    return xf, xc


def coupled_denoise(
    oracle: ScoreOracle, schedule: DiffusionSchedule, grid_fine: LevelGrid,
    x_start, stream: Stream,
) -> CoupledPair:
    """One synchronously coupled pair; endpoints share the fine noise."""
    x_start = np.asarray(x_start, dtype=float)
    xf, xc = coupled_denoise_batch(oracle, schedule, grid_fine, x_start[None, :], [stream])
    return CoupledPair(x0_fine=xf[0], x0_coarse=xc[0])
