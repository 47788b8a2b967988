"""Estimators of the marginal likelihood p(y | x_t).

Four routes with very different bias/cost profiles:

* ``estimate_dps``        - likelihood at the posterior mean (biased, 1 call).
* ``estimate_gaussian_mc``- MC over a Gaussian kernel at the posterior mean
                            (biased, 1 call).
* ``estimate_naive_mc``   - MC over reverse-process endpoints (unbiased for the
                            grid-discretized process, m * steps calls).
* ``estimate_mlmc``       - telescoping multilevel estimator with coupled
                            pairs; unbiased for the finest-grid process at a
                            fraction of the naive cost.

All estimators return a log-value plus exact oracle-call accounting.  The MLMC
telescoping sum is signed, so a non-positive total is clamped to a tiny floor
and flagged rather than silently dropped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError
from .gmm import GmmModel, posterior_mean
from .likelihoods import Likelihood
from .reverse import GmmScoreOracle, ScoreOracle, coupled_denoise_batch, denoise_batch
from .rng import Stream
from .schedule import DiffusionSchedule, LevelGrid, make_level_grid

MLMC_FLOOR = 1e-300


@dataclass(frozen=True)
class MlmcPlan:
    """Level hierarchy: base steps T0, refinement M, per-level sample counts.

    ``n_samples[l]`` is the count for level l; the number of levels is
    ``L + 1`` with L = len(n_samples) - 1.  ``dynamic_T0`` optionally maps a
    time threshold to a replacement T0 used whenever t <= threshold.
    """

    T0: int
    M: int
    n_samples: tuple[int, ...]
    dynamic_T0: dict[int, int] | None = None

    def __post_init__(self):
        violations = []
        if self.T0 < 1:
            violations.append(f"plan.T0: must be >= 1, got {self.T0}")
        if self.M < 2:
            violations.append(f"plan.M: must be >= 2, got {self.M}")
        if len(self.n_samples) < 1 or any(n < 1 for n in self.n_samples):
            violations.append(f"plan.n_samples: all counts must be >= 1, got {self.n_samples}")
        if self.dynamic_T0 and any(v < 1 for v in self.dynamic_T0.values()):
            violations.append(f"plan.dynamic_T0: T0 values must be >= 1, got {self.dynamic_T0}")
        if violations:
            raise ConfigurationError(violations)
        if any(a < b for a, b in zip(self.n_samples, self.n_samples[1:])):
            warnings.warn(f"plan.n_samples not non-increasing: {self.n_samples}", stacklevel=2)

    @property
    def L(self) -> int:
        return len(self.n_samples) - 1

    def effective_T0(self, t: int) -> int:
        """Base step count at time t, honoring the dynamic schedule."""
        if self.dynamic_T0:
            eligible = [thr for thr in self.dynamic_T0 if t <= thr]
            if eligible:
                return self.dynamic_T0[min(eligible)]
        return self.T0


@dataclass
class LikelihoodEstimate:
    """A log-space estimate with exact cost accounting."""

    log_value: float
    n_oracle_calls: int
    variance_proxy: list[float] | None = None
    clamped: bool = False


def estimate_dps(
    model: GmmModel, schedule: DiffusionSchedule, lik: Likelihood, t: int, x_t
) -> LikelihoodEstimate:
    """Point estimate: likelihood at the exact posterior mean E[x0 | x_t]."""
    xhat = posterior_mean(model, schedule, t, np.asarray(x_t, dtype=float))
    return LikelihoodEstimate(log_value=float(lik.log_lik(xhat)), n_oracle_calls=1)


def estimate_gaussian_mc(
    model: GmmModel, schedule: DiffusionSchedule, lik: Likelihood, t: int, x_t,
    m: int, kernel_var: float, stream: Stream,
) -> LikelihoodEstimate:
    """Mean likelihood over m draws from N(E[x0 | x_t], kernel_var I)."""
    if m < 1:
        raise ConfigurationError(f"estimator.m: must be >= 1, got {m}")
    if kernel_var <= 0:
        raise ConfigurationError(f"estimator.kernel_var: must be > 0, got {kernel_var}")
    xhat = posterior_mean(model, schedule, t, np.asarray(x_t, dtype=float))
    z = stream.generator().standard_normal((m, model.d))
    logp = np.atleast_1d(lik.log_lik(xhat[None, :] + np.sqrt(kernel_var) * z))
    return LikelihoodEstimate(
        log_value=float(logsumexp(logp) - np.log(m)), n_oracle_calls=1
    )


def estimate_naive_mc(
    model: GmmModel, schedule: DiffusionSchedule, lik: Likelihood, t: int, x_t,
    m: int, grid: LevelGrid, stream: Stream, oracle: ScoreOracle | None = None,
) -> LikelihoodEstimate:
    """Unbiased MC over m reverse-trajectory endpoints on the given grid."""
    if m < 1:
        raise ConfigurationError(f"estimator.m: must be >= 1, got {m}")
    x_t = np.asarray(x_t, dtype=float)
    oracle = oracle or GmmScoreOracle(model, schedule)
    starts = np.broadcast_to(x_t, (m, model.d))
    streams = [stream.child(grid.level, i) for i in range(m)]
    x0 = denoise_batch(oracle, schedule, grid, starts, streams)
    logp = np.atleast_1d(lik.log_lik(x0))
    with np.errstate(invalid="ignore"):
        log_value = float(logsumexp(logp) - np.log(m))
    return LikelihoodEstimate(log_value=log_value, n_oracle_calls=m * grid.n_steps)


def mlmc_grids(schedule: DiffusionSchedule, plan: MlmcPlan, t: int) -> list[LevelGrid]:
    """Level grids at time t, truncated to the levels that fit above t=0.

    The base step count is capped at t and levels whose grids would need more
    than t distinct times are dropped, so the estimator always targets the
    finest feasible grid.
    """
    T0 = min(plan.effective_T0(t), t)
    grids = []
    for level in range(plan.L + 1):
        if T0 * plan.M**level > t:
            break
        grids.append(make_level_grid(schedule, t, T0, plan.M, level))
    return grids


def estimate_mlmc(
    model: GmmModel, schedule: DiffusionSchedule, lik: Likelihood, t: int, x_t,
    plan: MlmcPlan, stream: Stream, oracle: ScoreOracle | None = None,
) -> LikelihoodEstimate:
    """Telescoping estimator: coarse mean plus coupled-pair corrections.

    Y_0 averages p(y|x0) over N_0 coarse endpoints; Y_l averages the signed
    differences p(y|x0_fine) - p(y|x0_coarse) over N_l coupled pairs.  The
    estimator is unbiased for the finest-level grid expectation.
    """
    x_t = np.asarray(x_t, dtype=float)
    oracle = oracle or GmmScoreOracle(model, schedule)
    grids = mlmc_grids(schedule, plan, t)
    total = 0.0
    calls = 0
    variances: list[float] = []
    for level, grid in enumerate(grids):
        n = plan.n_samples[level]
        starts = np.broadcast_to(x_t, (n, model.d))
        streams = [stream.child(level, i) for i in range(n)]
        if level == 0:
            x0 = denoise_batch(oracle, schedule, grid, starts, streams)
            terms = np.exp(np.atleast_1d(lik.log_lik(x0)))
            calls += n * grid.n_steps
        else:
            xf, xc = coupled_denoise_batch(oracle, schedule, grid, starts, streams)
            terms = np.exp(np.atleast_1d(lik.log_lik(xf))) - np.exp(
                np.atleast_1d(lik.log_lik(xc))
            )
            calls += n * (grid.n_steps + grid.coarsened().n_steps)
        total += float(terms.mean())
        variances.append(float(np.var(terms, ddof=1)) if n > 1 else float("nan"))
    clamped = total <= MLMC_FLOOR
    log_value = float(np.log(max(total, MLMC_FLOOR)))
    return LikelihoodEstimate(
        log_value=log_value, n_oracle_calls=calls,
        variance_proxy=variances, clamped=clamped,
    )
