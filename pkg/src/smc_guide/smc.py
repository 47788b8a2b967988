"""Sequential Monte Carlo sampler over the reverse diffusion process.

Particles are propagated one reverse step at a time; at steps of the
resampling schedule the sampler estimates the marginal likelihood of each
particle, forms the epoch weight

    log w_i = [new log Lhat_i - cached log Lhat_i] + accumulated transition
              corrections since the last resample,

normalizes, records the ESS, resamples, and caches the new estimates.  With an
unconditional proposal the corrections are exactly zero and the weight is the
ratio of estimated marginal likelihoods.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import rng
from .errors import AllParticlesInfeasible, PropagationError
from .estimators import LikelihoodEstimate
from .gmm import GmmModel
from .likelihoods import IndicatorLikelihood, Likelihood
from .reverse import GmmScoreOracle, guidance_grad, step_coeffs
from .rng import Stream
from .schedule import DiffusionSchedule

# estimator adapter: (state time, state, stream) -> LikelihoodEstimate
Estimator = Callable[[int, np.ndarray, Stream], LikelihoodEstimate]

RESAMPLE_METHODS = ("systematic", "multinomial")


@dataclass
class ParticleSet:
    """N weighted particles at a common step t."""

    states: np.ndarray          # (N, d)
    log_weights: np.ndarray     # (N,), normalized (logsumexp == 0) when weighed
    cached_log_lik: np.ndarray  # (N,), log Lhat from the previous epoch
    log_correction: np.ndarray  # (N,), transition corrections since last epoch
    epoch: int
    t: int

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class ResampleSchedule:
    """Steps at which weights are computed, plus method and adaptive trigger."""

    steps: tuple[int, ...]
    method: str = "systematic"
    adaptive_threshold: float | None = None   # fraction of N; resample iff ESS below

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(sorted(set(int(s) for s in self.steps), reverse=True)))
        if self.method not in RESAMPLE_METHODS:
            raise ValueError(f"method must be one of {RESAMPLE_METHODS}, got {self.method!r}")
        if self.adaptive_threshold is not None and not (0.0 < self.adaptive_threshold <= 1.0):
            raise ValueError(f"adaptive_threshold must be in (0, 1], got {self.adaptive_threshold}")


@dataclass(frozen=True)
class Proposal:
    """Propagation kernel: the unconditional reverse step, optionally guided."""

    kind: str = "unconditional"
    guidance_scale: float = 0.0
    likelihood: Likelihood | None = None

    def __post_init__(self):
        if self.kind not in ("unconditional", "guided"):
            raise ValueError(f"proposal kind must be unconditional|guided, got {self.kind!r}")
        if self.kind == "guided":
            if self.likelihood is None:
                raise ValueError("guided proposal needs a likelihood")
            if isinstance(self.likelihood, IndicatorLikelihood):
                if not (self.likelihood.smoothing and self.likelihood.smoothing > 0):
                    raise ValueError("guided indicator proposal needs a smoothing length")
            elif not self.likelihood.differentiable:
                raise ValueError("guided proposal needs a differentiable likelihood")


@dataclass
class EpochRecord:
    """Everything observed at one weighing event."""

    trigger_t: int              # loop step in the schedule
    state_t: int                # time of the weighed states (trigger_t - 1)
    ess_pre: float
    ess_post: float
    resampled: bool
    log_weights: np.ndarray     # normalized epoch weights
    new_log_lik: np.ndarray
    corrections: np.ndarray
    parents: np.ndarray | None
    nfe: int

    @property
    def min_log_weight(self) -> float:
        return float(self.log_weights.min())

    @property
    def max_log_weight(self) -> float:
        return float(self.log_weights.max())


@dataclass
class TraceRow:
    t: int
    ess: float
    epoch: int
    nfe: int


@dataclass
class SamplerResult:
    particles: ParticleSet
    trace: list[TraceRow]
    epochs: list[EpochRecord]
    nfe_total: int
    wall_time_s: float
    seed: int


def init_particles(N: int, d: int, stream: Stream, t: int) -> ParticleSet:
    """i.i.d. standard-normal particles with uniform weights and log Lhat = 0."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    states = stream.generator().standard_normal((N, d))
    return ParticleSet(
        states=states,
        log_weights=np.full(N, -np.log(N)),
        cached_log_lik=np.zeros(N),
        log_correction=np.zeros(N),
        epoch=0,
        t=t,
    )


def ess(log_weights) -> float:
    """(sum w)^2 / sum w^2 on normalized weights, computed stably in log space."""
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not finite.any():
        raise ValueError("all log-weights are -inf")
    m = lw[finite].max()
    w = np.exp(lw - m)
    return float(w.sum() ** 2 / np.square(w).sum())


def propagate(
    pset: ParticleSet, oracle: GmmScoreOracle, proposal: Proposal,
    schedule: DiffusionSchedule, noise: np.ndarray,
) -> tuple[ParticleSet, np.ndarray]:
    """Advance every particle one reverse step under the proposal kernel.

    Returns the new set at t-1 and the per-particle log correction
    log[p(x_{t-1}|x_t) / r(x_{t-1}|x_t, y)], which is accumulated on the set.
    The final deterministic step into t=0 is never guided.
    """
    t = pset.t
    if t < 1:
        raise ValueError("particle set is already at t=0")
    a, var = step_coeffs(schedule, t, t - 1)
    s = oracle.score(t, pset.states)
    mean_u = (pset.states + (1.0 - a) * s) / np.sqrt(a)
    guided = proposal.kind == "guided" and proposal.guidance_scale != 0.0 and var > 0.0
    if guided:
        g = guidance_grad(oracle.model, oracle.schedule, proposal.likelihood, t, pset.states)
        mean_p = mean_u + (1.0 - a) * proposal.guidance_scale * g / np.sqrt(a)
    else:
        mean_p = mean_u
    new_states = mean_p + np.sqrt(var) * noise
    if not np.all(np.isfinite(new_states)):
        bad = int(np.argwhere(~np.isfinite(new_states).all(axis=1))[0, 0])
        raise PropagationError(t, bad)
    if guided:
        corr = (
            ((new_states - mean_p) ** 2).sum(axis=1)
            - ((new_states - mean_u) ** 2).sum(axis=1)
        ) / (2.0 * var)
    else:
        corr = np.zeros(pset.n)
    return (
        ParticleSet(
            states=new_states,
            log_weights=pset.log_weights,
            cached_log_lik=pset.cached_log_lik,
            log_correction=pset.log_correction + corr,
            epoch=pset.epoch,
            t=t - 1,
        ),
        corr,
    )


def resample_indices(probs: np.ndarray, method: str, generator: np.random.Generator) -> np.ndarray:
    """Parent indices in ascending order."""
    N = len(probs)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    if method == "systematic":
        points = (generator.random() + np.arange(N)) / N
    elif method == "multinomial":
        points = np.sort(generator.random(N))
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    return np.searchsorted(cdf, points, side="right").astype(int)


def weigh_and_resample(
    pset: ParticleSet, estimator: Estimator, method: str,
    est_stream: Stream, resample_generator: np.random.Generator,
    trigger_t: int | None = None,
    adaptive_threshold: float | None = None,
    n_threads: int = 1,
) -> tuple[ParticleSet, EpochRecord]:
    """One weighing event: estimate, weigh, optionally resample, update caches."""
    t = pset.t
    states = pset.states

    def _one(i: int) -> LikelihoodEstimate:
        return estimator(t, states[i], est_stream.child(i))

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            ests = list(pool.map(_one, range(pset.n)))
    else:
        ests = [_one(i) for i in range(pset.n)]
    new_ll = np.array([e.log_value for e in ests])
    nfe = int(sum(e.n_oracle_calls for e in ests))

    raw = (new_ll - pset.cached_log_lik) + pset.log_correction
    if not np.any(np.isfinite(raw)):
        raise AllParticlesInfeasible(t, list(~np.isfinite(raw)))
    log_w = raw - logsumexp(raw)
    ess_pre = ess(log_w)

    do_resample = adaptive_threshold is None or ess_pre < adaptive_threshold * pset.n
    if do_resample:
        parents = resample_indices(np.exp(log_w), method, resample_generator)
        new_set = ParticleSet(
            states=states[parents],
            log_weights=np.full(pset.n, -np.log(pset.n)),
            cached_log_lik=new_ll[parents],
            log_correction=np.zeros(pset.n),
            epoch=pset.epoch + 1,
            t=t,
        )
        ess_post = float(pset.n)
    else:
        parents = None
        new_set = ParticleSet(
            states=states,
            log_weights=log_w,
            cached_log_lik=pset.cached_log_lik,
            log_correction=pset.log_correction,
            epoch=pset.epoch,
            t=t,
        )
        ess_post = ess_pre
    record = EpochRecord(
        trigger_t=trigger_t if trigger_t is not None else t + 1,
        state_t=t,
        ess_pre=ess_pre,
        ess_post=ess_post,
        resampled=do_resample,
        log_weights=log_w,
        new_log_lik=new_ll,
        corrections=pset.log_correction.copy(),
        parents=parents,
        nfe=nfe,
    )
    return new_set, record


@dataclass
class SamplerSetup:
    """Built components for one sampler run."""

    model: GmmModel
    schedule: DiffusionSchedule
    likelihood: Likelihood
    proposal: Proposal
    estimator: Estimator
    n_particles: int
    resample: ResampleSchedule
    n_threads: int = 1


def run_sampler(
    setup: SamplerSetup, seed: int,
    weigh_only: bool = False, trace_all_steps: bool = False,
) -> SamplerResult:
    """Run the full reverse process with schedule-based weighing and resampling.

    ``trace_all_steps`` computes weights at every step (pilot mode);
    ``weigh_only`` records ESS without ever resampling.
    """
    t_wall = time.perf_counter()
    sched = setup.schedule
    oracle = GmmScoreOracle(setup.model, sched)
    root = Stream(seed)
    N, d, T = setup.n_particles, setup.model.d, sched.T
    pset = init_particles(N, d, root.child(rng.INIT), t=T)
    prop_noise = np.stack(
        [root.child(rng.PROPAGATE, i).generator().standard_normal((T, d)) for i in range(N)]
    )
    steps = set(setup.resample.steps)
    trace: list[TraceRow] = []
    epochs: list[EpochRecord] = []
    nfe = 0
    weigh_count = 0
    for t in range(T, 0, -1):
        pset, _ = propagate(pset, oracle, setup.proposal, sched, prop_noise[:, T - t, :])
        nfe += N
        if trace_all_steps or t in steps:
            # threshold 0.0 records the weights and ESS but never resamples
            threshold = 0.0 if weigh_only else setup.resample.adaptive_threshold
            pset, record = weigh_and_resample(
                pset, setup.estimator, setup.resample.method,
                root.child(rng.ESTIMATE, weigh_count),
                root.child(rng.RESAMPLE, weigh_count).generator(),
                trigger_t=t, adaptive_threshold=threshold, n_threads=setup.n_threads,
            )
            nfe += record.nfe
            epochs.append(record)
            trace.append(TraceRow(t=t, ess=record.ess_pre, epoch=pset.epoch, nfe=nfe))
            weigh_count += 1
    return SamplerResult(
        particles=pset, trace=trace, epochs=epochs, nfe_total=nfe,
        wall_time_s=time.perf_counter() - t_wall, seed=seed,
    )
