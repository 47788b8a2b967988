"""Run configuration: parsing, exhaustive validation, component builders.

Configs are nested YAML with a ``config_version`` field.  Validation collects
every violation (dotted field paths) before failing, and the canonical
resolved dictionary is what gets digested, so defaults cannot silently change
a run's identity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .estimators import (
    LikelihoodEstimate, MlmcPlan, estimate_dps, estimate_gaussian_mc,
    estimate_mlmc, estimate_naive_mc,
)
from .gmm import GmmModel, make_gmm, make_ring_gmm, make_symmetric_pair
from .likelihoods import (
    Ball, Box, ClassifierLikelihood, GaussianLikelihood, IndicatorLikelihood, Likelihood,
)
from .schedule import DiffusionSchedule, make_level_grid, make_linear_schedule
from .smc import Estimator, Proposal, ResampleSchedule, SamplerSetup

CONFIG_VERSION = 1

EXPERIMENT_IDS = (
    "dps_bias", "variance_decay", "guidance_benchmark", "rare_event",
    "ess_trace", "posterior_panel",
)

ESTIMATOR_KINDS = ("dps", "gaussian_mc", "naive_mc", "mlmc")


@dataclass
class RunConfig:
    """Fully validated configuration with built components."""

    resolved: dict                 # canonical dict, digested for run identity
    model: GmmModel
    schedule: DiffusionSchedule
    likelihood: Likelihood
    proposal: Proposal
    estimator_kind: str
    estimator_params: dict
    n_particles: int
    resample: ResampleSchedule
    experiment_id: str | None
    experiment_params: dict
    seeds: list[int]
    output_dir: str
    nominal_seconds_per_nfe: float
    threads: int = 1

    def digest(self) -> str:
        payload = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


class _Check:
    """Accumulates violations instead of failing on the first one."""

    def __init__(self):
        self.violations: list[str] = []

    def fail(self, path: str, reason: str):
        self.violations.append(f"{path}: {reason}")

    def require(self, cond: bool, path: str, reason: str) -> bool:
        if not cond:
            self.fail(path, reason)
        return cond

    def raise_if_any(self):
        if self.violations:
            raise ConfigurationError(self.violations)


def _num(ck: _Check, d: dict, path: str, key: str, default=None, kind=float,
         required=False):
    v = d.get(key, default)
    if v is None:
        if required:
            ck.fail(f"{path}.{key}", "missing required field")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ck.fail(f"{path}.{key}", f"expected a number, got {v!r}")
        return None
    return kind(v)


def _build_model(ck: _Check, spec: dict) -> GmmModel | None:
    kind = spec.get("kind", "means")
    sigma0_sq = _num(ck, spec, "model", "sigma0_sq", 1.0)
    weights = spec.get("weights")
    try:
        if kind == "ring":
            K = _num(ck, spec, "model", "K", 8, int)
            radius = _num(ck, spec, "model", "radius", 8.0)
            return make_ring_gmm(K, radius, sigma0_sq, weights)
        if kind == "symmetric_pair":
            mu = spec.get("mu")
            if mu is None:
                ck.fail("model.mu", "missing required field for symmetric_pair")
                return None
            return make_symmetric_pair(np.asarray(mu, dtype=float), sigma0_sq, weights)
        if kind == "means":
            means = spec.get("means")
            if means is None:
                ck.fail("model.means", "missing required field")
                return None
            return make_gmm(np.asarray(means, dtype=float), sigma0_sq, weights)
        ck.fail("model.kind", f"unknown model kind {kind!r}")
    except ConfigurationError as e:
        for v in e.violations:
            ck.fail("model", v)
    except (TypeError, ValueError) as e:
        ck.fail("model", str(e))
    return None


def _build_schedule(ck: _Check, spec: dict) -> DiffusionSchedule | None:
    T = _num(ck, spec, "schedule", "T", 100, int)
    if T is None:
        return None
    scale = 100.0 / T if T >= 2 else 1.0
    beta_min = _num(ck, spec, "schedule", "beta_min", 1e-4 * scale)
    beta_max = _num(ck, spec, "schedule", "beta_max", 0.2 * scale)
    mode = spec.get("reverse_var_mode", "posterior")
    try:
        return make_linear_schedule(T, beta_min, beta_max, mode)
    except ConfigurationError as e:
        for v in e.violations:
            ck.fail("schedule", v)
    return None


def _build_region(ck: _Check, spec: dict) -> Box | Ball | None:
    kind = spec.get("kind")
    if kind == "box":
        lo, hi = spec.get("lo"), spec.get("hi")
        if lo is None or hi is None:
            ck.fail("likelihood.region", "box needs lo and hi")
            return None
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            ck.fail("likelihood.region", "box needs lo < hi elementwise")
            return None
        return Box(lo=lo, hi=hi)
    if kind == "ball":
        center = spec.get("center")
        radius = _num(ck, spec, "likelihood.region", "radius", required=True)
        if center is None:
            ck.fail("likelihood.region.center", "missing required field")
            return None
        if radius is not None and radius <= 0:
            ck.fail("likelihood.region.radius", f"must be > 0, got {radius}")
            return None
        return Ball(center=np.asarray(center, dtype=float), radius=radius)
    ck.fail("likelihood.region.kind", f"must be box|ball, got {kind!r}")
    return None


def _build_likelihood(ck: _Check, spec: dict, model: GmmModel | None) -> Likelihood | None:
    kind = spec.get("kind")
    try:
        if kind == "classifier":
            if model is None:
                return None
            k = _num(ck, spec, "likelihood", "target_class", None, int, required=True)
            tau = _num(ck, spec, "likelihood", "temperature", 1.0)
            if k is None:
                return None
            return ClassifierLikelihood(model=model, target_class=k, temperature=tau)
        if kind == "gaussian":
            center = spec.get("center")
            omega_sq = _num(ck, spec, "likelihood", "omega_sq", 1.0)
            if center is None:
                ck.fail("likelihood.center", "missing required field")
                return None
            return GaussianLikelihood(center=np.asarray(center, dtype=float), omega_sq=omega_sq)
        if kind == "indicator":
            region = _build_region(ck, spec.get("region") or {})
            smoothing = _num(ck, spec, "likelihood", "smoothing", None)
            if region is None:
                return None
            return IndicatorLikelihood(region=region, smoothing=smoothing)
        ck.fail("likelihood.kind", f"must be classifier|gaussian|indicator, got {kind!r}")
    except (ConfigurationError, IndexError, ValueError) as e:
        ck.fail("likelihood", str(e))
    return None


def _build_plan(ck: _Check, spec: dict) -> MlmcPlan | None:
    T0 = _num(ck, spec, "estimator.plan", "T0", None, int, required=True)
    M = _num(ck, spec, "estimator.plan", "M", 2, int)
    n_samples = spec.get("n_samples")
    if n_samples is None:
        ck.fail("estimator.plan.n_samples", "missing required field")
        return None
    levels = spec.get("levels")
    if levels is not None and levels not in (len(n_samples), len(n_samples) - 1):
        ck.fail(
            "estimator.plan.levels",
            f"levels={levels} inconsistent with {len(n_samples)} sample counts",
        )
        return None
    dyn = spec.get("dynamic_T0")
    if dyn is not None:
        dyn = {int(k): int(v) for k, v in dyn.items()}
    if T0 is None:
        return None
    try:
        return MlmcPlan(T0=T0, M=M, n_samples=tuple(int(n) for n in n_samples), dynamic_T0=dyn)
    except ConfigurationError as e:
        for v in e.violations:
            ck.fail("estimator", v)
    return None


def parse_and_validate(path: str | Path) -> RunConfig:
    """Load, validate and resolve a config file; raises with every violation."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError([f"config: file not found: {path}"])
    with open(path) as f:
        raw = yaml.safe_load(f)
    return validate_config(raw)


def validate_config(raw: dict) -> RunConfig:
    ck = _Check()
    if not isinstance(raw, dict):
        raise ConfigurationError(["config: top level must be a mapping"])
    version = raw.get("config_version")
    ck.require(version == CONFIG_VERSION, "config_version",
               f"must be {CONFIG_VERSION}, got {version!r}")

    model = _build_model(ck, raw.get("model") or {})
    schedule = _build_schedule(ck, raw.get("schedule") or {})
    likelihood = _build_likelihood(ck, raw.get("likelihood") or {}, model)

    # proposal
    pspec = raw.get("proposal") or {}
    pkind = pspec.get("kind", "unconditional")
    gscale = _num(ck, pspec, "proposal", "guidance_scale", 0.0)
    proposal = None
    if pkind not in ("unconditional", "guided"):
        ck.fail("proposal.kind", f"must be unconditional|guided, got {pkind!r}")
    elif likelihood is not None:
        try:
            proposal = Proposal(
                kind=pkind, guidance_scale=gscale,
                likelihood=likelihood if pkind == "guided" else None,
            )
        except ValueError as e:
            ck.fail("proposal", str(e))

    # estimator
    espec = raw.get("estimator") or {}
    ekind = espec.get("kind", "mlmc")
    eparams: dict = {}
    if ekind not in ESTIMATOR_KINDS:
        ck.fail("estimator.kind", f"must be one of {ESTIMATOR_KINDS}, got {ekind!r}")
    elif ekind == "gaussian_mc":
        eparams["m"] = _num(ck, espec, "estimator", "m", 10, int)
        eparams["kernel_var"] = _num(ck, espec, "estimator", "kernel_var", 1.0)
        if eparams["m"] is not None and eparams["m"] < 1:
            ck.fail("estimator.m", f"must be >= 1, got {eparams['m']}")
        if eparams["kernel_var"] is not None and eparams["kernel_var"] <= 0:
            ck.fail("estimator.kernel_var", f"must be > 0, got {eparams['kernel_var']}")
    elif ekind == "naive_mc":
        eparams["m"] = _num(ck, espec, "estimator", "m", 10, int)
        gspec = espec.get("grid") or {}
        eparams["T0"] = _num(ck, gspec, "estimator.grid", "T0", 16, int)
        eparams["M"] = _num(ck, gspec, "estimator.grid", "M", 2, int)
        eparams["level"] = _num(ck, gspec, "estimator.grid", "level", 0, int)
        if eparams["m"] is not None and eparams["m"] < 1:
            ck.fail("estimator.m", f"must be >= 1, got {eparams['m']}")
    elif ekind == "mlmc":
        plan = _build_plan(ck, espec.get("plan") or {})
        eparams["plan"] = plan

    # smc
    sspec = raw.get("smc") or {}
    n_particles = _num(ck, sspec, "smc", "n_particles", 16, int)
    if n_particles is not None and n_particles < 1:
        ck.fail("smc.n_particles", f"must be >= 1, got {n_particles}")
    steps = sspec.get("resample_steps", [])
    resample = None
    T = schedule.T if schedule is not None else None
    if not isinstance(steps, (list, tuple)):
        ck.fail("smc.resample_steps", f"expected a list, got {steps!r}")
    else:
        bad = [s for s in steps if not isinstance(s, int) or s < 1 or (T and s > T)]
        if bad:
            ck.fail("smc.resample_steps", f"steps must be integers in [1, T]; offending: {bad}")
        else:
            method = sspec.get("method", "systematic")
            thr = _num(ck, sspec, "smc", "adaptive_threshold", None)
            try:
                resample = ResampleSchedule(
                    steps=tuple(steps), method=method, adaptive_threshold=thr
                )
            except ValueError as e:
                ck.fail("smc", str(e))

    # experiment
    xspec = raw.get("experiment") or {}
    experiment_id = xspec.get("id")
    if experiment_id is not None and experiment_id not in EXPERIMENT_IDS:
        ck.fail("experiment.id", f"unknown experiment id {experiment_id!r}; known: {EXPERIMENT_IDS}")
    experiment_params = xspec.get("params") or {}

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and s >= 0 for s in seeds
    ):
        ck.fail("seeds", f"expected a non-empty list of non-negative integers, got {seeds!r}")

    output_dir = raw.get("output_dir", "runs")
    nominal = _num(ck, raw, "config", "nominal_seconds_per_nfe", 1e-4)
    threads = _num(ck, raw, "config", "threads", 1, int)
    if threads is not None and threads < 1:
        ck.fail("threads", f"must be >= 1, got {threads}")

    ck.raise_if_any()

    resolved = _resolve(raw, model, schedule, likelihood, proposal, ekind, eparams,
                        n_particles, resample, experiment_id, experiment_params,
                        seeds, output_dir, nominal, threads)
    return RunConfig(
        resolved=resolved, model=model, schedule=schedule, likelihood=likelihood,
        proposal=proposal, estimator_kind=ekind, estimator_params=eparams,
        n_particles=n_particles, resample=resample,
        experiment_id=experiment_id, experiment_params=experiment_params,
        seeds=list(seeds), output_dir=str(output_dir),
        nominal_seconds_per_nfe=nominal, threads=threads,
    )


def _resolve(raw, model, schedule, likelihood, proposal, ekind, eparams,
             n_particles, resample, experiment_id, experiment_params,
             seeds, output_dir, nominal, threads) -> dict:
    """Canonical dict of everything that defines the run (digest input)."""
    est: dict = {"kind": ekind}
    for k, v in eparams.items():
        if isinstance(v, MlmcPlan):
            est["plan"] = {
                "T0": v.T0, "M": v.M, "n_samples": list(v.n_samples),
                "dynamic_T0": v.dynamic_T0,
            }
        else:
            est[k] = v
    return {
        "config_version": CONFIG_VERSION,
        "model": {
            "means": np.asarray(model.means).tolist(),
            "sigma0_sq": model.sigma0_sq,
            "weights": np.asarray(model.weights).tolist(),
        },
        "schedule": {
            "T": schedule.T,
            "beta_min": float(schedule.beta[0]),
            "beta_max": float(schedule.beta[-1]),
            "reverse_var_mode": schedule.reverse_var_mode,
        },
        "likelihood": _likelihood_dict(likelihood),
        "proposal": {"kind": proposal.kind, "guidance_scale": proposal.guidance_scale},
        "estimator": est,
        "smc": {
            "n_particles": n_particles,
            "resample_steps": list(resample.steps),
            "method": resample.method,
            "adaptive_threshold": resample.adaptive_threshold,
        },
        "experiment": {"id": experiment_id, "params": experiment_params},
        "seeds": list(seeds),
        "output_dir": str(output_dir),
        "nominal_seconds_per_nfe": nominal,
        "threads": threads,
    }


def _likelihood_dict(lik: Likelihood) -> dict:
    if isinstance(lik, ClassifierLikelihood):
        return {"kind": "classifier", "target_class": lik.target_class,
                "temperature": lik.temperature}
    if isinstance(lik, GaussianLikelihood):
        return {"kind": "gaussian", "center": lik.center.tolist(), "omega_sq": lik.omega_sq}
    region = lik.region
    if isinstance(region, Box):
        rdict = {"kind": "box", "lo": region.lo.tolist(), "hi": region.hi.tolist()}
    else:
        rdict = {"kind": "ball", "center": region.center.tolist(), "radius": region.radius}
    return {"kind": "indicator", "region": rdict, "smoothing": lik.smoothing}


def bind_estimator(kind: str, params: dict, model: GmmModel,
                   schedule: DiffusionSchedule, lik: Likelihood) -> Estimator:
    """Bind an estimator kind to (model, schedule, likelihood).

    At t=0 every estimator reduces to the exact likelihood at zero cost.
    """
    if kind not in ESTIMATOR_KINDS:
        raise ConfigurationError([f"estimator.kind: unknown kind {kind!r}"])

    def est(t: int, x, stream) -> LikelihoodEstimate:
        if t == 0:
            return LikelihoodEstimate(log_value=float(lik.log_lik(x)), n_oracle_calls=0)
        if kind == "dps":
            return estimate_dps(model, schedule, lik, t, x)
        if kind == "gaussian_mc":
            return estimate_gaussian_mc(
                model, schedule, lik, t, x, params["m"], params["kernel_var"], stream
            )
        if kind == "naive_mc":
            grid = naive_grid(schedule, t, params["T0"], params["M"], params["level"])
            return estimate_naive_mc(model, schedule, lik, t, x, params["m"], grid, stream)
        return estimate_mlmc(model, schedule, lik, t, x, params["plan"], stream)

    est.kind = kind
    return est


def build_estimator(cfg: RunConfig) -> Estimator:
    return bind_estimator(cfg.estimator_kind, cfg.estimator_params,
                          cfg.model, cfg.schedule, cfg.likelihood)


def naive_grid(schedule: DiffusionSchedule, t: int, T0: int, M: int, level: int):
    """Level grid for naive MC at time t, capped to what fits above t=0."""
    T0 = min(T0, t)
    while level > 0 and T0 * M**level > t:
        level -= 1
    return make_level_grid(schedule, t, T0, M, level)


def estimator_call_count(kind: str, params: dict, schedule: DiffusionSchedule, t: int) -> int:
    """Deterministic oracle-call count of one estimate at time t."""
    if t == 0:
        return 0
    if kind in ("dps", "gaussian_mc"):
        return 1
    if kind == "naive_mc":
        return params["m"] * naive_grid(schedule, t, params["T0"], params["M"], params["level"]).n_steps
    from .estimators import mlmc_grids
    plan: MlmcPlan = params["plan"]
    calls = 0
    for level, grid in enumerate(mlmc_grids(schedule, plan, t)):
        calls += plan.n_samples[level] * grid.n_steps
        if level > 0:
            calls += plan.n_samples[level] * grid.coarsened().n_steps
    return calls


def build_setup(cfg: RunConfig) -> SamplerSetup:
    return SamplerSetup(
        model=cfg.model, schedule=cfg.schedule, likelihood=cfg.likelihood,
        proposal=cfg.proposal, estimator=build_estimator(cfg),
        n_particles=cfg.n_particles, resample=cfg.resample, n_threads=cfg.threads,
    )
