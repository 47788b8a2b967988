"""Desk-scale studies with tabular outputs.

Each study is a pure function of (config, seed list): it runs the relevant
machinery, returns a result object, and (optionally) writes CSVs with fixed
headers plus a JSON metadata sidecar.  Output is byte-reproducible: all
randomness flows through keyed streams and the wall-time column in report CSVs
is the NFE count times the configured nominal seconds-per-NFE, never a clock
reading (measured times live in the in-memory results only).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .config import RunConfig, bind_estimator, build_setup, estimator_call_count
from .errors import AllParticlesInfeasible, ConfigurationError
from .estimators import MlmcPlan, estimate_dps
from .gmm import (
    GmmModel, ball_mass, box_mass, class_posterior, denoising_posterior,
    forward_marginal, forward_sample, membership_prob, posterior_mean,
    sample_denoising_posterior,
)
from .likelihoods import Ball, Box, ClassifierLikelihood, IndicatorLikelihood
from .reverse import GmmScoreOracle, coupled_denoise_batch, denoise_batch
from .rng import Stream
from .schedule import make_level_grid
from .smc import ResampleSchedule, SamplerSetup, resample_indices, run_sampler

TRACE_HEADER = ["run_id", "t", "ess", "epoch", "nfe"]
REPORT_HEADER = ["method", "success_rate", "nfe", "wall_time_s", "cost_per_success_s"]
VARIANCE_HEADER = ["level", "variance", "cost", "n_pairs"]

GUIDANCE_METHODS = ("mlmc_smc", "naive_mc_smc", "gaussian_mc_smc", "dps_smc", "unguided_sir")
RARE_EVENT_METHODS = ("guided_smc_mlmc", "naive_sir")


# ---------------------------------------------------------------------------
# shared plumbing

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_meta(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _base_meta(cfg: RunConfig, experiment: str) -> dict:
    return {"experiment": experiment, "digest": cfg.digest(),
            "seeds": cfg.seeds, "config": cfg.resolved}


def cost_per_success(success_prob: float, per_run_cost: float,
                     confidence: float = 0.95) -> float:
    """Per-run cost times the runs needed for one success at the confidence level.

    Runs = ceil(log(1 - confidence) / log(1 - p)), with the convention of a
    single run once p >= confidence; p = 0 yields an infinite-cost sentinel.
    """
    if not (0.0 <= success_prob <= 1.0):
        raise ValueError(f"success_prob must be in [0, 1], got {success_prob}")
    if per_run_cost <= 0:
        raise ValueError(f"per_run_cost must be > 0, got {per_run_cost}")
    if success_prob == 0.0:
        return float("inf")
    if success_prob >= confidence:
        return per_run_cost
    delta = 1.0 - confidence
    runs = math.ceil(math.log(delta) / math.log(1.0 - success_prob))
    return per_run_cost * runs


def classify(model: GmmModel, x0s: np.ndarray) -> np.ndarray:
    """Exact hard class labels: argmax of the prior class posterior."""
    return class_posterior(model, np.atleast_2d(x0s)).argmax(axis=1)


@dataclass
class MethodRow:
    method: str
    success_rate: float
    nfe: float
    wall_time_s: float
    cost_per_success_s: float
    mean_log_lik: float
    per_particle_accuracy: float | None = None


@dataclass
class BenchmarkReport:
    experiment: str
    digest: str
    rows: list[MethodRow]
    seeds: list[int]
    details: dict = field(default_factory=dict)

    def csv_rows(self):
        return [
            (r.method, r.success_rate, r.nfe, r.wall_time_s, r.cost_per_success_s)
            for r in self.rows
        ]


# ---------------------------------------------------------------------------
# DPS bias study

@dataclass
class DpsBiasResult:
    rows: list[tuple]
    n_agree: int
    n_total: int
    mc_checks: list[dict]


def run_dps_bias_study(cfg: RunConfig, out_dir: Path | None = None) -> DpsBiasResult:
    """Estimate-vs-truth sign structure of the point estimate on a symmetric pair.

    For each sampled (t, x_t): truth is the analytic membership probability,
    the point estimate is the likelihood at E[x0 | x_t]; the estimate must
    overestimate exactly on the x_t' mu > 0 side.
    """
    model, schedule = cfg.model, cfg.schedule
    if model.K != 2 or not np.allclose(model.means[0], -model.means[1]):
        raise ConfigurationError(["model: dps_bias needs a symmetric 2-component mixture"])
    if not isinstance(cfg.likelihood, ClassifierLikelihood):
        raise ConfigurationError(["likelihood.kind: dps_bias needs a classifier likelihood"])
    k = cfg.likelihood.target_class
    mu = model.means[k]
    params = cfg.experiment_params
    n_points = int(params.get("n_points", 1000))
    n_mc_checks = int(params.get("n_mc_checks", 5))
    n_mc = int(params.get("n_mc", 1_000_000))

    gen = Stream(cfg.seeds[0]).child(rng.EXPERIMENT).generator()
    ts = gen.integers(1, schedule.T + 1, size=n_points)
    rows = []
    n_agree = 0
    mc_checks = []
    for i in range(n_points):
        t = int(ts[i])
        fm = forward_marginal(model, schedule, t)
        comp = gen.choice(model.K, p=model.weights)
        x_t = fm.component_means[comp] + np.sqrt(fm.var) * gen.standard_normal(model.d)
        truth = float(membership_prob(model, schedule, t, x_t, k))
        est = math.exp(estimate_dps(model, schedule, cfg.likelihood, t, x_t).log_value)
        dot = float(x_t @ mu)
        agree = int(np.sign(est - truth) == np.sign(dot))
        n_agree += agree
        rows.append((t, float(x_t[0]), float(x_t[1]), dot, truth, est, agree))
        if i < n_mc_checks:
            x0 = sample_denoising_posterior(model, schedule, t, x_t, n_mc, gen)
            p0 = class_posterior(model, x0)[:, k]
            mc_checks.append({
                "t": t, "truth": truth,
                "mc_mean": float(p0.mean()),
                "mc_se": float(p0.std(ddof=1) / np.sqrt(n_mc)),
            })
    result = DpsBiasResult(rows=rows, n_agree=n_agree, n_total=n_points, mc_checks=mc_checks)
    if out_dir is not None:
        write_csv(out_dir / "dps_bias.csv",
                  ["t", "xt_0", "xt_1", "xt_dot_mu", "true_prob", "dps_estimate", "sign_agreement"],
                  rows)
        meta = _base_meta(cfg, "dps_bias")
        meta.update({"n_agree": n_agree, "n_total": n_points, "mc_checks": mc_checks})
        write_meta(out_dir / "meta.json", meta)
    return result


# ---------------------------------------------------------------------------
# MLMC variance decay study

@dataclass
class VarianceDecayResult:
    rows: list[tuple]            # (level, variance, cost, n_pairs)
    beta_hat: float
    ci_low: float
    ci_high: float
    t: int
    x_t: np.ndarray
    v_fine: float                # single-sample variance on the finest grid
    mlmc_variance: float         # sum_l V_l / N_l for the configured plan
    mlmc_nfe: int                # sum_l N_l * C_l
    naive_matched_m: int         # fine-grid samples needed for the same variance
    naive_nfe: int


def run_variance_decay_study(cfg: RunConfig, out_dir: Path | None = None) -> VarianceDecayResult:
    """Empirical V_l = Var[p(y|x0_fine) - p(y|x0_coarse)] per level, plus a
    log-linear fit of the decay rate with a bootstrap confidence interval."""
    model, schedule, lik = cfg.model, cfg.schedule, cfg.likelihood
    if cfg.estimator_kind != "mlmc":
        raise ConfigurationError(["estimator.kind: variance_decay needs the mlmc estimator"])
    plan: MlmcPlan = cfg.estimator_params["plan"]
    if plan.L < 1:
        raise ConfigurationError(["estimator.plan: variance_decay needs at least one correction level"])
    params = cfg.experiment_params
    t = int(params.get("t", 60))
    n_pairs = int(params.get("n_pairs", 10_000))
    n_boot = int(params.get("n_bootstrap", 1000))

    root = Stream(cfg.seeds[0]).child(rng.EXPERIMENT)
    gen = root.generator()
    fm = forward_marginal(model, schedule, t)
    comp = gen.choice(model.K, p=model.weights)
    x_t = fm.component_means[comp] + np.sqrt(fm.var) * gen.standard_normal(model.d)
    oracle = GmmScoreOracle(model, schedule)
    starts = np.broadcast_to(x_t, (n_pairs, model.d))

    rows = []
    level_diffs = []
    v_fine = float("nan")
    unit_costs = []
    for level in range(plan.L + 1):
        grid = make_level_grid(schedule, t, plan.effective_T0(t), plan.M, level)
        streams = [root.child(level, i) for i in range(n_pairs)]
        if level == 0:
            x0 = denoise_batch(oracle, schedule, grid, starts, streams)
            terms = np.exp(np.atleast_1d(lik.log_lik(x0)))
            unit_costs.append(grid.n_steps)
        else:
            xf, xc = coupled_denoise_batch(oracle, schedule, grid, starts, streams)
            terms = np.exp(np.atleast_1d(lik.log_lik(xf))) - np.exp(np.atleast_1d(lik.log_lik(xc)))
            unit_costs.append(grid.n_steps + grid.coarsened().n_steps)
            level_diffs.append(terms)
            if level == plan.L:
                v_fine = float(np.var(np.exp(np.atleast_1d(lik.log_lik(xf))), ddof=1))
        rows.append((level, float(np.var(terms, ddof=1)), n_pairs * unit_costs[-1], n_pairs))
    fine_steps = make_level_grid(schedule, t, plan.effective_T0(t), plan.M, plan.L).n_steps

    levels = np.arange(1, plan.L + 1)
    log_v = np.log([r[1] for r in rows[1:]])
    slope = np.polyfit(levels, log_v, 1)[0]
    beta_hat = float(-slope / np.log(plan.M))

    # matched-variance cost comparison for the configured plan
    mlmc_variance = float(sum(r[1] / n for r, n in zip(rows, plan.n_samples)))
    mlmc_nfe = int(sum(n * c for n, c in zip(plan.n_samples, unit_costs)))
    naive_matched_m = max(1, math.ceil(v_fine / mlmc_variance))
    naive_nfe = naive_matched_m * fine_steps

    boot_gen = root.child(9999).generator()
    betas = np.empty(n_boot)
    boot_vars = np.empty((n_boot, plan.L))
    for j, diffs in enumerate(level_diffs):
        idx = boot_gen.integers(0, n_pairs, size=(n_boot, n_pairs))
        boot_vars[:, j] = np.var(diffs[idx], axis=1, ddof=1)
    for b in range(n_boot):
        betas[b] = -np.polyfit(levels, np.log(boot_vars[b]), 1)[0] / np.log(plan.M)
    ci_low, ci_high = np.percentile(betas, [2.5, 97.5])

    result = VarianceDecayResult(rows=rows, beta_hat=beta_hat,
                                 ci_low=float(ci_low), ci_high=float(ci_high),
                                 t=t, x_t=x_t, v_fine=v_fine,
                                 mlmc_variance=mlmc_variance, mlmc_nfe=mlmc_nfe,
                                 naive_matched_m=naive_matched_m, naive_nfe=naive_nfe)
    if out_dir is not None:
        write_csv(out_dir / "variance_decay.csv", VARIANCE_HEADER, rows)
        meta = _base_meta(cfg, "variance_decay")
        meta.update({"beta_hat": beta_hat, "ci_low": result.ci_low,
                     "ci_high": result.ci_high, "t": t, "x_t": x_t.tolist(),
                     "n_pairs": n_pairs, "n_bootstrap": n_boot,
                     "v_fine": v_fine, "mlmc_variance": mlmc_variance,
                     "mlmc_nfe": mlmc_nfe, "naive_matched_m": naive_matched_m,
                     "naive_nfe": naive_nfe})
        write_meta(out_dir / "meta.json", meta)
    return result


# ---------------------------------------------------------------------------
# guidance benchmark

def _final_sir(model, lik, states: np.ndarray, method: str, generator) -> np.ndarray:
    """One-shot reweight of endpoint particles by the exact likelihood."""
    logp = np.atleast_1d(lik.log_lik(states))
    if not np.any(np.isfinite(logp)):
        raise AllParticlesInfeasible(0, list(~np.isfinite(logp)))
    w = np.exp(logp - logp.max())
    return states[resample_indices(w / w.sum(), method, generator)]


def _nfe_at_failure(cfg: RunConfig, kind: str, params: dict, fail_t: int) -> int:
    """Oracle calls spent by a run that collapsed while weighing state fail_t."""
    total = cfg.n_particles * (cfg.schedule.T - fail_t)
    for trigger in cfg.resample.steps:
        if trigger - 1 >= fail_t:
            total += cfg.n_particles * estimator_call_count(kind, params, cfg.schedule, trigger - 1)
    return total


def run_guidance_benchmark(cfg: RunConfig, out_dir: Path | None = None) -> BenchmarkReport:
    """Five weighting strategies on the same conditioning task at equal N.

    Success for a run means at least one final particle lands in the target
    class by exact membership; per-particle accuracy is kept alongside.  A run
    whose weights all collapse counts as a failure at its true oracle cost.
    """
    model, schedule, lik = cfg.model, cfg.schedule, cfg.likelihood
    if cfg.estimator_kind != "mlmc":
        raise ConfigurationError(["estimator.kind: guidance_benchmark needs the mlmc estimator"])
    params = cfg.experiment_params
    target = int(params.get("target_class", getattr(lik, "target_class", 0)))
    plan: MlmcPlan = cfg.estimator_params["plan"]
    naive_m = int(params.get("naive_m", 4))
    gaussian_m = int(params.get("gaussian_m", 10))
    kernel_var = float(params.get("kernel_var", 1.0))

    method_estimators = {
        "mlmc_smc": ("mlmc", {"plan": plan}),
        "naive_mc_smc": ("naive_mc", {"m": naive_m, "T0": plan.T0, "M": plan.M, "level": plan.L}),
        "gaussian_mc_smc": ("gaussian_mc", {"m": gaussian_m, "kernel_var": kernel_var}),
        "dps_smc": ("dps", {}),
        "unguided_sir": ("dps", {}),
    }

    rows: list[MethodRow] = []
    details: dict = {}
    for method in GUIDANCE_METHODS:
        kind, eparams = method_estimators[method]
        per_run = []
        for seed in cfg.seeds:
            sir = method == "unguided_sir"
            setup = SamplerSetup(
                model=model, schedule=schedule, likelihood=lik, proposal=cfg.proposal,
                estimator=bind_estimator(kind, eparams, model, schedule, lik),
                n_particles=cfg.n_particles,
                resample=ResampleSchedule(steps=(), method=cfg.resample.method)
                if sir else cfg.resample,
                n_threads=cfg.threads,
            )
            pre_acc = None
            try:
                res = run_sampler(setup, seed)
                states = res.particles.states
                nfe = res.nfe_total
                if sir:
                    pre_acc = float((classify(model, states) == target).mean())
                    gen = Stream(seed).child(rng.EXPERIMENT, 0).generator()
                    states = _final_sir(model, lik, states, cfg.resample.method, gen)
                labels = classify(model, states)
                run = {
                    "seed": seed,
                    "success": bool((labels == target).any()),
                    "accuracy": float((labels == target).mean()),
                    "nfe": nfe,
                    "mean_log_lik": float(np.mean(np.atleast_1d(lik.log_lik(states)))),
                    "infeasible": False,
                }
            except AllParticlesInfeasible as e:
                run = {
                    "seed": seed, "success": False, "accuracy": 0.0,
                    "nfe": cfg.n_particles * schedule.T if sir
                    else _nfe_at_failure(cfg, kind, eparams, e.t),
                    "mean_log_lik": float("-inf"), "infeasible": True,
                    "failed_at_t": e.t,
                }
            if pre_acc is not None:
                run["pre_sir_accuracy"] = pre_acc
            per_run.append(run)
        rows.append(_aggregate(method, per_run, cfg.nominal_seconds_per_nfe))
        details[method] = per_run
    report = BenchmarkReport(experiment="guidance_benchmark", digest=cfg.digest(),
                             rows=rows, seeds=cfg.seeds, details=details)
    if out_dir is not None:
        _write_report(cfg, report, out_dir)
    return report


def _aggregate(method: str, per_run: list[dict], sec_per_nfe: float) -> MethodRow:
    success_rate = float(np.mean([r["success"] for r in per_run]))
    nfe = float(np.mean([r["nfe"] for r in per_run]))
    wall = nfe * sec_per_nfe
    return MethodRow(
        method=method,
        success_rate=success_rate,
        nfe=nfe,
        wall_time_s=wall,
        cost_per_success_s=cost_per_success(success_rate, wall) if success_rate > 0 else float("inf"),
        mean_log_lik=float(np.mean([r["mean_log_lik"] for r in per_run])),
        per_particle_accuracy=float(np.mean([r["accuracy"] for r in per_run])),
    )


def _write_report(cfg: RunConfig, report: BenchmarkReport, out_dir: Path) -> None:
    write_csv(out_dir / "report.csv", REPORT_HEADER, report.csv_rows())
    meta = _base_meta(cfg, report.experiment)
    meta["methods"] = {
        r.method: {
            "success_rate": r.success_rate, "nfe": r.nfe,
            "mean_log_lik": r.mean_log_lik,
            "per_particle_accuracy": r.per_particle_accuracy,
        }
        for r in report.rows
    }
    meta["per_run"] = report.details
    write_meta(out_dir / "meta.json", meta)


# ---------------------------------------------------------------------------
# rare-event benchmark

def expected_smc_nfe(cfg: RunConfig) -> int:
    """Deterministic oracle-call count of one configured SMC run."""
    total = cfg.n_particles * cfg.schedule.T
    for trigger in cfg.resample.steps:
        # weighing happens on the freshly propagated state at trigger - 1
        total += cfg.n_particles * estimator_call_count(
            cfg.estimator_kind, cfg.estimator_params, cfg.schedule, trigger - 1
        )
    return total


def region_mass(model: GmmModel, region: Box | Ball) -> float:
    if isinstance(region, Box):
        return box_mass(model, region.lo, region.hi)
    return ball_mass(model, region.center, region.radius)


def run_rare_event_benchmark(cfg: RunConfig, out_dir: Path | None = None) -> BenchmarkReport:
    """Guided SMC-MLMC vs naive SIR on an indicator region, at matched NFE.

    The naive arm draws m = floor(NFE_smc / T) unguided trajectories and
    succeeds if any endpoint lands in the region.
    """
    model, schedule, lik = cfg.model, cfg.schedule, cfg.likelihood
    if not isinstance(lik, IndicatorLikelihood):
        raise ConfigurationError(["likelihood.kind: rare_event needs an indicator likelihood"])
    if cfg.estimator_kind != "mlmc":
        raise ConfigurationError(["estimator.kind: rare_event needs the mlmc estimator"])
    p_a = region_mass(model, lik.region)
    nfe_smc = expected_smc_nfe(cfg)
    m_naive = max(1, nfe_smc // schedule.T)
    oracle = GmmScoreOracle(model, schedule)
    full_grid = make_level_grid(schedule, schedule.T, schedule.T, 2, 0)

    guided_runs = []
    naive_runs = []
    for seed in cfg.seeds:
        setup = build_setup(cfg)
        try:
            res = run_sampler(setup, seed)
            inside = lik.region.contains(res.particles.states)
            neg_inf = int(sum(int(np.isinf(e.new_log_lik).sum()) for e in res.epochs))
            guided_runs.append({
                "seed": seed, "success": bool(inside.any()),
                "accuracy": float(inside.mean()), "nfe": res.nfe_total,
                "mean_log_lik": float(np.mean(np.where(inside, 0.0, -np.inf))),
                "neg_inf_estimates": neg_inf, "infeasible": False,
            })
        except AllParticlesInfeasible as e:
            guided_runs.append({
                "seed": seed, "success": False, "accuracy": 0.0, "nfe": nfe_smc,
                "mean_log_lik": float("-inf"),
                "neg_inf_estimates": cfg.n_particles, "infeasible": True,
                "failed_at_t": e.t,
            })

        root = Stream(seed).child(rng.EXPERIMENT, 1)
        starts = root.generator().standard_normal((m_naive, model.d))
        streams = [root.child(i) for i in range(m_naive)]
        x0 = denoise_batch(oracle, schedule, full_grid, starts, streams)
        inside = lik.region.contains(x0)
        naive_runs.append({
            "seed": seed, "success": bool(inside.any()),
            "accuracy": float(inside.mean()), "nfe": m_naive * schedule.T,
            "mean_log_lik": float(np.mean(np.where(inside, 0.0, -np.inf))),
            "neg_inf_estimates": int((~inside).sum()), "infeasible": False,
        })

    rows = [
        _aggregate("guided_smc_mlmc", guided_runs, cfg.nominal_seconds_per_nfe),
        _aggregate("naive_sir", naive_runs, cfg.nominal_seconds_per_nfe),
    ]
    details = {"guided_smc_mlmc": guided_runs, "naive_sir": naive_runs,
               "p_region": p_a, "m_naive": int(m_naive), "nfe_smc_expected": int(nfe_smc)}
    report = BenchmarkReport(experiment="rare_event", digest=cfg.digest(),
                             rows=rows, seeds=cfg.seeds, details=details)
    if out_dir is not None:
        _write_report(cfg, report, out_dir)
        meta_path = out_dir / "meta.json"
        meta = json.loads(meta_path.read_text())
        meta.update({"p_region": p_a, "m_naive": int(m_naive),
                     "nfe_smc_expected": int(nfe_smc)})
        write_meta(meta_path, meta)
    return report


# ---------------------------------------------------------------------------
# ESS trace study

@dataclass
class EssTraceResult:
    off_rows: list[tuple]
    on_rows: list[tuple]
    n_particles: int


def run_ess_trace_study(cfg: RunConfig, out_dir: Path | None = None) -> EssTraceResult:
    """ESS traces with and without resampling, several seeds per arm.

    The no-resampling arm weighs every step with a cheap pilot estimator; the
    scheduled arm weighs and resamples at the configured steps.  Trace rows are
    (run_id, t, ess, epoch, nfe) with an extra post-resample row per epoch.
    """
    model, schedule, lik = cfg.model, cfg.schedule, cfg.likelihood
    params = cfg.experiment_params
    pilot = params.get("pilot", {})
    pilot_params = {"m": int(pilot.get("m", 2)), "T0": int(pilot.get("T0", 4)),
                    "M": int(pilot.get("M", 2)), "level": int(pilot.get("level", 0))}
    pilot_estimator = bind_estimator("naive_mc", pilot_params, model, schedule, lik)

    off_rows = []
    on_rows = []
    for seed in cfg.seeds:
        off_setup = SamplerSetup(
            model=model, schedule=schedule, likelihood=lik, proposal=cfg.proposal,
            estimator=pilot_estimator, n_particles=cfg.n_particles,
            resample=ResampleSchedule(steps=(), method=cfg.resample.method),
            n_threads=cfg.threads,
        )
        res_off = run_sampler(off_setup, seed, weigh_only=True, trace_all_steps=True)
        off_rows.extend((seed, r.t, r.ess, r.epoch, r.nfe) for r in res_off.trace)

        on_setup = build_setup(cfg)
        res_on = run_sampler(on_setup, seed)
        epoch = 0
        for rec, tr in zip(res_on.epochs, res_on.trace):
            on_rows.append((seed, rec.trigger_t, rec.ess_pre, epoch, tr.nfe))
            if rec.resampled:
                epoch += 1
                on_rows.append((seed, rec.trigger_t, rec.ess_post, epoch, tr.nfe))
    result = EssTraceResult(off_rows=off_rows, on_rows=on_rows, n_particles=cfg.n_particles)
    if out_dir is not None:
        write_csv(out_dir / "ess_trace_off.csv", TRACE_HEADER, off_rows)
        write_csv(out_dir / "ess_trace_on.csv", TRACE_HEADER, on_rows)
        meta = _base_meta(cfg, "ess_trace")
        meta.update({"n_particles": cfg.n_particles, "pilot": pilot_params})
        write_meta(out_dir / "meta.json", meta)
    return result


# ---------------------------------------------------------------------------
# posterior contour panels

def run_posterior_panel(cfg: RunConfig, out_dir: Path | None = None) -> dict:
    """Grid evaluation of the analytic posterior p(x0 | x_t) for contour plots.

    Emits one grid CSV (x, y, density) and one marker CSV (label, x, y) per
    configured time, with markers for x_t, the posterior mean, and the true x0.
    """
    model, schedule = cfg.model, cfg.schedule
    if model.d != 2:
        raise ConfigurationError(["model: posterior_panel needs d=2"])
    params = cfg.experiment_params
    panel_ts = [int(t) for t in params.get("ts", [int(0.9 * schedule.T), int(0.6 * schedule.T)])]
    grid_n = int(params.get("grid_n", 121))
    component = int(params.get("component", 0))

    gen = Stream(cfg.seeds[0]).child(rng.EXPERIMENT).generator()
    x0_true = model.means[component] + np.sqrt(model.sigma0_sq) * gen.standard_normal(model.d)
    span = float(np.abs(model.means).max() + 4.0 * np.sqrt(model.sigma0_sq))
    axis = np.linspace(-span, span, grid_n)
    xx, yy = np.meshgrid(axis, axis)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)

    panels = {}
    for t in panel_ts:
        x_t = forward_sample(model, schedule, t, x0_true, gen.standard_normal(model.d))
        post = denoising_posterior(model, schedule, t, x_t)
        sq = ((pts[:, None, :] - post.component_means[None, :, :]) ** 2).sum(axis=2)
        dens = (post.responsibilities[None, :] * np.exp(-0.5 * sq / post.component_var)
                / (2.0 * np.pi * post.component_var)).sum(axis=1)
        xhat = posterior_mean(model, schedule, t, x_t)
        panels[t] = {"x_t": x_t, "x0_true": x0_true, "posterior_mean": xhat,
                     "grid": pts, "density": dens}
        if out_dir is not None:
            write_csv(out_dir / f"posterior_grid_t{t}.csv", ["x", "y", "density"],
                      zip(pts[:, 0], pts[:, 1], dens))
            write_csv(out_dir / f"posterior_markers_t{t}.csv", ["label", "x", "y"],
                      [("x_t", x_t[0], x_t[1]),
                       ("posterior_mean", xhat[0], xhat[1]),
                       ("true_x0", x0_true[0], x0_true[1])])
    if out_dir is not None:
        meta = _base_meta(cfg, "posterior_panel")
        meta.update({"ts": panel_ts, "grid_n": grid_n, "component": component})
        write_meta(out_dir / "meta.json", meta)
    return panels


RUNNERS = {
    "dps_bias": run_dps_bias_study,
    "variance_decay": run_variance_decay_study,
    "guidance_benchmark": run_guidance_benchmark,
    "rare_event": run_rare_event_benchmark,
    "ess_trace": run_ess_trace_study,
    "posterior_panel": run_posterior_panel,
}
