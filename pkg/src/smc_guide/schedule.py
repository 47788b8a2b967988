"""Discrete noise schedule and the nested time grids used by multilevel runs.

A schedule fixes per-step variances beta_t for t = 1..T, with
alpha_t = 1 - beta_t and abar_t = prod_{i<=t} alpha_i (abar_0 = 1 by
convention).  ``reverse_var_mode`` selects the reverse-kernel variance:
``posterior`` uses betatilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t,
``forward`` uses beta_t itself.

A :class:`LevelGrid` is a strictly decreasing subsequence of {t_start, ..., 0}
with T0 * M**level steps; the level-(l-1) grid is exactly every M-th entry of
the level-l grid, which is what makes coupled coarse/fine trajectories line up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

REVERSE_VAR_MODES = ("posterior", "forward")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise coefficients of a T-step diffusion."""

    beta: np.ndarray                 # (T,), beta[t-1] is the step-t variance
    reverse_var_mode: str = "posterior"
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)  # (T+1,), alpha_bar[t], abar_0 = 1

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        object.__setattr__(self, "alpha_bar", abar)

    @property
    def T(self) -> int:
        return len(self.beta)

    def beta_t(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_t(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_t(self, t: int) -> float:
        return float(self.alpha_bar[t])

    def posterior_var(self, t: int) -> float:
        """betatilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        return float(
            (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t - 1]
        )

    def reverse_var(self, t: int) -> float:
        if self.reverse_var_mode == "posterior":
            return self.posterior_var(t)
        return self.beta_t(t)


def make_linear_schedule(
    T: int, beta_min: float, beta_max: float, reverse_var_mode: str = "posterior"
) -> DiffusionSchedule:
    """Schedule with beta interpolated linearly from beta_min to beta_max."""
    violations = []
    if T < 2:
        violations.append(f"T: must be >= 2, got {T}")
    if not (0.0 < beta_min <= beta_max):
        violations.append(f"beta_min: need 0 < beta_min <= beta_max, got {beta_min}")
    if not (beta_max < 1.0):
        violations.append(f"beta_max: must be < 1, got {beta_max}")
    if reverse_var_mode not in REVERSE_VAR_MODES:
        violations.append(
            f"reverse_var_mode: must be one of {REVERSE_VAR_MODES}, got {reverse_var_mode!r}"
        )
    if violations:
        raise ConfigurationError(violations)
    beta = np.linspace(beta_min, beta_max, T)
    return DiffusionSchedule(beta=beta, reverse_var_mode=reverse_var_mode)


def make_default_schedule(T: int = 100, reverse_var_mode: str = "posterior") -> DiffusionSchedule:
    """Default linear schedule; betas scale with 100/T so abar_T stays small."""
    scale = 100.0 / T
    return make_linear_schedule(T, 1e-4 * scale, 0.2 * scale, reverse_var_mode)


@dataclass(frozen=True)
class LevelGrid:
    """Strictly decreasing reverse-time grid with T0 * M**level steps."""

    level: int
    indices: np.ndarray   # ints, indices[0] = t_start, indices[-1] = 0
    refinement: int

    @property
    def n_steps(self) -> int:
        return len(self.indices) - 1

    @property
    def t_start(self) -> int:
        return int(self.indices[0])

    def coarsened(self) -> "LevelGrid":
        """The level-(l-1) grid: every M-th entry of this grid."""
        if self.level < 1:
            raise ValueError("level-0 grid has no coarser grid")
        return LevelGrid(
            level=self.level - 1,
            indices=self.indices[:: self.refinement],
            refinement=self.refinement,
        )


def make_level_grid(
    schedule: DiffusionSchedule, t_start: int, T0: int, M: int, level: int
) -> LevelGrid:
    """Build the level-``level`` grid from ``t_start`` down to 0.

    Grid times are the nearest integers to T0 * M**level equally spaced
    positions (ties broken toward smaller t); collisions are resolved by
    decrementing, and a grid that cannot fit between t_start and 0 is a
    configuration error.
    """
    violations = []
    if T0 < 1:
        violations.append(f"T0: must be >= 1, got {T0}")
    if M < 2:
        violations.append(f"M: must be >= 2, got {M}")
    if level < 0:
        violations.append(f"level: must be >= 0, got {level}")
    if t_start < 1:
        violations.append(f"t_start: must be >= 1, got {t_start}")
    if t_start > schedule.T:
        violations.append(f"t_start: exceeds schedule T={schedule.T}, got {t_start}")
    if violations:
        raise ConfigurationError(violations)

    n = T0 * M**level
    positions = t_start * (1.0 - np.arange(n + 1) / n)
    # round half toward smaller t
    times = np.ceil(positions - 0.5).astype(int)
    for j in range(1, n + 1):
        if times[j] >= times[j - 1]:
            times[j] = times[j - 1] - 1
    if times[-1] < 0:
        raise ConfigurationError(
            f"grid: {n} steps do not fit between t_start={t_start} and 0"
        )
    return LevelGrid(level=level, indices=times, refinement=M)
