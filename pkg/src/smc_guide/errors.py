"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid configuration value(s).

    ``violations`` lists every offending field as ``"field.path: reason"``;
    the message joins them so nothing is hidden behind the first failure.
    """

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class PropagationError(RuntimeError):
    """Non-finite state produced while integrating the reverse process."""

    def __init__(self, t: int, particle: int | None = None):
        self.t = t
        self.particle = particle
        where = f"step t={t}" if particle is None else f"step t={t}, particle {particle}"
        super().__init__(f"non-finite state at {where}")


class AllParticlesInfeasible(RuntimeError):
    """Every particle weight collapsed to -inf at a resampling step."""

    def __init__(self, t: int, infeasible: "list[bool] | None" = None):
        self.t = t
        self.infeasible = infeasible
        super().__init__(f"all particles infeasible at t={t}")
