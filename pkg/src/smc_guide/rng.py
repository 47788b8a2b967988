"""Deterministic splittable random streams.

Every stochastic operation draws from a stream addressed by an integer key
path under the run seed, e.g. ``(PROPAGATE, particle)`` for propagation noise
or ``(ESTIMATE, epoch, particle, level, sample)`` for a likelihood-estimate
trajectory.  Streams are counter-based Philox generators keyed through
``SeedSequence`` spawn keys, so a stream is a pure function of its address and
parallel execution order can never change the draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Top-level address domains; fixed integers keep addresses stable across runs.
INIT = 0
PROPAGATE = 1
ESTIMATE = 2
RESAMPLE = 3
EXPERIMENT = 4


@dataclass(frozen=True)
class Stream:
    """Address of one random stream: run seed plus an integer key path."""

    seed: int
    key: tuple[int, ...] = ()

    def child(self, *ids: int) -> "Stream":
        """Sub-stream obtained by appending ``ids`` to the key path."""
        return Stream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this address; same address, same draws."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))

    def normal(self, shape: int | tuple[int, ...]) -> np.ndarray:
        return self.generator().standard_normal(shape)
