"""Global-best particle swarm optimizer over a bounded box.

Plain inertia-weight PSO: positions clamp to the box (with the violating
velocity component zeroed), velocities clamp to a fraction of the box width,
and all randomness comes from one seeded generator so a (seed, config,
objective) triple replays bit-identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SwarmConfig:
    n_particles: int = 40
    n_iterations: int = 150
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    velocity_clamp: float = 0.5  # fraction of the box width per dimension

    def __post_init__(self):
        if self.n_particles < 1 or self.n_iterations < 1:
            raise ValueError("swarm needs at least one particle and one iteration")
        if not 0.0 < self.velocity_clamp <= 1.0:
            raise ValueError("velocity_clamp must lie in (0, 1]")
        for name in ("inertia", "cognitive", "social"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class PsoResult:
    x: np.ndarray
    value: float
    trace: np.ndarray        # swarm-best value after each iteration (nonincreasing)
    mean_trace: np.ndarray   # mean objective value per iteration
    n_evaluations: int
    wall_time_s: float


def _evaluate(f, positions) -> np.ndarray:
    values = np.array([float(f(x)) for x in positions])
    if not np.all(np.isfinite(values)):
        k = int(np.argmax(~np.isfinite(values)))
        raise ValueError(
            f"objective returned a non-finite value for candidate {positions[k]}"
        )
    return values


def pso_minimize(f, bounds, config: SwarmConfig = SwarmConfig(), seed: int = 0) -> PsoResult:
    """Minimize f over the box ``bounds`` (shape (D, 2), rows [lo, hi])."""
    t_start = time.perf_counter()
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must have shape (n_dims, 2)")
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not np.all(np.isfinite(bounds)) or not np.all(lo < hi):
        raise ValueError("bounds must be finite with lo < hi")

    rng = np.random.default_rng(seed)
    n, d = config.n_particles, bounds.shape[0]
    width = hi - lo
    vmax = config.velocity_clamp * width

    pos = lo + rng.uniform(size=(n, d)) * width
    pos[0] = 0.5 * (lo + hi)  # one particle at the box center
    vel = rng.uniform(-1.0, 1.0, size=(n, d)) * vmax

    values = _evaluate(f, pos)
    pbest = pos.copy()
    pbest_val = values.copy()
    g = int(np.argmin(pbest_val))
    gbest = pbest[g].copy()
    gbest_val = float(pbest_val[g])

    trace = np.empty(config.n_iterations)
    mean_trace = np.empty(config.n_iterations)
    for it in range(config.n_iterations):
        r1 = rng.uniform(size=(n, d))
        r2 = rng.uniform(size=(n, d))
        vel = (
            config.inertia * vel
            + config.cognitive * r1 * (pbest - pos)
            + config.social * r2 * (gbest - pos)
        )
        np.clip(vel, -vmax, vmax, out=vel)
        pos = pos + vel
        violated = (pos < lo) | (pos > hi)
        if violated.any():
            np.clip(pos, lo, hi, out=pos)
            vel[violated] = 0.0

        values = _evaluate(f, pos)
        improved = values < pbest_val
        pbest[improved] = pos[improved]
        pbest_val[improved] = values[improved]
        g = int(np.argmin(pbest_val))
        if pbest_val[g] < gbest_val:
            gbest = pbest[g].copy()
            gbest_val = float(pbest_val[g])
        trace[it] = gbest_val
        mean_trace[it] = values.mean()

    return PsoResult(
        x=gbest,
        value=gbest_val,
        trace=trace,
        mean_trace=mean_trace,
        n_evaluations=n * (config.n_iterations + 1),
        wall_time_s=time.perf_counter() - t_start,
    )
