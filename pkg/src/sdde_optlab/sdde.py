"""Euler-Maruyama integration of stochastic differential delay equations on a
uniform grid.

The integrated equation is

    dX(t) = -(eta/delta) U(t) grad F(X(t - theta(t))) dt
            + (eta/delta) sqrt(delta) U(t) sigma(X(t - theta(t))) dB(t)

with grid-aligned random delays theta(t_k) = l_k * delta and an initial
history segment xi on [-l*delta, 0].  Brownian increments are modelled as
sqrt(delta) z_k with standard-normal z_k; supplying the z_k and delay logs of
a discrete run replays them, which couples the two paths exactly.

On its own grid the scheme reduces algebraically to

    X_{k+1} = X_k - eta U(t_k) grad F(X_stale) + eta U(t_k) sigma(X_stale) z_k

so a unit-adjustment run with delta = eta coincides step for step with the
discrete Gaussian surrogate driven by the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._streams import substream
from .discrete import (
    SimulationDiverged,
    Trajectory,
    _as_trajectory,
    gaussian_paths,
    plan_increments,
    realize_delays,
)

__all__ = [
    "HistorySegment",
    "TimeGrid",
    "SddeSpec",
    "time_step_for_schedule",
    "euler_maruyama",
    "euler_paths",
    "couple_paths",
    "CoupledPaths",
]


@dataclass(frozen=True)
class HistorySegment:
    """Initial segment xi on the grid points {-l dt, ..., -dt, 0}.

    Either a constant function (``constant`` holds the value) or explicit
    ``samples`` with samples[j] = xi((j - l) dt) for j = 0..l.
    """

    horizon_steps: int
    constant: np.ndarray = None
    samples: np.ndarray = None

    def __post_init__(self):
        if self.horizon_steps < 0:
            raise ValueError("history horizon must be >= 0")
        if (self.constant is None) == (self.samples is None):
            raise ValueError("history is either a constant value or a table of grid samples")
        if self.constant is not None:
            object.__setattr__(self, "constant", np.atleast_1d(np.asarray(self.constant, dtype=float)))
        else:
            samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
            if samples.shape[0] != self.horizon_steps + 1:
                raise ValueError(
                    f"grid history needs horizon+1 = {self.horizon_steps + 1} rows, got {samples.shape[0]}"
                )
            object.__setattr__(self, "samples", samples)

    @classmethod
    def constant_function(cls, value, horizon_steps):
        return cls(horizon_steps=int(horizon_steps), constant=value)

    @classmethod
    def grid_samples(cls, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(horizon_steps=samples.shape[0] - 1, samples=samples)

    @property
    def dim(self):
        return self.constant.shape[0] if self.constant is not None else self.samples.shape[1]

    def lookup(self, grid_index):
        """xi at grid index j in [-horizon, 0] (index * dt in time units)."""
        return self.lookup_many(np.asarray([grid_index]))[0]

    def lookup_many(self, grid_indices):
        grid_indices = np.asarray(grid_indices, dtype=np.int64)
        if grid_indices.min(initial=0) < -self.horizon_steps or grid_indices.max(initial=0) > 0:
            raise KeyError(
                f"history lookup outside [-{self.horizon_steps}, 0]: "
                f"indices span [{grid_indices.min()}, {grid_indices.max()}]"
            )
        if self.constant is not None:
            return np.broadcast_to(self.constant, (grid_indices.shape[0], self.dim))
        return self.samples[grid_indices + self.horizon_steps]


@dataclass(frozen=True)
class TimeGrid:
    """Grid spacing plus the continuous adjustment U(t) for a step schedule."""

    kind: str
    eta: float
    delta: float
    start_index: int
    mu: float = 0.0

    def adjustment(self, t):
        """U(t); capped at 1 to mirror the discrete unit-interval adjustments."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        if np.any(t <= 0):
            raise ValueError("decaying adjustments are defined for t > 0")
        if self.kind == "one_over_k":
            u = self.delta / t
        elif self.kind == "one_over_sqrt_k":
            u = np.sqrt(self.delta) / np.sqrt(t)
        else:
            u = self.delta / (self.mu * t)
        return np.minimum(1.0, u)

    def times(self, n_steps):
        return (self.start_index + np.arange(n_steps + 1)) * self.delta

    def describe(self):
        return f"{self.kind}(eta={self.eta}, delta={self.delta})"


def time_step_for_schedule(schedule, eta0=None, delta=None):
    """Grid spacing and adjustment function matching a discrete step schedule.

    constant         -> delta = eta0, U(t) = 1
    one_over_k       -> any configured delta, U(t) = delta / t
    one_over_sqrt_k  -> delta = eta0, U(t) = sqrt(delta) / sqrt(t)
    strongly_convex  -> effective rate 1, U(t) = delta / (mu t); delta is the
                        configured precision (defaults to eta0)

    The singular kinds start integration one grid point in (t0 = delta).
    """
    eta0 = schedule.base_rate if eta0 is None else float(eta0)
    if not (eta0 > 0.0):
        raise ValueError("base rate must be positive")
    if schedule.kind in ("constant", "one_over_sqrt_k"):
        if delta is not None and abs(float(delta) - eta0) > 1e-15:
            raise ValueError(f"the {schedule.kind} schedule pins delta = eta0 = {eta0}")
        delta = eta0
    else:
        delta = eta0 if delta is None else float(delta)
        if not (delta > 0.0):
            raise ValueError("grid spacing must be positive")
    eta = 1.0 if schedule.kind == "strongly_convex" else eta0
    return TimeGrid(kind=schedule.kind, eta=eta, delta=delta,
                    start_index=schedule.start_index, mu=schedule.mu)


@dataclass(frozen=True)
class SddeSpec:
    """Everything needed to integrate one equation: problem and noise model,
    rate/grid data, delay process, horizon and initial history."""

    problem: object
    grid: TimeGrid
    delay: object            # DelaySchedule, or None for the delay-free case
    n_steps: int
    history: HistorySegment
    batch_size: int = 1
    noise: object = None     # NoiseModel override; defaults to the problem's

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("need at least one integration step")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        bound = 0 if self.delay is None else self.delay.bound
        if self.history.horizon_steps < max(bound - self.grid.start_index, 0):
            raise ValueError(
                f"history horizon {self.history.horizon_steps} steps cannot serve delays up to {bound}"
            )
        if self.history.dim != self.problem.dim:
            raise ValueError("history dimension does not match the problem")

    @property
    def delay_bound(self):
        return 0 if self.delay is None else self.delay.bound

    @property
    def tau(self):
        return self.delay_bound * self.grid.delta


def euler_maruyama(spec, rng=None, delays=None, increments=None, record="all"):
    """Integrate the delay equation and return the grid trajectory.

    Fresh randomness is drawn from ``rng`` (delays first if the schedule is
    random, then one block of standard normals); passing ``delays`` and/or
    ``increments`` replays the logs of another run instead.
    """
    grid = spec.grid
    n_steps = int(spec.n_steps)
    dim = spec.problem.dim
    if delays is None:
        if spec.delay is None:
            delays = np.zeros(n_steps, dtype=np.int64)
        else:
            delays = realize_delays(spec.delay, n_steps, rng, start_index=grid.start_index)
    else:
        delays = np.asarray(delays, dtype=np.int64)
        if delays.shape != (n_steps,):
            raise ValueError(f"replayed delay log must have shape ({n_steps},)")
        if delays.min() < 0 or delays.max() > spec.delay_bound:
            raise ValueError("replayed delays violate the schedule bound")
    if increments is None:
        if rng is None:
            raise ValueError("need a random stream or a replayed noise log")
        increments = plan_increments(rng, n_steps, dim)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_steps, dim):
            raise ValueError(f"noise log must have shape ({n_steps}, {dim})")

    states, failures = euler_paths(spec, increments[None], delays)
    if failures:
        raise SimulationDiverged(failures[0][1], failures[0][0])
    info = {"method": "euler_maruyama", "grid": grid.describe(),
            "delay": None if spec.delay is None else spec.delay.describe()}
    return _as_trajectory(states[0], grid.delta, grid.start_index, delays, increments, info, record)


def euler_paths(spec, increments, delays):
    """Vectorised integrator lanes on pre-drawn standard normals.

    increments: (lanes, steps, dim); delays: (steps,) shared or (lanes, steps)
    per lane.  Returns (states, failures) like the discrete kernels.
    """
    grid = spec.grid
    n_steps = increments.shape[1]
    if n_steps != spec.n_steps:
        raise ValueError(f"noise log covers {n_steps} steps but the spec declares {spec.n_steps}")
    ts = (grid.start_index + np.arange(n_steps)) * grid.delta
    return gaussian_paths(
        spec.problem,
        _GridStep(grid),
        increments,
        delays,
        spec.history.lookup(0),
        eta=grid.eta,
        batch_size=spec.batch_size,
        noise=spec.noise,
        history_lookup=spec.history.lookup_many,
        adjustments=grid.adjustment(ts),
    )


@dataclass(frozen=True)
class _GridStep:
    """Adapter exposing a TimeGrid under the step-schedule kernel interface."""

    grid: TimeGrid

    @property
    def base_rate(self):
        return self.grid.eta

    @property
    def start_index(self):
        return self.grid.start_index

    def adjustments(self, ks):
        return self.grid.adjustment(np.asarray(ks, dtype=float) * self.grid.delta)


# ---------------------------------------------------------------------------
# coupled paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoupledPaths:
    asgd: Trajectory
    surrogate: Trajectory
    euler: Trajectory

    def gap(self, a="asgd", b="euler"):
        """Pathwise Euclidean gap between two members on the shared grid."""
        ta, tb = getattr(self, a), getattr(self, b)
        return np.linalg.norm(ta.states - tb.states, axis=-1)


def couple_paths(problem, step, delay, batch_size, x0, n_steps, seed, delta=None,
                 with_replacement=True, history=None, record="all"):
    """Run ASGD, the Gaussian surrogate and the Euler-Maruyama scheme on
    coupled randomness derived from one seed.

    All three share the identical realised delay sequence; the surrogate and
    the integrator share the identical standard-normal draws; ASGD consumes
    its own minibatch-sampling stream.  The returned trajectories live on the
    same grid, so pathwise gaps are directly comparable.
    """
    from .discrete import run_asgd, run_gaussian_surrogate  # local import avoids a cycle at module load

    grid = time_step_for_schedule(step, delta=delta)
    x0 = problem.check_point(x0)
    delays = realize_delays(delay, n_steps, substream(seed, 0, "delay"), start_index=grid.start_index) \
        if delay is not None else np.zeros(n_steps, dtype=np.int64)
    increments = plan_increments(substream(seed, 0, "noise"), n_steps, problem.dim)

    asgd = run_asgd(problem, step, delay, batch_size, x0, n_steps,
                    substream(seed, 0, "batch"), delays=delays,
                    with_replacement=with_replacement, time_step=grid.delta, record=record)
    surrogate = run_gaussian_surrogate(problem, step, delay, batch_size, x0, n_steps, None,
                                       delays=delays, increments=increments,
                                       time_step=grid.delta, record=record)
    if history is None:
        history = HistorySegment.constant_function(x0, 0 if delay is None else delay.bound)
    spec = SddeSpec(problem=problem, grid=grid, delay=delay, n_steps=n_steps,
                    history=history, batch_size=batch_size)
    euler = euler_maruyama(spec, delays=delays, increments=increments, record=record)
    return CoupledPaths(asgd=asgd, surrogate=surrogate, euler=euler)
