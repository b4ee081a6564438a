"""Discrete-time iteration: asynchronous SGD, sequential SGD as its zero-delay
special case, and the Gaussian-noise surrogate recursion.

Both recursions update

    x_{k+1} = x_k - eta * u_k * g_k

where g_k is either an averaged minibatch gradient evaluated at the stale
iterate x_{k - l_k} (ASGD) or the full gradient at the stale iterate plus a
Gaussian perturbation sigma(x_{k - l_k}, b) z_k (surrogate).  Delays l_k come
from a configurable schedule, u_k from a step-size schedule, and all runners
accept pre-drawn delay/noise logs so that different simulators can be coupled
pathwise on identical randomness.

All runners are implemented on top of vectorised kernels that advance many
independent replications at once; a single run is the one-lane special case,
so serial and batched execution produce bitwise-identical paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DelaySchedule",
    "StepSchedule",
    "Trajectory",
    "SimulationDiverged",
    "sample_delay",
    "realize_delays",
    "plan_minibatch_indices",
    "plan_increments",
    "run_asgd",
    "run_gaussian_surrogate",
    "asgd_paths",
    "gaussian_paths",
]

_DELAY_KINDS = ("constant", "uniform", "pmf")
_STEP_KINDS = ("constant", "one_over_k", "one_over_sqrt_k", "strongly_convex")


class SimulationDiverged(RuntimeError):
    """An iterate became non-finite during a run."""

    def __init__(self, step, replication=0):
        super().__init__(f"iterate became non-finite at step {step} (replication {replication})")
        self.step = int(step)
        self.replication = int(replication)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelaySchedule:
    """Distribution of the staleness l_k, bounded by ``bound``.

    kinds:
      constant  -- l_k = bound every step
      uniform   -- l_k uniform on {0, ..., bound}
      pmf       -- l_k = j with probability pmf[j]

    Under the warmup rule no read ever reaches before the starting point:
    random kinds are clamped to l_k <= k, and a constant schedule runs the
    first ``bound`` iterations without any delay before switching to the full
    constant staleness.
    """

    kind: str
    bound: int
    warmup: bool = True
    pmf: tuple = None

    def __post_init__(self):
        if self.kind not in _DELAY_KINDS:
            raise ValueError(f"unknown delay kind {self.kind!r}; expected one of {_DELAY_KINDS}")
        if self.bound < 0:
            raise ValueError("delay bound must be >= 0")
        if self.kind == "pmf":
            weights = np.asarray(self.pmf, dtype=float)
            if weights.ndim != 1 or weights.size != self.bound + 1:
                raise ValueError(f"pmf must list bound+1 = {self.bound + 1} weights")
            if weights.min(initial=0.0) < 0.0:
                raise ValueError("pmf weights must be nonnegative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError(f"pmf weights sum to {weights.sum():.15f}, not 1")
            object.__setattr__(self, "pmf", tuple(float(w) for w in weights))
        elif self.pmf is not None:
            raise ValueError("pmf weights are only meaningful for the pmf kind")

    @classmethod
    def constant(cls, bound, warmup=True):
        return cls("constant", int(bound), warmup)

    @classmethod
    def uniform(cls, bound, warmup=True):
        return cls("uniform", int(bound), warmup)

    @classmethod
    def from_pmf(cls, weights, warmup=True):
        weights = tuple(float(w) for w in weights)
        return cls("pmf", len(weights) - 1, warmup, weights)

    @property
    def is_random(self):
        return self.kind != "constant"

    def describe(self):
        tail = "" if self.kind != "pmf" else f", pmf={self.pmf}"
        return f"{self.kind}(bound={self.bound}, warmup={self.warmup}{tail})"


def sample_delay(schedule, k, rng=None):
    """One staleness draw l_k for iteration index k."""
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    return int(realize_delays(schedule, 1, rng, start_index=int(k))[0])


def realize_delays(schedule, n_steps, rng=None, start_index=0):
    """Realise the delay sequence for iterations start_index .. start_index+n_steps-1.

    The constant kind consumes no randomness; random kinds consume exactly one
    vectorised draw of length ``n_steps`` from ``rng``.
    """
    n_steps = int(n_steps)
    ks = start_index + np.arange(n_steps)
    if schedule.kind == "constant":
        raw = np.full(n_steps, schedule.bound, dtype=np.int64)
        if schedule.warmup:
            return np.where(ks < schedule.bound, 0, schedule.bound).astype(np.int64)
        return raw
    if rng is None:
        raise ValueError(f"{schedule.kind} delay schedule needs a random stream")
    if schedule.kind == "uniform":
        raw = rng.integers(0, schedule.bound + 1, size=n_steps)
    else:
        raw = rng.choice(schedule.bound + 1, size=n_steps, p=np.asarray(schedule.pmf))
    raw = raw.astype(np.int64)
    if schedule.warmup:
        raw = np.minimum(raw, ks)
    return raw


@dataclass(frozen=True)
class StepSchedule:
    """Step-size schedule eta * u_k with u_k in [0, 1].

    kinds:
      constant         -- u_k = 1
      one_over_k       -- u_k = 1/k
      one_over_sqrt_k  -- u_k = 1/sqrt(k)
      strongly_convex  -- base rate 1 with u_k = 1/(mu k), i.e. eta_k = 1/(mu k)

    Decaying kinds are indexed from k = 1; ``start_index`` reports where a run
    using the schedule begins.  The strongly convex kind caps u_k at 1 so the
    unit-interval adjustment invariant also holds when mu < 1.
    """

    kind: str
    base_rate: float
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in _STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}; expected one of {_STEP_KINDS}")
        if not (self.base_rate > 0.0):
            raise ValueError("base rate must be positive")
        if self.kind == "strongly_convex" and not (self.mu > 0.0):
            raise ValueError("strongly convex schedule needs mu > 0")

    @classmethod
    def constant(cls, eta):
        return cls("constant", float(eta))

    @classmethod
    def one_over_k(cls, eta):
        return cls("one_over_k", float(eta))

    @classmethod
    def one_over_sqrt_k(cls, eta):
        return cls("one_over_sqrt_k", float(eta))

    @classmethod
    def strongly_convex(cls, mu):
        return cls("strongly_convex", 1.0, float(mu))

    @property
    def start_index(self):
        return 0 if self.kind == "constant" else 1

    def adjustment(self, k):
        """u_k for a single iteration index."""
        return float(self.adjustments(np.asarray([k]))[0])

    def adjustments(self, ks):
        ks = np.asarray(ks, dtype=float)
        if self.kind == "constant":
            return np.ones_like(ks)
        if np.any(ks < 1):
            raise ValueError("decaying schedules are defined for iteration indices k >= 1")
        if self.kind == "one_over_k":
            return 1.0 / ks
        if self.kind == "one_over_sqrt_k":
            return 1.0 / np.sqrt(ks)
        return np.minimum(1.0, 1.0 / (self.mu * ks))

    def describe(self):
        tail = f", mu={self.mu}" if self.kind == "strongly_convex" else ""
        return f"{self.kind}(base_rate={self.base_rate}{tail})"


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """A time-indexed sequence of iterates on a uniform grid.

    ``states[i]`` is the iterate at absolute step ``step_indices[i]`` and time
    ``times[i] = step_indices[i] * delta``.  The realised delay sequence and,
    for Gaussian-driven runs, the standard-normal draws are kept so another
    simulator can replay them.
    """

    states: np.ndarray
    times: np.ndarray
    step_indices: np.ndarray
    delta: float
    delays: np.ndarray = None
    increments: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2:
            raise ValueError("states must be a (steps, dim) array")
        times = np.asarray(self.times, dtype=float)
        if times.shape != (states.shape[0],):
            raise ValueError("times must align with states")
        gaps = np.diff(times)
        if times.size > 1:
            if gaps.min() <= 0:
                raise ValueError("times must be strictly increasing")
            if gaps.max() - gaps.min() > 1e-9 * max(gaps.max(), 1.0):
                raise ValueError("times must be uniformly spaced")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "step_indices", np.asarray(self.step_indices, dtype=np.int64))

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_time(self):
        return float(self.times[-1])

    def state_at_time(self, t):
        """Iterate at grid time t (must lie on the recorded grid)."""
        idx = np.nonzero(np.abs(self.times - t) <= 1e-9 * max(1.0, abs(t)))[0]
        if idx.size == 0:
            raise KeyError(f"time {t} is not on the recorded grid")
        return self.states[int(idx[0])]


def _as_trajectory(states, delta, start_index, delays, increments, info, record):
    n_total = states.shape[0]
    if record == "all":
        keep = np.arange(n_total)
    elif record == "final":
        keep = np.array([0, n_total - 1]) if n_total > 1 else np.array([0])
    else:
        raise ValueError(f"record must be 'all' or 'final', got {record!r}")
    steps = start_index + keep
    return Trajectory(
        states=states[keep],
        times=steps * delta,
        step_indices=steps,
        delta=float(delta),
        delays=delays,
        increments=increments,
        info=info,
    )


# ---------------------------------------------------------------------------
# vectorised kernels
# ---------------------------------------------------------------------------


def _constant_history(value, dim):
    value = np.asarray(value, dtype=float).reshape(dim)

    def lookup(j_abs):
        return np.broadcast_to(value, (np.asarray(j_abs).shape[0], dim))

    return lookup


def _gather_delayed(states, k_rel, lags, start_index, history_lookup, max_lag):
    """States at absolute index (start_index + k_rel) - lag, one row per lane.

    Indices that fall before the first grid point resolve through the history
    lookup; indices below -max_lag mean the schedule violated its bound.
    """
    k_abs = start_index + k_rel
    if np.ndim(lags) == 0:
        j_abs = k_abs - int(lags)
        if j_abs >= start_index:
            return states[:, j_abs - start_index]
        if j_abs < -max_lag:
            raise ValueError(f"delayed index {j_abs} reaches below the history horizon -{max_lag}")
        return history_lookup(np.asarray([j_abs]))[np.zeros(states.shape[0], dtype=np.intp)]
    j_abs = k_abs - lags
    if j_abs.min() < -max_lag:
        raise ValueError(f"delayed index {j_abs.min()} reaches below the history horizon -{max_lag}")
    out = np.empty((states.shape[0], states.shape[2]))
    on_grid = j_abs >= start_index
    rows = np.nonzero(on_grid)[0]
    out[rows] = states[rows, j_abs[rows] - start_index]
    rows = np.nonzero(~on_grid)[0]
    if rows.size:
        out[rows] = history_lookup(j_abs[rows])
    return out


def _check_finite(x, step, failures, active):
    """Deactivate lanes that became non-finite, recording (lane, step)."""
    bad = ~np.all(np.isfinite(x), axis=-1)
    bad &= active
    if np.any(bad):
        for lane in np.nonzero(bad)[0]:
            failures.append((int(lane), int(step)))
        active &= ~bad
    return active


def _step_delays(delays, k):
    if delays.ndim == 1:
        return delays[k]
    return delays[:, k]


def asgd_paths(problem, step, batch_indices, delays, x0, eta=None, history_lookup=None, adjustments=None):
    """Advance ASGD lanes on pre-drawn randomness.

    batch_indices: (lanes, steps, b) minibatch index draws, or None for exact
    full-batch gradients.  delays: (steps,) shared or (lanes, steps) per lane.
    Returns (states, failures) with states of shape (lanes, steps+1, dim);
    lanes that diverge are frozen at their last finite iterate and reported in
    ``failures`` as (lane, step) pairs.
    """
    return _advance(problem, step, x0, delays, eta=eta, batch_indices=batch_indices,
                    history_lookup=history_lookup, adjustments=adjustments)


def gaussian_paths(problem, step, increments, delays, x0, eta=None, batch_size=1,
                   noise=None, history_lookup=None, adjustments=None):
    """Advance Gaussian-surrogate lanes on pre-drawn standard normals.

    increments: (lanes, steps, dim).  The perturbation applied at step k is
    eta * u_k * sigma(x_stale, batch_size) z_k.
    """
    return _advance(problem, step, x0, delays, eta=eta, increments=increments,
                    batch_size=batch_size, noise=noise,
                    history_lookup=history_lookup, adjustments=adjustments)


def _advance(problem, step, x0, delays, eta=None, batch_indices=None, increments=None,
             batch_size=1, noise=None, history_lookup=None, adjustments=None):
    if (batch_indices is None) == (increments is None):
        raise ValueError("exactly one of batch_indices / increments drives a run")
    driver = batch_indices if batch_indices is not None else increments
    if driver.ndim == 2:
        raise ValueError("driving arrays must have a leading lane axis")
    lanes, n_steps = driver.shape[0], driver.shape[1]
    dim = problem.dim
    eta = step.base_rate if eta is None else float(eta)
    start = step.start_index
    delays = np.asarray(delays, dtype=np.int64)
    max_lag = int(delays.max(initial=0))
    if delays.min(initial=0) < 0 or (delays.ndim == 2 and delays.shape != (lanes, n_steps)) or \
            (delays.ndim == 1 and delays.shape != (n_steps,)):
        raise ValueError("delay log must be nonnegative with shape (steps,) or (lanes, steps)")
    if adjustments is None:
        adjustments = step.adjustments(start + np.arange(n_steps))
    if history_lookup is None:
        history_lookup = _constant_history(x0, dim)

    if increments is not None:
        noise = problem.noise_model if noise is None else noise
        if noise.is_constant:
            sigma = noise.constant_factor(batch_size)

            def perturb(x_stale, z):
                out = np.empty_like(z)
                for j in range(dim):
                    out[:, j] = np.sum(z * sigma[j][None, :], axis=-1)
                return out
        else:
            def perturb(x_stale, z):
                out = np.empty_like(z)
                for lane in range(x_stale.shape[0]):
                    out[lane] = noise.factor(x_stale[lane], batch_size) @ z[lane]
                return out

    states = np.empty((lanes, n_steps + 1, dim))
    states[:, 0] = np.asarray(x0, dtype=float).reshape(dim)
    active = np.ones(lanes, dtype=bool)
    failures = []
    for k in range(n_steps):
        lags = _step_delays(delays, k)
        x_stale = _gather_delayed(states[:, : k + 1], k, lags, start, history_lookup, max_lag)
        if batch_indices is not None:
            g = problem.grad_minibatch_batch(x_stale, batch_indices[:, k])
        else:
            g = problem.grad_full_batch(x_stale)
            g = g - perturb(x_stale, increments[:, k])
        new = states[:, k] - (eta * adjustments[k]) * g
        active = _check_finite(new, start + k, failures, active)
        new[~active] = states[~active, k]
        states[:, k + 1] = new
    return states, failures


# ---------------------------------------------------------------------------
# canonical random plans
# ---------------------------------------------------------------------------


def plan_minibatch_indices(rng, n_steps, batch_size, n_examples):
    """Minibatch index draws for a whole run, one i.i.d. uniform block."""
    return rng.integers(0, n_examples, size=(int(n_steps), int(batch_size)))


def plan_increments(rng, n_steps, dim):
    """Standard-normal draws z_k for a whole run."""
    return rng.standard_normal((int(n_steps), int(dim)))


# ---------------------------------------------------------------------------
# single-run API
# ---------------------------------------------------------------------------


def _prepare_run(problem, step, delay, x0, n_steps, rng, delays, time_step):
    if n_steps < 1:
        raise ValueError("need at least one iteration")
    x0 = problem.check_point(x0)
    if delays is None:
        if delay is None:
            delays = np.zeros(n_steps, dtype=np.int64)
        else:
            delays = realize_delays(delay, n_steps, rng, start_index=step.start_index)
    else:
        delays = np.asarray(delays, dtype=np.int64)
        if delays.shape != (n_steps,):
            raise ValueError(f"replayed delay log must have shape ({n_steps},)")
    if delay is not None:
        if delays.min() < 0 or delays.max() > delay.bound:
            raise ValueError("realised delays violate the schedule bound")
    delta = float(step.base_rate if time_step is None else time_step)
    return x0, delays, delta


def run_asgd(problem, step, delay, batch_size, x0, n_steps, rng, delays=None,
             with_replacement=True, time_step=None, record="all"):
    """Run asynchronous minibatch SGD and return its trajectory.

    The generator is consumed in a canonical order (delay draws first when the
    schedule is random and no replay log is given, then one block of minibatch
    indices), so runs are reproducible and can be coupled against other
    simulators via the recorded delay log.
    """
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    x0, delays, delta = _prepare_run(problem, step, delay, x0, n_steps, rng, delays, time_step)
    if with_replacement:
        indices = plan_minibatch_indices(rng, n_steps, batch_size, problem.n_examples)
    else:
        if batch_size != problem.n_examples:
            raise ValueError("without-replacement sampling is only supported for b = n (full batch)")
        indices = np.tile(np.arange(problem.n_examples), (n_steps, 1))
    states, failures = asgd_paths(problem, step, indices[None], delays, x0)
    if failures:
        raise SimulationDiverged(failures[0][1], failures[0][0])
    info = {"method": "asgd", "step": step.describe(), "batch_size": batch_size,
            "delay": None if delay is None else delay.describe()}
    return _as_trajectory(states[0], delta, step.start_index, delays, None, info, record)


def run_gaussian_surrogate(problem, step, delay, batch_size, x0, n_steps, rng, delays=None,
                           increments=None, noise=None, time_step=None, record="all"):
    """Run the Gaussian-noise surrogate recursion and return its trajectory.

    With the same delay log and the same standard-normal draws as a unit-
    adjustment Euler-Maruyama run at matching grid spacing, the two paths
    coincide step for step.
    """
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    x0, delays, delta = _prepare_run(problem, step, delay, x0, n_steps, rng, delays, time_step)
    if increments is None:
        increments = plan_increments(rng, n_steps, problem.dim)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n_steps, problem.dim):
            raise ValueError(f"replayed noise log must have shape ({n_steps}, {problem.dim})")
    states, failures = gaussian_paths(problem, step, increments[None], delays, x0,
                                      batch_size=batch_size, noise=noise)
    if failures:
        raise SimulationDiverged(failures[0][1], failures[0][0])
    info = {"method": "gaussian_surrogate", "step": step.describe(), "batch_size": batch_size,
            "delay": None if delay is None else delay.describe()}
    return _as_trajectory(states[0], delta, step.start_index, delays, increments, info, record)
