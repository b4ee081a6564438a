import numpy as np
import pytest

from sdde_optlab import (
    CustomProblem,
    DelaySchedule,
    HistorySegment,
    SddeSpec,
    StepSchedule,
    couple_paths,
    euler_maruyama,
    quadratic_example,
    substream,
    time_step_for_schedule,
)
from sdde_optlab.problems import ConstantNoiseModel, LinearRegressionProblem, zero_noise
from sdde_optlab.sdde import euler_paths

from helpers import deterministic_order_errors, fit_slope


class TestTimeGrid:
    def test_constant_pins_delta(self):
        grid = time_step_for_schedule(StepSchedule.constant(0.005))
        assert grid.delta == 0.005
        assert grid.adjustment(3.7) == 1.0
        assert grid.start_index == 0

    def test_one_over_k_takes_any_precision(self):
        grid = time_step_for_schedule(StepSchedule.one_over_k(0.005), delta=0.01)
        assert grid.delta == 0.01
        assert grid.adjustment(1.0) == pytest.approx(0.01)
        assert grid.start_index == 1

    def test_sqrt_kind_evaluates(self):
        grid = time_step_for_schedule(StepSchedule.one_over_sqrt_k(0.04))
        assert grid.adjustment(1.0) == pytest.approx(0.2)

    def test_strongly_convex_grid(self):
        grid = time_step_for_schedule(StepSchedule.strongly_convex(1.0), delta=0.005)
        assert grid.eta == 1.0
        assert grid.adjustment(0.5) == pytest.approx(0.01)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            time_step_for_schedule(StepSchedule.constant(0.01), eta0=-1.0)
        with pytest.raises(ValueError):
            time_step_for_schedule(StepSchedule.constant(0.01), delta=0.02)
        with pytest.raises(ValueError):
            time_step_for_schedule(StepSchedule.one_over_sqrt_k(0.01), delta=0.02)

    def test_grid_matches_discrete_adjustments(self):
        # U(k delta) must agree with u_k for every schedule kind
        for schedule in (StepSchedule.constant(0.01), StepSchedule.one_over_k(0.01),
                         StepSchedule.one_over_sqrt_k(0.01), StepSchedule.strongly_convex(2.0)):
            grid = time_step_for_schedule(schedule, delta=0.01 if schedule.kind in ("one_over_k", "strongly_convex") else None)
            ks = np.arange(max(1, schedule.start_index), 50)
            assert grid.adjustment(ks * grid.delta) == pytest.approx(schedule.adjustments(ks), rel=1e-12)


class TestHistorySegment:
    def test_constant_lookup(self):
        history = HistorySegment.constant_function([4.0], 5)
        assert history.lookup(0) == pytest.approx([4.0])
        assert history.lookup(-5) == pytest.approx([4.0])
        with pytest.raises(KeyError):
            history.lookup(-6)

    def test_grid_samples_lookup(self):
        table = np.arange(8.0).reshape(4, 2)
        history = HistorySegment.grid_samples(table)
        assert history.horizon_steps == 3
        assert history.lookup(0) == pytest.approx([6.0, 7.0])
        assert history.lookup(-3) == pytest.approx([0.0, 1.0])
        with pytest.raises(KeyError):
            history.lookup(1)

    def test_wrong_row_count_rejected(self):
        with pytest.raises(ValueError):
            HistorySegment(horizon_steps=2, samples=np.zeros((2, 1)))


def _spec(problem, grid, delay, n_steps, history, noise=None, batch_size=1):
    return SddeSpec(problem=problem, grid=grid, delay=delay, n_steps=n_steps,
                    history=history, batch_size=batch_size, noise=noise)


class TestEulerMaruyama:
    def test_single_noise_free_step(self, quadratic):
        grid = time_step_for_schedule(StepSchedule.constant(0.005))
        spec = _spec(quadratic, grid, None, 1, HistorySegment.constant_function([4.0], 0),
                     noise=zero_noise(1))
        trajectory = euler_maruyama(spec, increments=np.zeros((1, 1)))
        assert trajectory.final_state == pytest.approx([3.98], abs=1e-15)

    def test_first_step_reads_history(self, quadratic):
        # constant history 4 with an always-on delay of 2: the first drift
        # evaluation uses xi(-2 delta) = 4
        grid = time_step_for_schedule(StepSchedule.constant(0.005))
        spec = _spec(quadratic, grid, DelaySchedule.constant(2, warmup=False), 1,
                     HistorySegment.constant_function([4.0], 2), noise=zero_noise(1))
        trajectory = euler_maruyama(spec, increments=np.zeros((1, 1)))
        assert trajectory.final_state == pytest.approx([3.98], abs=1e-15)

    def test_pure_diffusion_variance(self):
        # zero drift, unit noise: X(T) - X(0) is a sum of eta * z increments
        flat = LinearRegressionProblem(inputs=[[0.0]], outputs=[0.0])
        eta = 0.01
        steps, reps = 100, 10_000
        grid = time_step_for_schedule(StepSchedule.constant(eta))
        spec = _spec(flat, grid, None, steps, HistorySegment.constant_function([0.0], 0),
                     noise=ConstantNoiseModel([[1.0]]))
        increments = np.stack([
            substream(17, i, "noise").standard_normal((steps, 1)) for i in range(reps)
        ])
        states, failures = euler_paths(spec, increments, np.zeros(steps, dtype=np.int64))
        assert not failures
        finals = states[:, -1, 0]
        target = steps * eta ** 2
        se = finals.var(ddof=1) * np.sqrt(2.0 / (reps - 1))
        assert abs(finals.var(ddof=1) - target) <= 3.0 * se

    def test_zero_dynamics_never_leaves_start_or_history(self, quadratic, rng):
        # all-zero drift and diffusion: the state stays put no matter what the
        # (in-range) delays are; out-of-range history reads raise instead
        flat = CustomProblem(1, [lambda x: np.zeros(1)], lipschitz=0.0)
        grid = time_step_for_schedule(StepSchedule.constant(0.01))
        history = HistorySegment.grid_samples(rng.normal(size=(4, 1)))
        spec = _spec(flat, grid, DelaySchedule.uniform(3, warmup=False), 50,
                     history, noise=zero_noise(1))
        trajectory = euler_maruyama(spec, substream(1, 0, "noise"))
        assert np.all(trajectory.states == history.lookup(0)[0])

    def test_replayed_delays_out_of_bound_rejected(self, quadratic):
        grid = time_step_for_schedule(StepSchedule.constant(0.005))
        spec = _spec(quadratic, grid, DelaySchedule.constant(2, warmup=False), 10,
                     HistorySegment.constant_function([4.0], 2))
        bad = np.full(10, 3, dtype=np.int64)
        with pytest.raises(ValueError):
            euler_maruyama(spec, substream(0, 0, "noise"), delays=bad)

    def test_history_shorter_than_delay_rejected(self, quadratic):
        grid = time_step_for_schedule(StepSchedule.constant(0.005))
        with pytest.raises(ValueError):
            _spec(quadratic, grid, DelaySchedule.constant(5, warmup=False), 10,
                  HistorySegment.constant_function([4.0], 2))

    def test_deterministic_order_one(self):
        deltas = (0.01, 0.005, 0.0025, 0.00125)
        errors = deterministic_order_errors(deltas, horizon=1.0)
        slope = fit_slope(deltas, errors)
        assert slope == pytest.approx(1.0, abs=0.1)


class TestCouplePaths:
    def test_fully_deterministic_coincidence(self):
        # single-example least squares: no sampling noise at all, so ASGD,
        # surrogate and integrator are the same deterministic recursion
        problem = LinearRegressionProblem(inputs=[[1.0]], outputs=[0.0])
        paths = couple_paths(problem, StepSchedule.constant(0.005), None, 1, [4.0], 500, seed=3,
                             with_replacement=False)
        assert paths.gap("asgd", "surrogate").max() <= 1e-12
        assert paths.gap("asgd", "euler").max() <= 1e-12

    def test_surrogate_and_integrator_identical(self, quadratic):
        paths = couple_paths(quadratic, StepSchedule.constant(0.005),
                             DelaySchedule.constant(10), 1, [4.0], 2000, seed=1108)
        assert paths.gap("surrogate", "euler").max() <= 1e-12

    def test_shared_delay_sequence(self, quadratic):
        paths = couple_paths(quadratic, StepSchedule.constant(0.005),
                             DelaySchedule.uniform(10), 1, [4.0], 300, seed=9)
        assert np.array_equal(paths.asgd.delays, paths.euler.delays)
        assert np.array_equal(paths.surrogate.delays, paths.euler.delays)
        assert np.array_equal(paths.surrogate.increments, paths.euler.increments)

    def test_reference_setup_paths_stay_close(self, quadratic):
        paths = couple_paths(quadratic, StepSchedule.constant(0.005),
                             DelaySchedule.constant(10), 1, [4.0], 2000, seed=1108)
        gap = paths.gap("asgd", "euler")
        assert gap.max() < 0.5
