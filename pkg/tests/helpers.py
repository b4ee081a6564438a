"""Independent oracles and study drivers used by the test suite.

Everything here deliberately avoids the code paths it is checking: the root
finder localises characteristic roots by grid search plus Newton instead of
Lambert W, covariances are brute-force enumerations, and the refinement study
builds its own coupled Brownian paths.
"""

import numpy as np

from sdde_optlab import DelaySchedule, quadratic_example, substream
from sdde_optlab.problems import ConstantNoiseModel, zero_noise
from sdde_optlab.sdde import HistorySegment, SddeSpec, TimeGrid, euler_paths


def rightmost_root_newton(a, tau, grid=80, iterations=60):
    """Rightmost root of beta + a exp(-beta tau) = 0 without Lambert W.

    The rightmost root lies in the strip 0 <= Im(beta) < pi/tau (roots come in
    conjugate pairs and successive branches move left); a coarse |f| scan of
    that strip seeds a complex Newton iteration.
    """
    if tau == 0.0:
        return complex(-a)

    def f(b):
        return b + a * np.exp(-b * tau)

    def fp(b):
        return 1.0 - a * tau * np.exp(-b * tau)

    re_hi = max(1.0, np.log(max(a * tau, 1.0)) + 1.0) / tau
    res = np.linspace(-1.5 / tau, re_hi, grid)
    ims = np.linspace(0.0, np.pi / tau * 0.999, grid)
    B = res[:, None] + 1j * ims[None, :]
    seed = B.flat[np.argmin(np.abs(f(B)))]
    beta = complex(seed)
    for _ in range(iterations):
        step = f(beta) / fp(beta)
        beta -= step
        if abs(step) < 1e-14 * max(1.0, abs(beta)):
            break
    if abs(f(beta)) > 1e-10:
        raise ArithmeticError(f"Newton failed for a={a}, tau={tau}: residual {abs(f(beta)):.2e}")
    if abs(beta.imag) < 1e-12:
        beta = complex(beta.real)
    return beta


def enumerate_covariance(problem, x):
    """Brute-force covariance of a uniformly drawn per-example gradient."""
    grads = np.stack([problem.grad_example(i, x) for i in range(problem.n_examples)])
    dev = grads - grads.mean(axis=0)
    return sum(np.outer(row, row) for row in dev) / problem.n_examples


def deterministic_order_errors(deltas, horizon=1.0, x0=4.0):
    """Global error of the noise-free integrator against 4 e^{-t} on dX = -X dt."""
    problem = quadratic_example()
    errors = []
    for delta in deltas:
        steps = round(horizon / delta)
        grid = TimeGrid(kind="constant", eta=delta, delta=delta, start_index=0)
        spec = SddeSpec(problem=problem, grid=grid, delay=None, n_steps=steps,
                        history=HistorySegment.constant_function([x0], 0),
                        noise=zero_noise(1))
        states, _ = euler_paths(spec, np.zeros((1, steps, 1)), np.zeros(steps, dtype=np.int64))
        errors.append(abs(float(states[0, -1, 0]) - x0 * np.exp(-horizon)))
    return np.asarray(errors)


def refinement_gap_means(seed, n_reps=200, eta=0.005, tau=0.05, horizon=1.0,
                         base_delta=0.005, level_factors=(1, 2, 4, 8), refine=16, x0=4.0):
    """Strong-coupling study of dX = -X(t - tau) dt + sqrt(eta) dB.

    One Brownian path per replication is drawn on the finest grid; coarser
    levels consume its aggregated increments.  Scaling the constant noise by
    eta/h expresses the fixed equation on each grid of spacing h.  Returns
    (spacings, mean terminal gaps vs the finest level).
    """
    problem = quadratic_example()
    fine_steps = round(horizon / (base_delta / refine))
    fine_delta = base_delta / refine
    z_fine = np.stack([
        substream(seed, rep, "noise").standard_normal((fine_steps, 1)) for rep in range(n_reps)
    ])
    brownian = np.sqrt(fine_delta) * z_fine
    terminals = {}
    for factor in tuple(level_factors) + (refine,):
        h = base_delta / factor
        steps = round(horizon / h)
        group = fine_steps // steps
        dB = brownian.reshape(n_reps, steps, group, 1).sum(axis=2)
        z = dB / np.sqrt(h)
        lag = round(tau / h)
        grid = TimeGrid(kind="constant", eta=h, delta=h, start_index=0)
        spec = SddeSpec(problem=problem, grid=grid,
                        delay=DelaySchedule.constant(lag, warmup=False),
                        n_steps=steps, history=HistorySegment.constant_function([x0], lag),
                        noise=ConstantNoiseModel([[eta / h]]))
        states, failures = euler_paths(spec, z, np.full(steps, lag, dtype=np.int64))
        assert not failures
        terminals[factor] = states[:, -1, 0]
    spacings = np.asarray([base_delta / f for f in level_factors])
    gaps = np.asarray([
        np.abs(terminals[f] - terminals[refine]).mean() for f in level_factors
    ])
    return spacings, gaps


def fit_slope(xs, ys):
    return float(np.polyfit(np.log10(np.asarray(xs)), np.log10(np.asarray(ys)), 1)[0])
