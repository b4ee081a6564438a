"""sdde-optlab: asynchronous SGD and its continuous-time delay-diffusion limit.

A numerical laboratory that couples three simulators of the same optimisation
run - asynchronous minibatch SGD, its Gaussian-noise surrogate recursion, and
the Euler-Maruyama scheme of the matching stochastic differential delay
equation - on shared random streams, and verifies closed-form moment oracles,
characteristic-root stability exponents and convergence envelopes against
replicated Monte-Carlo estimates.
"""

__version__ = "0.1.0"

from ._streams import substream
from .analytic import (
    BoundParams,
    OuParams,
    characteristic_root_sup,
    characteristic_roots,
    energy_envelope,
    energy_function,
    estimate_noise_bound,
    lambert_w0,
    moment_envelope,
    ou_mean,
    ou_variance,
)
from .discrete import (
    DelaySchedule,
    SimulationDiverged,
    StepSchedule,
    Trajectory,
    realize_delays,
    run_asgd,
    run_gaussian_surrogate,
    sample_delay,
)
from .harness import (
    BoundReport,
    ExperimentConfig,
    coupled_gap_table,
    energy_monotonicity_check,
    envelope_check,
    measure_radius,
    moment_check,
    path_error_study,
    replicate,
    run_study,
)
from .problems import (
    ConstantNoiseModel,
    CustomProblem,
    LinearRegressionProblem,
    Problem,
    full_gradient,
    gradient_covariance,
    minibatch_gradient,
    noise_factor,
    psd_sqrt,
    quadratic_example,
    zero_noise,
)
from .sdde import (
    CoupledPaths,
    HistorySegment,
    SddeSpec,
    TimeGrid,
    couple_paths,
    euler_maruyama,
    time_step_for_schedule,
)

__all__ = [name for name in dir() if not name.startswith("_")]
