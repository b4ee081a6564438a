"""Command-line entry point.

Subcommands load an experiment config, run the requested simulation or study,
and write plot-ready CSV artifacts plus a manifest recording the config hash,
the seed and the library versions.  Exit codes: 0 on success, 1 on validation
errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys

import numpy as np

from . import __version__
from ._streams import substream
from .analytic import OuParams, characteristic_roots, ou_mean, ou_variance
from .config import ConfigError, describe_config, load_config
from .discrete import SimulationDiverged, run_asgd
from .harness import run_study
from .reporting import (
    write_delay_log,
    write_noise_log,
    write_report,
    write_scaling_report,
    write_trajectory,
)
from .sdde import HistorySegment, SddeSpec, couple_paths, euler_maruyama, time_step_for_schedule
from .problems import noise_factor, quadratic_example

log = logging.getLogger("sdde_optlab")


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SimulationDiverged, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def _build_parser():
    parser = argparse.ArgumentParser(prog="sdde-optlab",
                                     description="asynchronous SGD and its delay-diffusion limit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, needs_config=True, needs_out=True, help=None):
        p = sub.add_parser(name, help=help)
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config file")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if needs_out:
            p.add_argument("--out", default=".", help="output directory (default: current)")
        p.set_defaults(handler=handler)
        return p

    add("simulate-asgd", _cmd_simulate_asgd, help="one ASGD trajectory + delay log")
    add("simulate-sdde", _cmd_simulate_sdde, help="one Euler-Maruyama trajectory + noise log")
    add("compare", _cmd_compare, help="coupled ASGD and integrator paths on shared randomness")
    add("energy-check", _cmd_energy, help="energy monotonicity report")
    add("envelope-check", _cmd_envelope, help="second-moment envelope report")
    add("scaling", _cmd_scaling, help="path-gap scaling study with log-log fit")

    p = sub.add_parser("ou-moments", help="closed-form mean/variance of the zero-delay diffusion")
    p.add_argument("--t", type=float, nargs="+", required=True, help="evaluation times")
    p.add_argument("--x0", type=float, default=4.0)
    p.add_argument("--eta", type=float, default=0.005)
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(handler=_cmd_ou_moments)

    p = sub.add_parser("char-root", help="rightmost delay characteristic root exponent")
    p.add_argument("--a", type=float, nargs="+", required=True, help="curvature eigenvalues")
    p.add_argument("--tau", type=float, required=True, help="delay horizon")
    p.set_defaults(handler=_cmd_char_root)
    return parser


def _load(args):
    config = load_config(args.config, seed_override=args.seed)
    log.info("resolved config:\n%s", describe_config(config))
    return config


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_manifest(args, config):
    with open(args.config, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    lines = [
        f"config={os.path.basename(args.config)}",
        f"config_sha256={digest}",
        f"seed={config.seed}",
        f"sdde_optlab={__version__}",
        f"numpy={np.__version__}",
        f"python={sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
    ]
    path = os.path.join(args.out, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_simulate_asgd(args):
    config = _load(args)
    out = _outdir(args)
    trajectory = run_asgd(config.problem, config.step, config.delay, config.batch_size,
                          config.initial_point, config.n_steps,
                          substream(config.seed, 0, "batch"),
                          delays=_shared_delays(config), time_step=config.grid.delta)
    write_trajectory(os.path.join(out, "asgd.csv"), trajectory)
    write_delay_log(os.path.join(out, "delays.csv"), trajectory)
    _write_manifest(args, config)
    log.info("wrote asgd.csv and delays.csv to %s", out)
    return 0


def _shared_delays(config):
    from .discrete import realize_delays

    if config.delay is None:
        return None
    return realize_delays(config.delay, config.n_steps, substream(config.seed, 0, "delay"),
                          start_index=config.grid.start_index)


def _cmd_simulate_sdde(args):
    config = _load(args)
    out = _outdir(args)
    grid = config.grid
    horizon = max(config.delay_bound - grid.start_index, 0)
    spec = SddeSpec(problem=config.problem, grid=grid, delay=config.delay,
                    n_steps=config.n_steps,
                    history=HistorySegment.constant_function(config.initial_point, horizon),
                    batch_size=config.batch_size)
    trajectory = euler_maruyama(spec, substream(config.seed, 0, "noise"),
                                delays=_shared_delays(config))
    write_trajectory(os.path.join(out, "sdde.csv"), trajectory)
    write_noise_log(os.path.join(out, "noise_log.csv"), trajectory)
    _write_manifest(args, config)
    log.info("wrote sdde.csv and noise_log.csv to %s", out)
    return 0


def _cmd_compare(args):
    config = _load(args)
    out = _outdir(args)
    paths = couple_paths(config.problem, config.step, config.delay, config.batch_size,
                         config.initial_point, config.n_steps, config.seed, delta=config.delta)
    write_trajectory(os.path.join(out, "asgd.csv"), paths.asgd)
    write_trajectory(os.path.join(out, "sdde.csv"), paths.euler)
    _write_manifest(args, config)
    gap = paths.gap("asgd", "euler")
    print(f"max pathwise gap {gap.max()!r}, terminal gap {gap[-1]!r}")
    return 0


def _run_report(args, expected_kinds, filename="report.csv"):
    config = _load(args)
    if config.study not in expected_kinds:
        raise ConfigError(f"{args.config}: [study] kind must be one of {expected_kinds} "
                          f"for this command, got {config.study!r}")
    out = _outdir(args)
    report = run_study(config)
    write_report(os.path.join(out, filename), report)
    _write_manifest(args, config)
    verdict = "all checks passed" if report.all_pass() else "SOME CHECKS FAILED"
    print(f"{config.study}: {verdict} ({len(report.rows)} rows)")
    for key, value in sorted(report.details.items()):
        if isinstance(value, float):
            print(f"  {key} = {value!r}")
    return 0


def _cmd_energy(args):
    return _run_report(args, ("energy_check",))


def _cmd_envelope(args):
    return _run_report(args, ("envelope_check",))


def _cmd_scaling(args):
    config = _load(args)
    if config.study not in ("scaling_in_b", "scaling_in_k", "path_compare"):
        raise ConfigError(f"{args.config}: [study] kind must be a path or scaling study")
    out = _outdir(args)
    report = run_study(config)
    write_scaling_report(os.path.join(out, "scaling.csv"), report,
                         fit_path=os.path.join(out, "scaling_fit.csv"))
    _write_manifest(args, config)
    if report.study != "path_compare":
        print(f"{config.study}: slope {report.slope!r} (r2 {report.r_squared!r})")
    else:
        print(f"path_compare: mean terminal gap {report.rows[0].estimate!r}")
    return 0


def _cmd_ou_moments(args):
    problem = quadratic_example()
    params = OuParams(reversion=problem.gram, x_opt=problem.x_opt, eta=args.eta,
                      diffusion=noise_factor(problem, problem.x_opt, args.batch))
    x0 = np.full(problem.dim, args.x0)
    for t in args.t:
        mean = ou_mean(params, x0, t)
        var = ou_variance(params, t)
        print(f"t={t!r} mean={mean[0]!r} variance={var[0, 0]!r}")
    return 0


def _cmd_char_root(args):
    reversion = np.diag(np.asarray(args.a, dtype=float))
    eigenvalues, roots = characteristic_roots(reversion, args.tau)
    for a, beta in zip(eigenvalues, roots):
        log.info("a=%r root=%r", a, beta)
    v = float(np.max(roots.real))
    print(f"V = {v!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
