"""CSV export with stable, round-trippable number formatting.

All artifact files are plain comma-separated text.  Floats are written with
``repr``, the shortest representation that round-trips exactly, so a file is
bitwise reproducible from (config, seed) and safe to diff.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "format_value",
    "write_csv",
    "write_trajectory",
    "write_delay_log",
    "write_noise_log",
    "write_report",
    "write_scaling_report",
    "write_gap_table",
]


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trajectory(path, trajectory):
    """Columns: step,time,x_0,...,x_{d-1}."""
    header = ["step", "time"] + [f"x_{j}" for j in range(trajectory.dim)]
    rows = (
        [int(k), float(t)] + [float(v) for v in state]
        for k, t, state in zip(trajectory.step_indices, trajectory.times, trajectory.states)
    )
    write_csv(path, header, rows)


def write_delay_log(path, trajectory):
    """Columns: step,delay (the staleness used by the update leaving each step)."""
    if trajectory.delays is None:
        raise ValueError("trajectory carries no delay log")
    start = int(trajectory.step_indices[0])
    rows = ([start + k, int(l)] for k, l in enumerate(trajectory.delays))
    write_csv(path, ["step", "delay"], rows)


def write_noise_log(path, trajectory):
    """Columns: step,z_0,...,z_{d-1},delay for replaying a Gaussian-driven run."""
    if trajectory.increments is None:
        raise ValueError("trajectory carries no Gaussian increments")
    if trajectory.delays is None:
        raise ValueError("trajectory carries no delay log")
    d = trajectory.increments.shape[1]
    header = ["step"] + [f"z_{j}" for j in range(d)] + ["delay"]
    start = int(trajectory.step_indices[0])
    rows = (
        [start + k] + [float(v) for v in z] + [int(l)]
        for k, (z, l) in enumerate(zip(trajectory.increments, trajectory.delays))
    )
    write_csv(path, header, rows)


def write_report(path, report):
    """Columns: t,estimate,stderr,envelope,pass."""
    rows = ([r.key, r.estimate, r.stderr, r.envelope, r.passed] for r in report.rows)
    write_csv(path, ["t", "estimate", "stderr", "envelope", "pass"], rows)


def write_scaling_report(path, report, fit_path=None):
    """Columns: param,mean_error,stderr; the fit goes to a one-line footer file."""
    rows = ([r.key, r.estimate, r.stderr] for r in report.rows)
    write_csv(path, ["param", "mean_error", "stderr"], rows)
    if fit_path is not None:
        write_csv(fit_path, ["slope", "intercept", "r2"],
                  [[report.slope, report.intercept, report.r_squared]])


def write_gap_table(path, seeds, table):
    """Columns: seed,max_gap,terminal_gap."""
    rows = ([int(s), float(row[0]), float(row[1])] for s, row in zip(seeds, table))
    write_csv(path, ["seed", "max_gap", "terminal_gap"], rows)
