"""Experiment configs: flat key = value text under [section] headers.

Sections and keys are validated against a fixed schema; unknown keys are
rejected outright so typos cannot silently change an experiment.  Every value
has either a default or is listed as required, and the fully resolved config
can be echoed back for inspection.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import fields

import numpy as np

from .discrete import DelaySchedule, StepSchedule
from .harness import ExperimentConfig
from .problems import LinearRegressionProblem, quadratic_example

__all__ = ["ConfigError", "load_config", "describe_config", "SEED_ENV_VAR"]

SEED_ENV_VAR = "SDDE_OPTLAB_SEED"


class ConfigError(ValueError):
    """A config file failed validation; the message lists every offence."""


_SCHEMA = {
    "problem": {"kind", "inputs", "outputs", "data_csv"},
    "run": {"eta", "delta", "steps", "batch", "x0", "seed", "replications",
            "chunk_size", "n_jobs"},
    "delay": {"kind", "bound", "warmup", "pmf"},
    "step": {"kind", "mu"},
    "study": {"kind", "checkpoints", "b_values", "k_values", "radius",
              "lambda_fraction", "rate_fraction", "envelope",
              "calibration_replications"},
}

_REQUIRED = (("problem", "kind"), ("run", "steps"), ("run", "x0"))


def _parse_bool(text, where):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


def _parse_vector(text):
    return np.asarray([float(v) for v in text.replace(",", " ").split()])


def _parse_matrix(text):
    rows = [r.strip() for r in text.split(";") if r.strip()]
    return np.asarray([[float(v) for v in row.split()] for row in rows])


class _Section:
    def __init__(self, name, raw, errors):
        self.name = name
        self.raw = raw
        self.errors = errors

    def get(self, key, default=None, convert=str):
        if self.raw is None or key not in self.raw:
            return default
        text = self.raw[key]
        try:
            return convert(text)
        except ConfigError:
            raise
        except Exception as exc:
            self.errors.append(f"[{self.name}] {key}: cannot parse {text!r} ({exc})")
            return default

    def has(self, key):
        return self.raw is not None and key in self.raw


def load_config(path, seed_override=None):
    """Read, validate and normalise a config file into an ExperimentConfig.

    The seed resolves in order: explicit override, the config's ``run.seed``,
    the SDDE_OPTLAB_SEED environment variable.  All schema violations are
    collected and reported together.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    errors = []
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}] (expected {sorted(_SCHEMA)})")
            continue
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key [{section}] {key} (expected {sorted(_SCHEMA[section])})")
    missing = [f"[{sec}] {key}" for sec, key in _REQUIRED
               if sec not in parser or key not in parser[sec]]
    if missing:
        errors.append("missing required keys: " + ", ".join(missing))
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))

    sections = {name: _Section(name, parser[name] if name in parser else None, errors)
                for name in _SCHEMA}

    problem = _build_problem(sections["problem"], os.path.dirname(os.path.abspath(path)), errors)
    step = _build_step(sections["step"], sections["run"], errors)
    delay = _build_delay(sections["delay"], errors)

    run = sections["run"]
    study = sections["study"]
    seed = seed_override
    if seed is None:
        seed = run.get("seed", None, int)
    if seed is None and os.environ.get(SEED_ENV_VAR):
        seed = int(os.environ[SEED_ENV_VAR])
    if seed is None:
        errors.append("no seed given ([run] seed, --seed, or the SDDE_OPTLAB_SEED variable)")

    kind = study.get("kind", "path_compare")
    scan_values = ()
    if kind == "scaling_in_b":
        scan_values = tuple(int(v) for v in study.get("b_values", (), _parse_vector))
    elif kind == "scaling_in_k":
        scan_values = tuple(int(v) for v in study.get("k_values", (), _parse_vector))

    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))

    try:
        return ExperimentConfig(
            problem=problem,
            study=kind,
            step=step,
            delay=delay,
            x0=tuple(run.get("x0", (), _parse_vector)),
            batch_size=run.get("batch", 1, int),
            n_steps=run.get("steps", 1, int),
            delta=run.get("delta", None, float),
            n_replications=run.get("replications", 1, int),
            seed=seed,
            checkpoints=tuple(study.get("checkpoints", (), _parse_vector)),
            scan_values=scan_values,
            radius=study.get("radius", None, float),
            lambda_fraction=study.get("lambda_fraction", 0.9, float),
            rate_fraction=study.get("rate_fraction", 0.5, float),
            envelope=study.get("envelope", "energy"),
            chunk_size=run.get("chunk_size", 1024, int),
            n_jobs=run.get("n_jobs", 1, int),
            calibration_replications=study.get("calibration_replications", 200, int),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_problem(section, base_dir, errors):
    kind = section.get("kind", "quadratic_example")
    if kind == "quadratic_example":
        return quadratic_example()
    if kind != "linear_regression":
        errors.append(f"[problem] kind must be quadratic_example or linear_regression, got {kind!r}")
        return quadratic_example()
    if section.has("data_csv"):
        csv_path = section.get("data_csv")
        if not os.path.isabs(csv_path):
            csv_path = os.path.join(base_dir, csv_path)
        try:
            table = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        except OSError as exc:
            errors.append(f"[problem] data_csv: {exc}")
            return quadratic_example()
        return LinearRegressionProblem(inputs=table[:, :-1], outputs=table[:, -1])
    if not (section.has("inputs") and section.has("outputs")):
        errors.append("[problem] linear_regression needs either data_csv or inputs + outputs")
        return quadratic_example()
    return LinearRegressionProblem(
        inputs=section.get("inputs", None, _parse_matrix),
        outputs=section.get("outputs", None, _parse_vector),
    )


def _build_step(section, run, errors):
    kind = section.get("kind", "constant")
    eta = run.get("eta", None, float)
    if kind == "strongly_convex":
        mu = section.get("mu", None, float)
        if mu is None:
            errors.append("[step] strongly_convex needs mu")
            mu = 1.0
        if run.get("delta", None, float) is None:
            errors.append("[run] delta is required for the strongly_convex schedule")
        return StepSchedule.strongly_convex(mu)
    if eta is None:
        errors.append("[run] eta is required")
        eta = 1.0
    try:
        return StepSchedule(kind, eta, section.get("mu", 0.0, float))
    except ValueError as exc:
        errors.append(f"[step] {exc}")
        return StepSchedule.constant(eta)


def _build_delay(section, errors):
    kind = section.get("kind", "none")
    if kind == "none":
        return None
    warmup = section.get("warmup", True, lambda t: _parse_bool(t, "[delay] warmup"))
    bound = section.get("bound", 0, int)
    try:
        if kind == "pmf":
            weights = section.get("pmf", None, _parse_vector)
            if weights is None:
                errors.append("[delay] pmf kind needs pmf weights")
                return None
            return DelaySchedule.from_pmf(weights, warmup)
        return DelaySchedule(kind, bound, warmup)
    except ValueError as exc:
        errors.append(f"[delay] {exc}")
        return None


def describe_config(config):
    """Human-readable echo of every resolved field."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "problem":
            value = f"{type(value).__name__}(d={value.dim}, n={value.n_examples})"
        elif f.name in ("step", "delay") and value is not None:
            value = value.describe()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines)
