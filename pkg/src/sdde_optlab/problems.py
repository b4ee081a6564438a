"""Objective families for the asynchronous-SGD laboratory.

A problem is an empirical risk F(x) = (1/n) * sum_i f_i(x) over n training
examples.  Besides exact per-example gradients it carries the curvature
constants (gradient Lipschitz constant, strong convexity) consumed by the
theoretical envelopes, and the sampling-noise statistics of mini-batch
gradients: the covariance of a single per-example gradient around the full
gradient, and a PSD factor sigma(x, b) with sigma sigma^T = Sigma(x)/b.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "Problem",
    "LinearRegressionProblem",
    "CustomProblem",
    "NoiseModel",
    "GradientNoiseModel",
    "ConstantNoiseModel",
    "zero_noise",
    "quadratic_example",
    "full_gradient",
    "minibatch_gradient",
    "gradient_covariance",
    "noise_factor",
    "psd_sqrt",
]

# Eigenvalues of a covariance matrix this far below zero are treated as
# roundoff and clamped; anything lower is a genuine PSD violation.
PSD_TOLERANCE = 1e-12

# A problem that declares its optimum must have a full gradient at most this
# large there.
OPTIMUM_TOLERANCE = 1e-10


class DimensionError(ValueError):
    """A vector does not match the problem dimension."""


def psd_sqrt(matrix, tol=PSD_TOLERANCE):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero so that rank-deficient
    covariances (constant noise directions, single-example problems) are
    accepted; eigenvalues below -tol raise ValueError.
    """
    matrix = np.asarray(matrix, dtype=float)
    vals, vecs = np.linalg.eigh(matrix)
    if vals.min(initial=0.0) < -tol:
        raise ValueError(f"matrix is not PSD: smallest eigenvalue {vals.min():.3e} < {-tol:.1e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


class Problem:
    """Empirical risk with per-example gradient access.

    Subclasses implement ``grad_example``.  The base class derives full
    gradients, exact enumeration of the sampling-noise covariance, and slow
    but general batched variants used by the vectorised simulators.
    """

    def __init__(self, dim, n_examples, lipschitz, strong_convexity=0.0, x_opt=None):
        if n_examples < 1:
            raise ValueError("need at least one training example")
        if not (lipschitz >= strong_convexity >= 0.0):
            raise ValueError(
                f"curvature constants must satisfy L >= mu >= 0, got L={lipschitz}, mu={strong_convexity}"
            )
        self.dim = int(dim)
        self.n_examples = int(n_examples)
        self.lipschitz = float(lipschitz)
        self.strong_convexity = float(strong_convexity)
        self.x_opt = None if x_opt is None else np.asarray(x_opt, dtype=float).reshape(self.dim)
        if self.x_opt is not None:
            gnorm = float(np.linalg.norm(self.grad_full(self.x_opt)))
            if gnorm > OPTIMUM_TOLERANCE:
                raise ValueError(f"declared optimum has gradient norm {gnorm:.3e} > {OPTIMUM_TOLERANCE:.1e}")
        self._noise_model = None

    # -- per-example access ------------------------------------------------

    def grad_example(self, index, x):
        raise NotImplementedError

    def loss_example(self, index, x):
        raise NotImplementedError

    def grad_examples(self, x):
        """All n per-example gradients at x, shape (n, d)."""
        x = self.check_point(x)
        return np.stack([self.grad_example(i, x) for i in range(self.n_examples)])

    def grad_full(self, x):
        return self.grad_examples(x).mean(axis=0)

    def loss_full(self, x):
        x = self.check_point(x)
        return float(np.mean([self.loss_example(i, x) for i in range(self.n_examples)]))

    # -- batched access used by the vectorised simulators -------------------

    def grad_full_batch(self, states):
        """Full gradients at a batch of points, shape (m, d) -> (m, d)."""
        return np.stack([self.grad_full(row) for row in states])

    def grad_minibatch_batch(self, states, indices):
        """Averaged minibatch gradients: states (m, d), indices (m, b) -> (m, d)."""
        out = np.empty_like(states)
        for r in range(states.shape[0]):
            grads = np.stack([self.grad_example(i, states[r]) for i in indices[r]])
            out[r] = grads.mean(axis=0)
        return out

    # -- noise statistics ----------------------------------------------------

    @property
    def noise_model(self):
        if self._noise_model is None:
            self._noise_model = GradientNoiseModel(self)
        return self._noise_model

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected point of shape ({self.dim},), got {x.shape}")
        return x


class LinearRegressionProblem(Problem):
    """Least squares F(x) = ||A x - B||^2 / (2 n).

    Per-example losses are f_i(x) = (a_i . x - b_i)^2 / 2 with gradient
    a_i (a_i . x - b_i).  The second-moment matrices

        gram  = A^T A / n        cross = A^T B / n

    give the exact full gradient gram @ x - cross.  The gradient Lipschitz
    constant and strong convexity are the extreme eigenvalues of ``gram``,
    and the optimum solves gram x = cross whenever gram is invertible.
    """

    def __init__(self, inputs, outputs):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        outputs = np.asarray(outputs, dtype=float).reshape(-1)
        if inputs.shape[0] != outputs.shape[0]:
            raise ValueError(f"inputs have {inputs.shape[0]} rows but outputs have {outputs.shape[0]} entries")
        n, d = inputs.shape
        self.inputs = inputs
        self.outputs = outputs
        self.gram = inputs.T @ inputs / n
        self.cross = inputs.T @ outputs / n
        self.gram = (self.gram + self.gram.T) / 2.0
        eigvals = np.linalg.eigvalsh(self.gram)
        lipschitz = float(eigvals[-1])
        mu = float(max(eigvals[0], 0.0))
        x_opt = None
        if eigvals[0] > 1e-12 * max(1.0, eigvals[-1]):
            x_opt = np.linalg.solve(self.gram, self.cross)
        super().__init__(d, n, lipschitz, mu, x_opt)
        # The per-example gradient spread (a_i a_i^T - gram) x - (a_i b_i - cross)
        # is state independent exactly when every a_i a_i^T equals the Gram
        # matrix; detect that so constant-noise fast paths can be used.
        outer_dev = np.einsum("ni,nj->nij", inputs, inputs) - self.gram
        self.has_constant_gradient_spread = bool(np.max(np.abs(outer_dev)) <= 1e-12)

    def loss_example(self, index, x):
        r = float(self.inputs[index] @ self.check_point(x) - self.outputs[index])
        return 0.5 * r * r

    def grad_example(self, index, x):
        x = self.check_point(x)
        return self.inputs[index] * (self.inputs[index] @ x - self.outputs[index])

    def grad_examples(self, x):
        x = self.check_point(x)
        residuals = self.inputs @ x - self.outputs
        return self.inputs * residuals[:, None]

    def grad_full(self, x):
        return self.gram @ self.check_point(x) - self.cross

    def grad_full_batch(self, states):
        # Row-wise contractions instead of a matmul keep every lane's
        # arithmetic independent of the batch size.
        out = np.empty_like(states)
        for j in range(self.dim):
            out[:, j] = np.sum(states * self.gram[j][None, :], axis=-1)
        out -= self.cross
        return out

    def grad_minibatch_batch(self, states, indices):
        rows = self.inputs[indices]                       # (m, b, d)
        residuals = np.sum(rows * states[:, None, :], axis=-1) - self.outputs[indices]
        out = np.empty_like(states)
        for j in range(self.dim):
            out[:, j] = np.sum(rows[:, :, j] * residuals, axis=-1)
        out /= indices.shape[1]
        return out


class CustomProblem(Problem):
    """Problem defined by explicit per-example gradient callables."""

    def __init__(self, dim, gradients, lipschitz, strong_convexity=0.0, x_opt=None, losses=None):
        self._gradients = list(gradients)
        self._losses = None if losses is None else list(losses)
        super().__init__(dim, len(self._gradients), lipschitz, strong_convexity, x_opt)

    def grad_example(self, index, x):
        return np.asarray(self._gradients[index](self.check_point(x)), dtype=float).reshape(self.dim)

    def loss_example(self, index, x):
        if self._losses is None:
            raise NotImplementedError("no per-example losses were provided")
        return float(self._losses[index](self.check_point(x)))


def quadratic_example():
    """Two-example scalar least-squares problem with unit curvature.

    The two examples pull toward -1 and +1, so the averaged gradient at x is
    exactly x, the optimum is 0, and the per-example gradients spread +-1
    around the mean at every point (unit sampling variance, state free).
    """
    return LinearRegressionProblem(inputs=[[1.0], [1.0]], outputs=[-1.0, 1.0])


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


class NoiseModel:
    """Sampling-noise statistics: covariance Sigma(x) and factor sigma(x, b)."""

    is_constant = False

    def covariance(self, x):
        raise NotImplementedError

    def factor(self, x, batch_size):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        return psd_sqrt(self.covariance(x) / batch_size)

    def constant_factor(self, batch_size):
        raise ValueError("noise model is state dependent; no constant factor exists")


class GradientNoiseModel(NoiseModel):
    """Exact enumeration of the per-example gradient covariance of a problem."""

    def __init__(self, problem):
        self.problem = problem
        self.is_constant = bool(getattr(problem, "has_constant_gradient_spread", False))
        self._cached = {}

    def covariance(self, x):
        grads = self.problem.grad_examples(x)
        dev = grads - grads.mean(axis=0)
        return dev.T @ dev / self.problem.n_examples

    def factor(self, x, batch_size):
        if self.is_constant:
            return self.constant_factor(batch_size)
        return super().factor(x, batch_size)

    def constant_factor(self, batch_size):
        if not self.is_constant:
            return super().constant_factor(batch_size)
        if batch_size not in self._cached:
            anchor = np.zeros(self.problem.dim)
            self._cached[batch_size] = psd_sqrt(self.covariance(anchor) / batch_size)
        return self._cached[batch_size]


class ConstantNoiseModel(NoiseModel):
    """State-independent covariance, e.g. for hand-built diffusion terms."""

    is_constant = True

    def __init__(self, covariance):
        covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        self._covariance = (covariance + covariance.T) / 2.0
        self._cached = {}

    def covariance(self, x):
        return self._covariance

    def constant_factor(self, batch_size):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if batch_size not in self._cached:
            self._cached[batch_size] = psd_sqrt(self._covariance / batch_size)
        return self._cached[batch_size]

    def factor(self, x, batch_size):
        return self.constant_factor(batch_size)


def zero_noise(dim):
    """Noise model with identically zero covariance."""
    return ConstantNoiseModel(np.zeros((dim, dim)))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def full_gradient(problem, x):
    """Gradient of the empirical risk: the average of all per-example gradients."""
    return problem.grad_full(problem.check_point(x))


def minibatch_gradient(problem, x, batch_size, rng, with_replacement=True):
    """Average of ``batch_size`` sampled per-example gradients at x.

    Sampling is i.i.d. uniform with replacement, which makes the estimate
    unbiased with covariance Sigma(x)/b.  The without-replacement override is
    only supported for full batches (b = n), where it reproduces the full
    gradient exactly.
    """
    x = problem.check_point(x)
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if not with_replacement:
        if batch_size != problem.n_examples:
            raise ValueError("without-replacement sampling is only supported for b = n (full batch)")
        return problem.grad_full(x)
    indices = rng.integers(0, problem.n_examples, size=batch_size)
    grads = problem.grad_examples(x)
    return grads[indices].mean(axis=0)


def gradient_covariance(problem, x):
    """Exact covariance of a uniformly drawn per-example gradient at x."""
    return problem.noise_model.covariance(problem.check_point(x))


def noise_factor(problem, x, batch_size):
    """Symmetric PSD square root of Sigma(x)/b (eigendecomposition based)."""
    return problem.noise_model.factor(problem.check_point(x), batch_size)
