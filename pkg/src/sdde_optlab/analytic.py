"""Closed-form oracles and theoretical envelopes.

Contains the exact Ornstein-Uhlenbeck moments of constant-rate SGD on linear
regression, the rightmost characteristic root of the linear delay equation
(via the principal Lambert W branch), the exponential-decay and ln(t)/(t-1)
convergence envelopes, and the Lyapunov-style energy function whose expected
decrease underlies the second envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

__all__ = [
    "OuParams",
    "BoundParams",
    "ou_mean",
    "ou_variance",
    "lambert_w0",
    "characteristic_roots",
    "characteristic_root_sup",
    "moment_envelope",
    "energy_envelope",
    "energy_function",
    "estimate_noise_bound",
]

_SYMMETRY_TOL = 1e-12
_ROOT_RESIDUAL_TOL = 1e-10


def _check_symmetric(matrix, name):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    scale = max(1.0, float(np.abs(matrix).max()))
    if np.abs(matrix - matrix.T).max() > _SYMMETRY_TOL * scale:
        raise ValueError(f"{name} must be symmetric")
    return (matrix + matrix.T) / 2.0


@dataclass(frozen=True)
class OuParams:
    """Parameters of the linear diffusion dX = -(A X - A x*) dt + sqrt(eta) G dB.

    ``reversion`` is the symmetric PSD mean-reversion matrix (the Gram matrix
    of the regression problem), ``diffusion`` the constant matrix G.
    """

    reversion: np.ndarray
    x_opt: np.ndarray
    eta: float
    diffusion: np.ndarray

    def __post_init__(self):
        reversion = _check_symmetric(self.reversion, "reversion matrix")
        if np.linalg.eigvalsh(reversion).min() < -_SYMMETRY_TOL:
            raise ValueError("reversion matrix must be positive semidefinite")
        object.__setattr__(self, "reversion", reversion)
        object.__setattr__(self, "x_opt", np.atleast_1d(np.asarray(self.x_opt, dtype=float)))
        diffusion = np.atleast_2d(np.asarray(self.diffusion, dtype=float))
        object.__setattr__(self, "diffusion", diffusion)
        if not (self.eta > 0.0):
            raise ValueError("eta must be positive")

    @property
    def dim(self):
        return self.x_opt.shape[0]


def ou_mean(params, x0, t):
    """E[X(t)] = x* + exp(-A t) (x0 - x*)."""
    if t < 0:
        raise ValueError("time must be >= 0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    vals, vecs = np.linalg.eigh(params.reversion)
    modal = vecs.T @ (x0 - params.x_opt)
    return params.x_opt + vecs @ (np.exp(-vals * t) * modal)


def ou_variance(params, t):
    """Covariance of X(t) around its mean, integrated in the eigenbasis.

    For modal noise intensity m_ij (the rotated eta G G^T) the (i, j) entry is
    m_ij (1 - exp(-(a_i + a_j) t)) / (a_i + a_j), with the a_i + a_j = 0 cell
    degenerating to m_ij * t (pure Brownian growth).
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    vals, vecs = np.linalg.eigh(params.reversion)
    noise = params.eta * (params.diffusion @ params.diffusion.T)
    modal = vecs.T @ noise @ vecs
    rates = vals[:, None] + vals[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(rates > 0.0, -np.expm1(-rates * t) / np.where(rates > 0.0, rates, 1.0), t)
    cov = vecs @ (modal * weights) @ vecs.T
    return (cov + cov.T) / 2.0


# ---------------------------------------------------------------------------
# Lambert W and characteristic roots
# ---------------------------------------------------------------------------

_BRANCH_POINT = -1.0 / math.e


def lambert_w0(z, tol=1e-12, max_iter=100):
    """Principal branch of W e^W = z for complex z, by Halley iteration.

    The starting value is a branch-point series near z = -1/e and a log-based
    asymptote elsewhere; the result satisfies |W exp(W) - z| <= tol.  The
    branch point itself returns the limiting value -1.
    """
    z = complex(z)
    if z == 0.0:
        return 0.0 + 0.0j
    p_sq = 2.0 * (math.e * z + 1.0)
    if abs(p_sq) < 1e-14:
        return -1.0 + 0.0j
    if abs(p_sq) < 0.5:
        # series around the branch point, enough digits to seed Halley
        p = np.sqrt(complex(p_sq))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif abs(z) < 1.0:
        w = z * (1.0 - z + 1.5 * z * z)
    else:
        w = np.log(complex(z))
        w = w - np.log(w)
    for _ in range(max_iter):
        e = np.exp(w)
        f = w * e - z
        if abs(f) <= tol:
            return complex(w)
        wp1 = w + 1.0
        denom = e * wp1 - (w + 2.0) * f / (2.0 * wp1)
        w = w - f / denom
    raise ArithmeticError(f"Lambert W iteration failed to converge for z={z!r}: residual {abs(w * np.exp(w) - z):.3e}")


def characteristic_roots(reversion, tau):
    """Rightmost root of beta + a exp(-beta tau) = 0 for each eigenvalue a.

    For a symmetric matrix the determinant det(beta I + A exp(-beta tau))
    factors over the spectrum, and on each factor the rightmost solution is
    beta = W0(-a tau) / tau.  Returns (eigenvalues, roots); every root is
    Newton-polished until its residual is at most 1e-10.
    """
    reversion = _check_symmetric(reversion, "reversion matrix")
    if tau < 0:
        raise ValueError("delay horizon must be >= 0")
    eigenvalues = np.linalg.eigvalsh(reversion)
    if eigenvalues.min() < -_SYMMETRY_TOL:
        raise ValueError("reversion matrix must be positive semidefinite")
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    roots = []
    for a in eigenvalues:
        if tau == 0.0 or a == 0.0:
            roots.append(complex(-a))
            continue
        beta = lambert_w0(-a * tau) / tau
        beta = _polish_root(beta, a, tau)
        residual = abs(beta + a * np.exp(-beta * tau))
        if residual > _ROOT_RESIDUAL_TOL:
            raise ArithmeticError(
                f"characteristic root for a={a}, tau={tau} has residual {residual:.3e} > {_ROOT_RESIDUAL_TOL:.1e}"
            )
        roots.append(complex(beta))
    return eigenvalues, np.asarray(roots)


def _polish_root(beta, a, tau, steps=8):
    for _ in range(steps):
        f = beta + a * np.exp(-beta * tau)
        if abs(f) <= 1e-13 * max(1.0, abs(beta)):
            break
        fp = 1.0 - a * tau * np.exp(-beta * tau)
        if fp == 0:
            break
        beta = beta - f / fp
    return beta


def characteristic_root_sup(reversion, tau):
    """Supremum V of real parts of the delay characteristic roots.

    tau = 0 degenerates to -a_min; V < 0 certifies exponential mean decay.
    """
    _, roots = characteristic_roots(reversion, tau)
    return float(np.max(roots.real))


# ---------------------------------------------------------------------------
# envelopes and the energy function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the convergence envelopes.

    mu / lipschitz are the curvature constants, ``radius`` bounds the distance
    of iterates from the start, ``tau`` is the delay horizon in time units,
    ``delta`` the grid spacing, and ``noise_bound`` dominates the expected
    noise trace plus 2 mu L radius^2.  For the exponential envelope,
    ``root_sup`` is the characteristic exponent V, ``decay_rate`` a chosen
    lambda in (0, -V), ``precision`` equals eta tau^2, and the two fitted
    scales calibrate the transient and floor terms.
    """

    mu: float = 0.0
    lipschitz: float = 0.0
    radius: float = 0.0
    tau: float = 0.0
    delta: float = 0.0
    noise_bound: float = 0.0
    root_sup: float = math.nan
    decay_rate: float = math.nan
    precision: float = math.nan
    transient_scale: float = 1.0
    floor_scale: float = 1.0

    def with_fit(self, transient_scale, floor_scale):
        return replace(self, transient_scale=float(transient_scale), floor_scale=float(floor_scale))


def moment_envelope(t, params):
    """Exponential-decay envelope C5 exp(-2 lambda (t - tau)) + C6 eps / (lambda tau^2).

    Requires a certified negative characteristic exponent and a decay rate
    lambda strictly inside (0, -V).
    """
    if not (params.root_sup < 0.0):
        raise ValueError(f"envelope needs a negative characteristic exponent, got V={params.root_sup}")
    if not (0.0 < params.decay_rate < -params.root_sup):
        raise ValueError(
            f"decay rate must lie in (0, {-params.root_sup}), got {params.decay_rate}"
        )
    if not (params.tau > 0.0):
        raise ValueError("the exponential envelope is stated for a positive delay horizon")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    floor = params.floor_scale * params.precision / (params.decay_rate * params.tau ** 2)
    return params.transient_scale * np.exp(-2.0 * params.decay_rate * (t - params.tau)) + floor


def energy_envelope(t, params):
    """Envelope (delta + 1)(H + 2 L^2 D^2 tau) ln(t) / ((t - 1) mu^2) for t > 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 1.0):
        raise ValueError("the envelope is defined for t > 1")
    if not (params.mu > 0.0):
        raise ValueError("the envelope needs strong convexity mu > 0")
    scale = (params.delta + 1.0) * (params.noise_bound + 2.0 * params.lipschitz ** 2 * params.radius ** 2 * params.tau)
    return scale * np.log(t) / ((t - 1.0) * params.mu ** 2)


def energy_function(t, x, params, x_opt):
    """Energy E(t) = (t-1)/2 ||x - x*||^2 - (delta+1)(H + 2 L^2 D^2 tau) ln(t) / (2 mu^2)."""
    if t < 1.0:
        raise ValueError("the energy function is defined for t >= 1")
    if not (params.mu > 0.0):
        raise ValueError("the energy function needs strong convexity mu > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_opt = np.atleast_1d(np.asarray(x_opt, dtype=float))
    if x.shape != x_opt.shape:
        raise ValueError("point and optimum dimensions differ")
    scale = (params.delta + 1.0) * (params.noise_bound + 2.0 * params.lipschitz ** 2 * params.radius ** 2 * params.tau)
    sq = float(np.dot(x - x_opt, x - x_opt))
    return (t - 1.0) / 2.0 * sq - scale * math.log(t) / (2.0 * params.mu ** 2)


def energy_terms_batch(sq_dists, t, params):
    """Vectorised energy values from precomputed squared distances at time t."""
    scale = (params.delta + 1.0) * (params.noise_bound + 2.0 * params.lipschitz ** 2 * params.radius ** 2 * params.tau)
    return (t - 1.0) / 2.0 * np.asarray(sq_dists, dtype=float) - scale * math.log(t) / (2.0 * params.mu ** 2)


def estimate_noise_bound(problem, batch_size, radius, center, n_points=1000, safety=1.1):
    """Sampled noise-trace supremum over the ball of the given radius.

    Evaluates Tr(sigma sigma^T) at a deterministic Halton sample of the ball
    around ``center``, adds the curvature term 2 mu L radius^2, and inflates
    the total by the safety factor.
    """
    if not (radius > 0.0):
        raise ValueError("radius must be positive")
    center = problem.check_point(center)
    d = problem.dim
    noise = problem.noise_model
    if noise.is_constant:
        # Tr(sigma sigma^T) = Tr(Sigma)/b exactly, and Sigma is state free here.
        sup_trace = float(np.trace(noise.covariance(center))) / batch_size
    else:
        sampler = qmc.Halton(d=d + 1, scramble=False)
        u = sampler.random(n_points)
        directions = _ball_directions(u[:, :d])
        radii = radius * u[:, d] ** (1.0 / d)
        points = center + directions * radii[:, None]
        sup_trace = max(float(np.trace(noise.covariance(p))) for p in points) / batch_size
    curvature = 2.0 * problem.strong_convexity * problem.lipschitz * radius ** 2
    return safety * (sup_trace + curvature)


def _ball_directions(u):
    """Map uniform cube coordinates to directions on the unit sphere."""
    from scipy.special import ndtri

    z = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0.0] = 1.0
    return z / norms[:, None]
