"""Gaussian prior/posterior algebra and design criteria."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateEigenvalue, DimensionMismatch, SingularCovariance
from .sysmodel import Discretization, LinearParamSystem, propagate, state_interval_means, _check_grid

COND_MAX = 1e12
SYM_TOL = 1e-12


def check_covariance(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise SingularCovariance(f"covariance must be square, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise SingularCovariance("covariance has non-finite entries")
    if np.max(np.abs(cov - cov.T)) > SYM_TOL * max(1.0, np.max(np.abs(cov))):
        raise SingularCovariance("covariance is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 0:
        raise SingularCovariance(f"covariance is not positive definite (min eigenvalue {eig[0]:.3g})")
    return cov


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Normal distribution ``N(mean, cov)`` over the parameter vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = check_covariance(self.cov).copy()
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"mean has length {mean.size} but cov is {cov.shape}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def p(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class PosteriorUpdate:
    belief: GaussianBelief
    S2: np.ndarray
    information_gain: float


def noise_precision(sys: LinearParamSystem) -> np.ndarray:
    """``S^2 = T (sigma sigma^T)^{-1}``, the precision of the averaged noise."""
    ss = sys.sigma @ sys.sigma.T
    return sys.T * cho_solve(cho_factor(ss), np.eye(sys.q))


def _logdet(c) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(c[0]))))


def _prior_factor(prior: GaussianBelief):
    if np.linalg.cond(prior.cov) > COND_MAX:
        raise SingularCovariance(f"prior covariance condition number exceeds {COND_MAX:g}")
    return cho_factor(prior.cov)


def posterior_update(prior: GaussianBelief, Y0, Y, sys: LinearParamSystem, y_avg) -> PosteriorUpdate:
    """Posterior of ``theta`` after observing ``y_avg = Y0 + Y theta + noise``."""
    q, p = sys.q, prior.p
    Y0 = np.asarray(Y0, dtype=float).reshape(q)
    Y = np.asarray(Y, dtype=float).reshape(q, p)
    y_avg = np.asarray(y_avg, dtype=float).reshape(q)
    if p != sys.p:
        raise DimensionMismatch(f"prior has dimension {p}, system has p = {sys.p}")
    S2 = noise_precision(sys)
    cp = _prior_factor(prior)
    prior_prec = cho_solve(cp, np.eye(p))
    info = Y.T @ S2 @ Y
    precision = info + prior_prec
    precision = 0.5 * (precision + precision.T)
    cf = cho_factor(precision)
    cov = cho_solve(cf, np.eye(p))
    cov = 0.5 * (cov + cov.T)
    rhs = Y.T @ S2 @ (y_avg - Y0) + cho_solve(cp, prior.mean)
    mean = cho_solve(cf, rhs)
    gain = _logdet(cp) + _logdet(cf)  # log det Sigma_prior - log det Sigma_post
    return PosteriorUpdate(GaussianBelief(mean, cov), S2, float(gain))


def symmetric_sqrt(S: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(S)
    return (U * np.sqrt(np.clip(w, 0, None))) @ U.T


def trace_objective(prior: GaussianBelief, Y, sys: LinearParamSystem) -> float:
    """Relaxed D-criterion ``Tr(Sigma^{1/2} Y^T S^2 Y Sigma^{1/2})``."""
    Y = np.asarray(Y, dtype=float).reshape(sys.q, prior.p)
    R = symmetric_sqrt(prior.cov)
    return float(np.trace(R @ Y.T @ noise_precision(sys) @ Y @ R))


def eopt_direction(prior: GaussianBelief, gap_tol: float = 1e-8):
    """Unit direction of largest prior variance and its relative eigen-gap.

    The largest-magnitude component is made positive.  The gap is
    ``1 - lambda_2 / lambda_max`` (identical for the covariance and its
    inverse); it is ``inf`` when p = 1.
    """
    w, U = np.linalg.eigh(prior.cov)
    V = U[:, -1].copy()
    if V[np.argmax(np.abs(V))] < 0:
        V = -V
    if prior.p == 1:
        return V, math.inf
    gap = float(1.0 - w[-2] / w[-1])
    if gap < gap_tol:
        raise DegenerateEigenvalue(f"largest prior eigenvalue is not simple (relative gap {gap:.3g})")
    return V, gap


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) used for every stochastic draw."""
    return np.random.Generator(np.random.Philox(int(seed)))


def simulate_measurement(sys: LinearParamSystem, disc: Discretization, theta_true, u, seed: int,
                         noiseless: bool = False) -> np.ndarray:
    """Averaged output ``(1/T) int C x dt + eps`` with ``eps ~ N(0, sigma sigma^T / T)``."""
    v = _check_grid(sys, disc, u)
    b = v @ sys.B_theta(theta_true).T
    X = propagate(disc, b)
    xbar = state_interval_means(disc, X, b).sum(axis=0) * disc.dt / sys.T
    y = sys.C @ xbar
    if noiseless:
        return y
    xi = rng_for(seed).standard_normal(sys.q)
    return y + sys.sigma @ xi / math.sqrt(sys.T)
