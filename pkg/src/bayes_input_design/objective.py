"""Penalized design cost, its prior-averaged versions and exact gradients.

Every weighting of the parameter (a single value, a finite set of atoms, or
the Gaussian prior itself) reduces to a set of *channels*: input maps
``B_c`` driving state copies ``x_c`` from zero, combined through a symmetric
weight matrix ``W`` so that the averaged penalty is
``sum_cd W_cd int x_c . x_d``.

* single theta: one channel ``B(theta)``, ``W = [[1]]``;
* atoms: one channel per atom, ``W = diag(weights)``;
* Gaussian prior: the p+1 blocks of the stacked system, driven by
  ``B_0..B_p``, with ``W = E[(1, theta)(1, theta)^T]``.  This is the exact
  augmented evaluation, free of sampling error.

The artifact maximizes

    J(u) = (1/T) int psi . u  -  (alpha/T) E int |x^theta|^2  -  (eta/2T) ||u - u_ref||^2

which is ``-1/T`` times the minimized functional with proximal term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.stats import norm

from .bayes import GaussianBelief, eopt_direction
from .errors import DimensionMismatch, UnsupportedDimension
from .sysmodel import (ControlGrid, Discretization, LinearParamSystem, PsiFamily, compute_psi_family,
                       control_values, propagate, second_moments, _check_grid)


@dataclass(frozen=True, eq=False)
class DesignContext:
    psi_fam: PsiFamily
    V: np.ndarray
    alpha: float
    eta: float = 0.0
    u_ref: Optional[ControlGrid] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.eta > 0 and self.u_ref is None:
            raise ValueError("eta > 0 needs a reference control u_ref")


def make_context(sys: LinearParamSystem, disc: Discretization, prior: GaussianBelief, alpha: float,
                 eta: float = 0.0, u_ref=None, V=None) -> DesignContext:
    """Build the design context; ``V`` defaults to the E-optimal direction of the prior."""
    if V is None:
        V, _ = eopt_direction(prior)
    else:
        V = np.asarray(V, dtype=float).reshape(-1)
        V = V / np.linalg.norm(V)
    if u_ref is not None and not isinstance(u_ref, ControlGrid):
        u_ref = ControlGrid(control_values(u_ref), sys.T)
    return DesignContext(compute_psi_family(sys, disc, V), np.asarray(V), float(alpha), float(eta), u_ref)


@dataclass(frozen=True, eq=False)
class AtomicPrior:
    """Finitely supported probability measure on parameter space."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != atoms.shape[0]:
            raise DimensionMismatch("one weight per atom required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        atoms.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def second_moment(self) -> np.ndarray:
        return np.einsum("k,ki,kj->ij", self.weights, self.atoms, self.atoms)


def atomize_prior(prior: GaussianBelief, N: int, radius: float = 4.0, weights: str = "cell") -> AtomicPrior:
    """Equi-spaced atoms on ``mean +/- radius * std``.

    ``weights="cell"`` gives each atom the prior mass of its nearest-atom
    cell (the outermost cells extend to infinity), which is the push-forward
    of the prior onto the atoms and converges in W1 as the grid refines.
    ``weights="density"`` normalizes the density evaluated at the atoms.
    """
    if prior.p != 1:
        raise UnsupportedDimension("atomization is only available for a scalar parameter")
    if N < 1 or int(N) != N:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not radius > 0:
        raise ValueError("radius must be positive")
    mu, sd = float(prior.mean[0]), float(np.sqrt(prior.cov[0, 0]))
    if N == 1:
        return AtomicPrior(np.array([[mu]]), np.array([1.0]))
    z = np.linspace(-radius, radius, int(N))
    if weights == "cell":
        edges = np.concatenate([[-np.inf], 0.5 * (z[:-1] + z[1:]), [np.inf]])
        w = np.diff(norm.cdf(edges))
        # fold the tiny asymmetry of cdf differences so that w is exactly symmetric
        w = 0.5 * (w + w[::-1])
    elif weights == "density":
        w = np.exp(-0.5 * z ** 2)
    else:
        raise ValueError(f"unknown weighting {weights!r}")
    w = w / w.sum()
    return AtomicPrior((mu + sd * z)[:, None], w)


Weighting = Union[np.ndarray, AtomicPrior, GaussianBelief]


def channels(sys: LinearParamSystem, weighting: Weighting):
    """Input maps (C, n, m) and weight matrix (C, C) for a weighting."""
    if isinstance(weighting, GaussianBelief):
        if weighting.p != sys.p:
            raise DimensionMismatch(f"prior has dimension {weighting.p}, system has p = {sys.p}")
        return np.asarray(sys.B), second_moments(weighting.mean, weighting.cov)
    if isinstance(weighting, AtomicPrior):
        if weighting.atoms.shape[1] != sys.p:
            raise DimensionMismatch(f"atoms have dimension {weighting.atoms.shape[1]}, system has p = {sys.p}")
        Bc = sys.B[0] + np.einsum("ki,inm->knm", weighting.atoms, sys.B[1:])
        return Bc, np.diag(weighting.weights)
    Bt = sys.B_theta(weighting)
    return Bt[None], np.ones((1, 1))


class DesignProblem:
    """Discretized cost and gradient for one system, context and weighting."""

    def __init__(self, sys: LinearParamSystem, disc: Discretization, ctx: DesignContext, weighting: Weighting):
        if ctx.psi_fam.psi_int.shape != (disc.K, sys.m):
            raise DimensionMismatch("design context was built on a different grid")
        self.sys, self.disc, self.ctx = sys, disc, ctx
        self.Bc, self.W = channels(sys, weighting)
        self.c_lin = ctx.psi_fam.psi_int / sys.T
        self.u_ref = None if ctx.u_ref is None else control_values(ctx.u_ref, disc.K, sys.m)

    def _check(self, u):
        return _check_grid(self.sys, self.disc, u)

    def forward(self, v):
        C, n, m = self.Bc.shape
        b = (v @ self.Bc.reshape(C * n, m).T).reshape(-1, C, n)
        return b, propagate(self.disc, b)

    def penalty(self, v) -> float:
        """``E int |x^theta|^2`` under the weighting."""
        b, X = self.forward(v)
        Vx = np.concatenate([X[:-1], b], axis=-1)
        return float(np.sum(Vx * (self.W @ (Vx @ self.disc.M))))

    def _prox(self, v):
        if self.ctx.eta == 0:
            return 0.0, 0.0
        d = v - self.u_ref
        T, dt = self.sys.T, self.disc.dt
        return 0.5 * self.ctx.eta * dt * np.sum(d * d) / T, self.ctx.eta * dt * d / T

    def value(self, u) -> float:
        v = self._check(u)
        lin = float(np.sum(self.c_lin * v))
        return lin - self.ctx.alpha * self.penalty(v) / self.sys.T - self._prox(v)[0]

    def value_and_gradient(self, u):
        v = self._check(u)
        disc, T, alpha = self.disc, self.sys.T, self.ctx.alpha
        b, X = self.forward(v)
        Vx = np.concatenate([X[:-1], b], axis=-1)
        MV = Vx @ disc.M
        WMV = self.W @ MV
        pen = float(np.sum(Vx * WMV))
        R = 2.0 * WMV
        n = disc.n
        Rx, Rb = R[..., :n], R[..., n:]
        lam = np.zeros(R.shape[1:2] + (n,))
        dqdb = np.empty_like(Rb)
        for k in range(disc.K - 1, -1, -1):
            dqdb[k] = Rb[k] + lam @ disc.Gamma
            lam = Rx[k] + lam @ disc.Phi
        C, _, m = self.Bc.shape
        dqdu = dqdb.reshape(disc.K, C * n) @ self.Bc.reshape(C * n, m)
        pv, pg = self._prox(v)
        J = float(np.sum(self.c_lin * v)) - alpha * pen / T - pv
        g = self.c_lin - alpha * dqdu / T - pg
        return J, g

    def gradient(self, u) -> np.ndarray:
        return self.value_and_gradient(u)[1]


def cost_classical(sys, disc, ctx: DesignContext, theta, u) -> float:
    """``J_alpha(u, theta)`` for one parameter value."""
    return DesignProblem(sys, disc, ctx, np.asarray(theta, dtype=float)).value(u)


def cost_ensemble_exact(sys, disc, ctx: DesignContext, prior: GaussianBelief, u) -> float:
    """Prior-averaged cost through the stacked system (no sampling)."""
    return DesignProblem(sys, disc, ctx, prior).value(u)


def cost_ensemble_atoms(sys, disc, ctx: DesignContext, atoms: AtomicPrior, u) -> float:
    """Weighted sum of per-atom costs."""
    return DesignProblem(sys, disc, ctx, atoms).value(u)


def gradient(sys, disc, ctx: DesignContext, weighting: Weighting, u) -> np.ndarray:
    """Euclidean gradient ``dJ/du_k[i]`` of the discretized cost, shape (K, m)."""
    return DesignProblem(sys, disc, ctx, weighting).gradient(u)
