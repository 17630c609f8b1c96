"""Pontryagin analysis of computed controls.

With the normalization ``p_0 = -1`` the covector of each system copy solves
``p' = -p A + 2 alpha x^T`` backwards from ``p(T) = 0`` and the switching
function of channel i is ``phi_i = E[p B(theta)^i] + psi^i`` (a single
parameter value is the special case of a one-point weighting).  Maximality
of the Hamiltonian gives ``u_i = sign(phi_i)`` off singular arcs; on an arc
where ``phi_i`` vanishes identically, differentiating twice gives a linear
system for the singular controls.

Ensemble expectations are taken channel-wise (see :mod:`.objective`): with
weighted covectors ``P_c`` one has ``E[p M B(theta)] = sum_c P_c M B_c`` and
``E[x^T M B(theta)] = sum_cd W_cd x_c^T M B_d``.  For the Gaussian prior the
channels are the stacked-system blocks, so no sampling is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bayes import GaussianBelief
from .errors import DimensionMismatch, SingularGram
from .objective import AtomicPrior, DesignContext, Weighting, channels
from .sysmodel import Discretization, LinearParamSystem, PsiFamily, propagate, _check_grid

GRAM_COND_MAX = 1e12


@dataclass(frozen=True, eq=False)
class CovectorData:
    """States and weighted covectors of all channels at the grid nodes.

    Attributes
    ----------
    X : (K+1, C, n) channel states.
    P : (K+1, C, n) weighted covectors, ``P[K] = 0``.
    b : (K, C, n) input increments ``B_c u_k``.
    B : (C, n, m) channel input maps.
    W : (C, C) channel weights.
    pB : (K+1, m) ``E[p B(theta)]`` at the nodes.
    pB_int : (K, m) exact interval integrals of ``E[p B(theta)]``.
    """

    X: np.ndarray
    P: np.ndarray
    b: np.ndarray
    B: np.ndarray
    W: np.ndarray
    pB: np.ndarray
    pB_int: np.ndarray
    alpha: float

    @property
    def p(self) -> np.ndarray:
        """Covector path for a single-parameter weighting, (K+1, n)."""
        if self.P.shape[1] != 1:
            raise ValueError("p is only defined for a single parameter value; use P or pB")
        return self.P[:, 0]

    @property
    def x(self) -> np.ndarray:
        if self.X.shape[1] != 1:
            raise ValueError("x is only defined for a single parameter value; use X")
        return self.X[:, 0]


def integrate_covector(sys: LinearParamSystem, disc: Discretization, weighting: Weighting, u,
                       alpha: float) -> CovectorData:
    """Exact backward integration of the covector for the piecewise-constant ``u``.

    Over one interval, with ``x(t_k + s) = e^{As} x_k + Gamma(s) b_k``,

        p_k = p_{k+1} Phi - 2 alpha (x_k^T M_xx + b_k^T M_bx)
        int p B = p_{k+1} Gamma B - 2 alpha (x_k^T M_xb + b_k^T M_bb) B

    where ``M`` is the interval state Gramian of :class:`Discretization`.
    """
    v = _check_grid(sys, disc, u)
    Bc, W = channels(sys, weighting)
    C, n, m = Bc.shape
    b = np.einsum("cnm,km->kcn", Bc, v)
    X = propagate(disc, b)
    M = disc.M
    Mxx, Mxb, Mbx, Mbb = M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]
    # source terms mixed across channels by the weights
    src_node = np.einsum("cd,kdn->kcn", W, X[:-1] @ Mxx + b @ Mbx)
    src_int = np.einsum("cd,kdn->kcn", W, X[:-1] @ Mxb + b @ Mbb)
    P = np.zeros((disc.K + 1, C, n))
    Pint = np.zeros((disc.K, C, n))
    for k in range(disc.K - 1, -1, -1):
        Pint[k] = P[k + 1] @ disc.Gamma - 2.0 * alpha * src_int[k]
        P[k] = P[k + 1] @ disc.Phi - 2.0 * alpha * src_node[k]
    pB = np.einsum("kcn,cnm->km", P, Bc)
    pB_int = np.einsum("kcn,cnm->km", Pint, Bc)
    return CovectorData(X, P, b, Bc, W, pB, pB_int, float(alpha))


def switching_functions(psi_fam: PsiFamily, cov: CovectorData) -> np.ndarray:
    """``phi_i(t_k) = E[p B(theta)^i] + psi^i`` at the nodes, shape (K+1, m)."""
    if psi_fam.psi.shape != cov.pB.shape:
        raise DimensionMismatch("kernel family and covector live on different grids")
    return psi_fam.psi + cov.pB


def interval_switching(psi_fam: PsiFamily, cov: CovectorData, dt: float) -> np.ndarray:
    """Interval averages of the switching functions, shape (K, m).

    ``dt / T`` times this is the Euclidean gradient of the discretized cost.
    """
    return (psi_fam.psi_int + cov.pB_int) / dt


@dataclass(frozen=True)
class Arc:
    label: str  # "bang+", "bang-", "singular" or "indeterminate"
    start: int  # first node index
    stop: int  # last node index (inclusive)
    t_start: float
    t_stop: float


def _runs(labels: Sequence[str]):
    start = 0
    for k in range(1, len(labels) + 1):
        if k == len(labels) or labels[k] != labels[start]:
            yield labels[start], start, k - 1
            start = k


def classify_arcs(switching: np.ndarray, nodes: np.ndarray, delta_sw: float = 1e-3,
                  min_singular: int = 3) -> List[List[Arc]]:
    """Label maximal runs of nodes per channel.

    Nodes with ``|phi_i| <= delta_sw * max|phi_i|`` form singular arcs when at
    least ``min_singular`` of them are consecutive; shorter sub-threshold runs
    are indeterminate, except runs of exact zeros, which take the label of the
    neighbouring arc (previous one when available).
    """
    phi = np.asarray(switching, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape[0] != phi.shape[0]:
        raise DimensionMismatch("one node time per switching value required")
    out = []
    for i in range(phi.shape[1]):
        f = phi[:, i]
        thr = delta_sw * np.max(np.abs(f))
        raw = np.where(f > thr, "bang+", np.where(f < -thr, "bang-", "small")).tolist()
        labels = list(raw)
        for lab, a, z in list(_runs(raw)):
            if lab != "small":
                continue
            if z - a + 1 >= min_singular:
                new = "singular"
            elif np.all(f[a:z + 1] == 0) and (a > 0 or z + 1 < len(f)):
                new = labels[a - 1] if a > 0 else raw[z + 1]
            else:
                new = "indeterminate"
            labels[a:z + 1] = [new] * (z - a + 1)
        out.append([Arc(lab, a, z, float(nodes[a]), float(nodes[z])) for lab, a, z in _runs(labels)])
    return out


def gram_matrices(sys: LinearParamSystem, prior: GaussianBelief, theta_nominal=None):
    """``(G_bar, G_sigma, G_ensemble)``.

    ``G_bar_ij = B_bar^j . B_bar^i`` at the nominal parameter,
    ``G_sigma_ij = Tr(B^j^T B^i Sigma)``, and ``G_ensemble`` is the prior
    expectation of ``B(theta)^T B(theta)``, computed directly from the second
    moments of the prior.
    """
    theta_nominal = prior.mean if theta_nominal is None else np.asarray(theta_nominal, dtype=float)
    Bbar = sys.B_theta(theta_nominal)
    G_bar = Bbar.T @ Bbar
    blocks = [sys.param_block(i) for i in range(sys.m)]
    G_sigma = np.array([[np.trace(blocks[j].T @ blocks[i] @ prior.cov) for j in range(sys.m)]
                        for i in range(sys.m)])
    Bc, W = channels(sys, prior)
    G_ens = np.einsum("cd,cni,dnj->ij", W, Bc, Bc)
    sym = lambda G: 0.5 * (G + G.T)
    return sym(G_bar), sym(G_sigma), sym(G_ens)


def averaged_gram(cov: CovectorData) -> np.ndarray:
    """``E[B(theta)^T B(theta)]`` under the weighting carried by ``cov``."""
    G = np.einsum("cd,cni,dnj->ij", cov.W, cov.B, cov.B)
    return 0.5 * (G + G.T)


def _second_derivative_terms(sys, cov: CovectorData, k: int):
    """Terms of ``phi''``: ``E[p A^2 B]`` and ``E[x^T (A - A^T) B]`` at node k."""
    A = sys.A
    a = np.einsum("cn,cnm->m", cov.P[k] @ (A @ A), cov.B)
    s = np.einsum("cd,cn,dnm->m", cov.W, cov.X[k] @ (A - A.T), cov.B)
    return a, s


def singular_residual(sys, psi_fam: PsiFamily, cov: CovectorData, k: int, u_node) -> np.ndarray:
    """``phi''`` at node k for the control vector ``u_node`` (all channels)."""
    alpha = cov.alpha
    a, s = _second_derivative_terms(sys, cov, k)
    G = averaged_gram(cov)
    return a - 2 * alpha * s + 2 * alpha * G @ np.asarray(u_node, dtype=float) + psi_fam.ddpsi[k]


@dataclass
class SingularFeedback:
    nodes: np.ndarray
    values: np.ndarray  # (len(nodes), k)
    feasible: np.ndarray  # (len(nodes),)


def singular_feedback(sys, psi_fam: PsiFamily, cov: CovectorData, nodes, singular: Sequence[int],
                      bang_signs: Optional[Dict[int, float]] = None) -> SingularFeedback:
    """Singular control values making ``phi_i'' = 0`` on the singular channels.

    Solves, at each node,

        G_SS u_S = -E[p A^2 B^S]/(2 alpha) + E[x^T (A - A^T) B^S] - psi''_S/(2 alpha) - G_SB eps_B

    with ``G`` the (averaged) Gram matrix and ``eps`` the signs of the bang
    channels.  A node is infeasible when any ``|u_S| > 1``.
    """
    bang_signs = dict(bang_signs or {})
    S = list(singular)
    Bidx = sorted(bang_signs)
    if set(S) & set(Bidx):
        raise ValueError("a channel cannot be both singular and bang")
    alpha = cov.alpha
    G = averaged_gram(cov)
    GSS = G[np.ix_(S, S)]
    if np.linalg.cond(GSS) > GRAM_COND_MAX:
        raise SingularGram(f"Gram matrix of singular channels is ill-conditioned (cond {np.linalg.cond(GSS):.3g})")
    eps = np.array([bang_signs[j] for j in Bidx], dtype=float)
    nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
    vals = np.empty((nodes.size, len(S)))
    for r, k in enumerate(nodes):
        a, s = _second_derivative_terms(sys, cov, k)
        rhs = -a[S] / (2 * alpha) + s[S] - psi_fam.ddpsi[k, S] / (2 * alpha)
        if Bidx:
            rhs = rhs - G[np.ix_(S, Bidx)] @ eps
        vals[r] = np.linalg.solve(GSS, rhs)
    return SingularFeedback(nodes, vals, np.all(np.abs(vals) <= 1.0, axis=1))


def legendre_clebsch_check(gram: np.ndarray, alpha: float, singular: Optional[Sequence[int]] = None):
    """``(passed, min_eig)`` for ``2 alpha G`` restricted to the singular channels."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    G = np.atleast_2d(np.asarray(gram, dtype=float))
    if singular is not None:
        G = G[np.ix_(list(singular), list(singular))]
    if G.size == 0:
        return True, float("inf")
    lam = float(np.linalg.eigvalsh(2 * alpha * 0.5 * (G + G.T))[0])
    return lam > 0, lam


def sign_consistency(phi: np.ndarray, u: np.ndarray, delta_sw: float = 1e-3) -> float:
    """Fraction of samples with ``sign(phi) == sign(u)`` among ``|phi| > delta_sw * max|phi|``.

    ``phi`` and ``u`` are aligned arrays of shape (K, m).
    """
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    thr = delta_sw * np.max(np.abs(phi), axis=0, keepdims=True)
    mask = np.abs(phi) > thr
    if not np.any(mask):
        return 1.0
    return float(np.mean(np.sign(phi[mask]) == np.sign(u[mask])))


@dataclass
class PmpReport:
    mode: str
    switching: np.ndarray
    switching_interval: np.ndarray
    arcs: List[List[Arc]]
    gram_classical: np.ndarray
    gram_sigma: np.ndarray
    gram_ensemble: np.ndarray
    consistency: float
    consistency_nodes: float
    lc_min_eig: float
    lc_pass: bool
    singular_feedback_error: float = float("nan")  # RMS
    singular_feasible_fraction: float = float("nan")
    singular_residual_max: float = float("nan")
    extra: dict = field(default_factory=dict)


def pmp_report(sys: LinearParamSystem, disc: Discretization, ctx: DesignContext, weighting: Weighting, u,
               prior: GaussianBelief, delta_sw: float = 1e-3) -> PmpReport:
    """Full first- and second-order diagnostic of a computed control.

    ``consistency`` compares the sign of the interval-averaged switching
    function with the control on each interval; ``consistency_nodes`` uses
    the switching values at the left node of each interval instead.  The
    interval average is the switching function of the discretized problem
    (``dt / T`` times it is the gradient), so it is the primary measure.
    ``singular_feedback_error`` is the RMS gap between the control and the
    singular feedback on fully singular, interior intervals.
    """
    v = _check_grid(sys, disc, u)
    cov = integrate_covector(sys, disc, weighting, v, ctx.alpha)
    phi = switching_functions(ctx.psi_fam, cov)
    phi_int = interval_switching(ctx.psi_fam, cov, disc.dt)
    arcs = classify_arcs(phi, disc.nodes, delta_sw)
    G_bar, G_sig, G_ens = gram_matrices(sys, prior)
    ensemble = isinstance(weighting, (GaussianBelief, AtomicPrior))
    lc_pass, lc = legendre_clebsch_check(G_ens if ensemble else G_bar, ctx.alpha)

    # singular feedback on nodes where every channel is singular and the control is interior
    sing = np.ones(disc.K, dtype=bool)
    for i in range(sys.m):
        lab = np.zeros(disc.K + 1, dtype=bool)
        for arc in arcs[i]:
            if arc.label == "singular":
                lab[arc.start:arc.stop + 1] = True
        sing &= lab[:-1]
    sing &= np.all(np.abs(v) < 1 - 1e-9, axis=1)
    # node 0 and the last interval are excluded: the piecewise-constant control jumps there
    idx = np.nonzero(sing)[0]
    idx = idx[(idx > 0) & (idx < disc.K - 1)]
    fb_err = feas = res = float("nan")
    extra = {"singular_nodes": int(idx.size)}
    if idx.size:
        fb = singular_feedback(sys, ctx.psi_fam, cov, idx, list(range(sys.m)))
        # the control on [t_k, t_k+1) against the feedback averaged over its two end nodes
        fb_next = singular_feedback(sys, ctx.psi_fam, cov, idx + 1, list(range(sys.m)))
        d = 0.5 * (fb.values + fb_next.values) - v[idx]
        fb_err = float(np.sqrt(np.mean(d ** 2)))
        extra["singular_feedback_max_error"] = float(np.max(np.abs(d)))
        feas = float(np.mean(fb.feasible))
        res = float(max(np.max(np.abs(singular_residual(sys, ctx.psi_fam, cov, k, fb.values[r])))
                        for r, k in enumerate(idx)))
    return PmpReport(
        mode="ensemble" if ensemble else "classical",
        switching=phi, switching_interval=phi_int, arcs=arcs,
        gram_classical=G_bar, gram_sigma=G_sig, gram_ensemble=G_ens,
        consistency=sign_consistency(phi_int, v, delta_sw),
        consistency_nodes=sign_consistency(phi[:-1], v, delta_sw),
        lc_min_eig=lc, lc_pass=lc_pass,
        singular_feedback_error=fb_err, singular_feasible_fraction=feas, singular_residual_max=res,
        extra=extra,
    )
