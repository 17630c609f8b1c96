"""Parameter-affine linear systems and their exact sampled-data discretization.

The dynamics are ``x' = A x + B(theta) u`` with ``x(0) = 0`` and
``B(theta) = B_0 + sum_i theta_i B_i``; the scalar (or vector) output is
``y = C x``.  Controls are piecewise constant on a uniform grid, so every
quantity below (transition matrices, interval integrals of the state, the
quadratic state penalty and the measurement kernels) is evaluated exactly
with block matrix exponentials.  No ODE solver is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .errors import DimensionMismatch, InvalidSystem, NonFiniteMatrix, UnsupportedDimension

RANK_TOL = 1e-10
BOUND_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearParamSystem:
    """System data ``(A, B_0..B_p, C, sigma, T)``.

    Parameters
    ----------
    A : (n, n) array_like
    B : sequence of p+1 arrays of shape (n, m)
        ``B[0]`` is the nominal input map, ``B[i]`` multiplies ``theta_i``.
    C : (q, n) array_like
    sigma : (q, q) array_like
        Noise scale, must have full rank.
    T : float
        Horizon.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma: np.ndarray
    T: float

    def __post_init__(self):
        A = _frozen(np.atleast_2d(self.A))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 2:
            # p+1 column vectors: single input channel
            B = B[:, :, None]
        C = _frozen(np.atleast_2d(self.C))
        sigma = _frozen(np.atleast_2d(self.sigma))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "T", float(self.T))
        self._validate()

    def _validate(self):
        A, B, C, sigma = self.A, self.B, self.C, self.sigma
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidSystem(f"A must be square, got {A.shape}")
        if B.ndim != 3 or B.shape[1] != n or B.shape[0] < 2:
            raise InvalidSystem(f"B must hold p+1 >= 2 matrices of shape (n, m), got {B.shape}")
        if C.ndim != 2 or C.shape[1] != n:
            raise InvalidSystem(f"C must have {n} columns, got {C.shape}")
        q = C.shape[0]
        if sigma.shape != (q, q):
            raise InvalidSystem(f"sigma must be {q}x{q}, got {sigma.shape}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidSystem(f"horizon T must be positive, got {self.T}")
        for name, M in (("A", A), ("B", B), ("C", C), ("sigma", sigma)):
            if not np.all(np.isfinite(M)):
                raise InvalidSystem(f"{name} has non-finite entries")
        m, p = self.m, self.p
        if not (q <= p <= n and m <= n):
            raise InvalidSystem(f"need q <= p <= n and m <= n, got n={n} m={m} p={p} q={q}")
        sv = np.linalg.svd(sigma, compute_uv=False)
        if not sv[-1] > RANK_TOL * sv[0]:
            raise InvalidSystem("sigma is rank deficient")
        # columns i of B_1..B_p, one flattened n x p block per input channel
        fam = np.stack([B[1:, :, i].T.ravel() for i in range(m)])
        sv = np.linalg.svd(fam, compute_uv=False)
        if sv[-1] <= RANK_TOL * max(sv[0], 1.0):
            raise InvalidSystem("parameter input blocks B^i are linearly dependent (control redundancy)")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def p(self) -> int:
        return self.B.shape[0] - 1

    @property
    def q(self) -> int:
        return self.C.shape[0]

    def B_theta(self, theta) -> np.ndarray:
        """Input map ``B_0 + sum_i theta_i B_i`` for one parameter vector."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.p,):
            raise DimensionMismatch(f"theta must have length {self.p}, got {theta.shape}")
        return self.B[0] + np.tensordot(theta, self.B[1:], axes=1)

    def param_block(self, i: int) -> np.ndarray:
        """The n x p matrix of the i-th columns of ``B_1..B_p``."""
        return self.B[1:, :, i].T

    def with_horizon(self, T: float) -> "LinearParamSystem":
        return LinearParamSystem(self.A, self.B, self.C, self.sigma, T)


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Piecewise-constant control, ``values[k, i]`` on ``[t_k, t_{k+1})``."""

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise DimensionMismatch(f"control values must be K x m with K >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        if np.max(np.abs(v)) > 1 + BOUND_TOL:
            raise ValueError(f"control violates |u| <= 1 (max {np.max(np.abs(v)):.6g})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "T", float(self.T))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, K: int, m: int, T: float) -> "ControlGrid":
        return cls(np.zeros((K, m)), T)

    @classmethod
    def constant(cls, value, K: int, m: int, T: float) -> "ControlGrid":
        return cls(np.full((K, m), float(value)), T)


def control_values(u, K: Optional[int] = None, m: Optional[int] = None) -> np.ndarray:
    """Return the K x m value array of a ControlGrid or array-like."""
    v = u.values if isinstance(u, ControlGrid) else np.asarray(u, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if (K is not None and v.shape[0] != K) or (m is not None and v.shape[1] != m):
        raise DimensionMismatch(f"control has shape {v.shape}, expected ({K}, {m})")
    return v


@dataclass(frozen=True, eq=False)
class Discretization:
    """Exact one-step data for piecewise-constant inputs of length ``dt``.

    Attributes
    ----------
    Phi : e^{A dt}
    Gamma : int_0^dt e^{A s} ds
    Gamma2 : int_0^dt Gamma(s) ds, used for exact interval averages of the state
    M : (2n, 2n) Gramian ``int_0^dt E(s)^T E(s) ds`` with ``E(s) = [e^{As}, Gamma(s)]``.
        For ``x(t_k + s) = e^{As} x_k + Gamma(s) b`` one has
        ``int |x|^2 = [x_k; b]^T M [x_k; b]``.
    """

    K: int
    T: float
    dt: float
    Phi: np.ndarray
    Gamma: np.ndarray
    Gamma2: np.ndarray
    M: np.ndarray
    nodes: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.Phi.shape[0]


def integral_exponentials(A: np.ndarray, t: float):
    """Return ``(e^{At}, int_0^t e^{As} ds, int_0^t int_0^s e^{Ar} dr ds)``.

    Top block row of the exponential of ``[[A, I, 0], [0, 0, I], [0, 0, 0]] t``.
    """
    n = A.shape[0]
    H = np.zeros((3 * n, 3 * n))
    H[:n, :n] = A
    H[:n, n:2 * n] = np.eye(n)
    H[n:2 * n, 2 * n:] = np.eye(n)
    with np.errstate(over="ignore", invalid="ignore"):
        E = expm(H * t)
    if not np.all(np.isfinite(E)):
        raise NonFiniteMatrix(f"matrix exponential overflowed (||A t|| = {np.linalg.norm(A) * abs(t):.3g})")
    return E[:n, :n], E[:n, n:2 * n], E[:n, 2 * n:]


def _state_gramian(A: np.ndarray, dt: float) -> np.ndarray:
    # Van Loan: expm([[-F^T, Q], [0, F]] dt) = [[., G12], [0, G22]], gramian = G22^T G12
    n = A.shape[0]
    F = np.zeros((2 * n, 2 * n))
    F[:n, :n] = A
    F[:n, n:] = np.eye(n)
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = np.eye(n)
    L = np.zeros((4 * n, 4 * n))
    L[:2 * n, :2 * n] = -F.T
    L[:2 * n, 2 * n:] = Q
    L[2 * n:, 2 * n:] = F
    with np.errstate(over="ignore", invalid="ignore"):
        E = expm(L * dt)
    if not np.all(np.isfinite(E)):
        raise NonFiniteMatrix(f"matrix exponential overflowed (||A dt|| = {np.linalg.norm(A) * dt:.3g})")
    M = E[2 * n:, 2 * n:].T @ E[:2 * n, 2 * n:]
    return 0.5 * (M + M.T)


def discretize(sys: LinearParamSystem, K: int) -> Discretization:
    """Exact transition data on a uniform grid of ``K`` intervals."""
    if int(K) != K or K < 2:
        raise ValueError(f"K must be an integer >= 2, got {K}")
    K = int(K)
    dt = sys.T / K
    Phi, Gamma, Gamma2 = integral_exponentials(sys.A, dt)
    M = _state_gramian(sys.A, dt)
    return Discretization(
        K=K, T=sys.T, dt=dt,
        Phi=_frozen(Phi), Gamma=_frozen(Gamma), Gamma2=_frozen(Gamma2), M=_frozen(M),
        nodes=_frozen(np.linspace(0.0, sys.T, K + 1)),
    )


def _check_grid(sys, disc, u):
    if abs(disc.T - sys.T) > 1e-12 * max(1.0, sys.T) or disc.n != sys.n:
        raise DimensionMismatch("discretization does not belong to this system")
    if isinstance(u, ControlGrid) and abs(u.T - sys.T) > 1e-12 * max(1.0, sys.T):
        raise DimensionMismatch(f"control horizon {u.T} differs from system horizon {sys.T}")
    return control_values(u, disc.K, sys.m)


def propagate(disc: Discretization, b: np.ndarray) -> np.ndarray:
    """States at the nodes for input increments ``b``.

    ``b`` has shape (K, ..., n) (the input map already applied); returns
    (K+1, ..., n) with ``x_0 = 0`` and ``x_{k+1} = Phi x_k + Gamma b_k``.
    """
    K = b.shape[0]
    X = np.zeros((K + 1,) + b.shape[1:])
    w = b @ disc.Gamma.T
    PhiT = disc.Phi.T
    for k in range(K):
        X[k + 1] = X[k] @ PhiT + w[k]
    return X


def simulate_trajectory(sys: LinearParamSystem, disc: Discretization, theta, u) -> np.ndarray:
    """State path ``x^theta`` at the K+1 grid nodes, shape (K+1, n)."""
    v = _check_grid(sys, disc, u)
    Bt = sys.B_theta(theta)
    return propagate(disc, v @ Bt.T)


def state_interval_means(disc: Discretization, X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact averages of the state over each interval, shape (K, ..., n)."""
    return (X[:-1] @ disc.Gamma.T + b @ disc.Gamma2.T) / disc.dt


def state_square_integrals(disc: Discretization, X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact ``int |x|^2`` over each interval for node states ``X`` and increments ``b``."""
    V = np.concatenate([X[:-1], b], axis=-1)
    return np.einsum("...a,ab,...b->...", V, disc.M, V)


def pointwise_square_norm(sys: LinearParamSystem, theta, u, samples_per_interval: int = 8):
    """Sample ``|x^theta(t)|^2`` inside every interval (exact, for plotting and maxima).

    Returns ``(t, values)`` with ``K * samples_per_interval + 1`` points.
    """
    v = control_values(u)
    K = v.shape[0]
    dt = sys.T / K
    sub = discretize(sys, K * samples_per_interval)
    vs = np.repeat(v, samples_per_interval, axis=0)
    X = propagate(sub, vs @ sys.B_theta(theta).T)
    assert abs(sub.dt * samples_per_interval - dt) < 1e-12 * max(1, dt)
    return sub.nodes, np.sum(X ** 2, axis=-1)


@dataclass(frozen=True, eq=False)
class PsiFamily:
    """Measurement kernels on the grid (single output, q = 1).

    Attributes
    ----------
    psi_j, dpsi_j, ddpsi_j : (p+1, K+1, m)
        ``psi_j(s) = int_s^T B_j^T e^{A^T (t - s)} C^T dt`` and its first two
        time derivatives at the nodes.
    psi_int_j : (p+1, K, m)
        Exact integrals of ``psi_j`` over each interval.
    psi, dpsi, ddpsi : (K+1, m)
        Combined design kernel ``scale * sum_{j>=1} V_j psi_j``.
    psi_int : (K, m)
    scale : float
        ``sqrt(T) / sigma``.
    V : (p,) unit direction used in the combination.
    T : horizon.
    """

    psi_j: np.ndarray
    dpsi_j: np.ndarray
    ddpsi_j: np.ndarray
    psi_int_j: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    ddpsi: np.ndarray
    psi_int: np.ndarray
    scale: float
    V: np.ndarray
    T: float


def measurement_kernels(sys: LinearParamSystem, disc: Discretization):
    """Kernels for any number of outputs.

    Returns ``(psi, dpsi, ddpsi, psi_int)`` with shapes (p+1, K+1, m, q) for the
    node values and (p+1, K, m, q) for the interval integrals.
    """
    K, T = disc.K, sys.T
    A, C = sys.A, sys.C
    n = sys.n
    # remaining time T - t_k at every node; Gamma(r), Gamma2(r) and e^{Ar} per node
    G = np.empty((K + 1, n, n))
    G2 = np.empty((K + 1, n, n))
    Ex = np.empty((K + 1, n, n))
    for k in range(K + 1):
        r = T - disc.nodes[k] if k < K else 0.0
        Ex[k], G[k], G2[k] = integral_exponentials(A, r)
    # (C X B_j)^T for each node: shape (p+1, K+1, m, q)
    def kern(X):
        return np.einsum("qa,kab,jbm->jkmq", C, X, sys.B)
    psi = kern(G)
    dpsi = -kern(Ex)
    ddpsi = kern(np.einsum("ab,kbc->kac", A, Ex))
    g2 = kern(G2)
    psi_int = g2[:, :-1] - g2[:, 1:]
    return psi, dpsi, ddpsi, psi_int


def compute_psi_family(sys: LinearParamSystem, disc: Discretization, V) -> PsiFamily:
    """Kernels ``psi_j`` and the combined design kernel along direction ``V``."""
    if sys.q != 1:
        raise UnsupportedDimension(f"the combined design kernel needs q = 1, got q = {sys.q}")
    V = np.asarray(V, dtype=float).reshape(-1)
    if V.shape != (sys.p,):
        raise DimensionMismatch(f"V must have length {sys.p}")
    if abs(np.linalg.norm(V) - 1.0) > 1e-9:
        raise ValueError("V must be a unit vector")
    psi, dpsi, ddpsi, psi_int = (a[..., 0] for a in measurement_kernels(sys, disc))
    scale = float(np.sqrt(sys.T) / sys.sigma[0, 0])
    comb = lambda a: scale * np.tensordot(V, a[1:], axes=1)
    return PsiFamily(
        psi_j=_frozen(psi), dpsi_j=_frozen(dpsi), ddpsi_j=_frozen(ddpsi), psi_int_j=_frozen(psi_int),
        psi=_frozen(comb(psi)), dpsi=_frozen(comb(dpsi)), ddpsi=_frozen(comb(ddpsi)),
        psi_int=_frozen(comb(psi_int)), scale=scale, V=_frozen(V), T=sys.T,
    )


def compute_Y(sys: LinearParamSystem, disc: Discretization, psi_fam: Optional[PsiFamily], u):
    """Measurement functionals ``Y_j = (1/T) int psi_j^T u``.

    Returns ``(Y0, Y)`` with shapes (q,) and (q, p).  When ``psi_fam`` is None
    the kernels are computed here, which also covers q > 1.
    """
    v = _check_grid(sys, disc, u)
    if psi_fam is None:
        psi_int = measurement_kernels(sys, disc)[3]
    else:
        if psi_fam.psi_int_j.shape[1] != disc.K:
            raise DimensionMismatch("kernel family was built on a different grid")
        psi_int = psi_fam.psi_int_j[..., None]
    Yall = np.einsum("jkmq,km->qj", psi_int, v) / sys.T
    return Yall[:, 0].copy(), Yall[:, 1:].copy()


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """Stacked system ``z' = A_aug z + B_aug u`` of dimension n(p+1).

    ``E_prior |x^theta(t)|^2 = z(t)^T Q z(t)``.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    moments: np.ndarray  # (p+1, p+1) second moments of (1, theta)


def second_moments(mean, cov) -> np.ndarray:
    """``E[(1, theta)(1, theta)^T]`` for a distribution with the given moments."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = mean.size
    W = np.empty((p + 1, p + 1))
    W[0, 0] = 1.0
    W[0, 1:] = W[1:, 0] = mean
    W[1:, 1:] = cov + np.outer(mean, mean)
    return W


def augment_ensemble_system(sys: LinearParamSystem, prior) -> AugmentedSystem:
    """Exact reduction of the prior-averaged state penalty to one larger system."""
    from .bayes import check_covariance

    check_covariance(prior.cov)
    n, p = sys.n, sys.p
    W = second_moments(prior.mean, prior.cov)
    A_aug = np.kron(np.eye(p + 1), sys.A)
    B_aug = np.concatenate(list(sys.B), axis=0)
    Q = np.kron(W, np.eye(n))
    return AugmentedSystem(_frozen(A_aug), _frozen(B_aug), _frozen(0.5 * (Q + Q.T)), _frozen(W))
