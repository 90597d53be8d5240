"""Allen-Cahn discretisation: implicit midpoint map, residual, energy and ETD1.

The PDE integrated throughout is ``u_t = eps^2 Lap u + u - u^3`` with
homogeneous Neumann boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from nhns.grid import GridSpec, LaplacianOp, apply_laplacian, laplacian_eigh


@dataclass(frozen=True)
class SchemeParams:
    tau: float
    eps_interface: float
    grid: GridSpec

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")
        if not self.eps_interface > 0:
            raise ValueError("eps_interface must be positive")

    @property
    def laplacian(self) -> LaplacianOp:
        return LaplacianOp(self.grid)

    def with_tau(self, tau: float) -> "SchemeParams":
        return SchemeParams(tau, self.eps_interface, self.grid)


@dataclass(frozen=True)
class EtdParams:
    scheme: SchemeParams
    krylov_dim: int = 10

    def __post_init__(self):
        if not 1 <= self.krylov_dim <= self.scheme.grid.size:
            raise ValueError(
                f"krylov_dim must lie in [1, {self.scheme.grid.size}]"
            )


def reaction(u: np.ndarray) -> np.ndarray:
    return u - u**3


def rhs(params: SchemeParams, w: np.ndarray) -> np.ndarray:
    """Semi-discrete right-hand side ``eps^2 D_h w + w - w^3``."""
    lap = apply_laplacian(params.laplacian, w)
    return params.eps_interface**2 * lap + reaction(w)


def midpoint_map(params: SchemeParams, u_prev: np.ndarray, v: np.ndarray) -> np.ndarray:
    g = params.grid
    u_prev, v = g.check(u_prev), g.check(v)
    return u_prev + params.tau * rhs(params, 0.5 * (u_prev + v))


def residual(params: SchemeParams, u_prev: np.ndarray, v: np.ndarray) -> np.ndarray:
    return midpoint_map(params, u_prev, v) - v


def double_well(u: np.ndarray) -> np.ndarray:
    return 0.25 * (u * u - 1.0) ** 2


def energy(params: SchemeParams, u: np.ndarray) -> float:
    """Discrete Ginzburg-Landau energy with face-centred gradients."""
    g = params.grid
    u = g.check(u)
    if u.ndim != g.dim:
        raise ValueError("energy takes a single field")
    grad2 = sum(np.sum(np.diff(u, axis=ax) ** 2) for ax in range(g.dim)) / g.h**2
    return float(
        g.cell_volume
        * (0.5 * params.eps_interface**2 * grad2 + np.sum(double_well(u)))
    )


# --------------------------------------------------------------------------
# phi-functions and Krylov approximations

def phi1_scalar(z: float) -> float:
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    if abs(z) > 1e-5:
        return float(np.expm1(z) / z)
    # Taylor series through z^6
    return float(
        1.0 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120 + z**5 / 720 + z**6 / 5040
    )


def phi1_matrix(M: np.ndarray) -> np.ndarray:
    """phi_1 of a small square matrix via the augmented-matrix exponential."""
    m = M.shape[0]
    aug = np.zeros((2 * m, 2 * m))
    aug[:m, :m] = M
    aug[:m, m:] = np.eye(m)
    return scipy.linalg.expm(aug)[:m, m:]


def arnoldi(apply, b: np.ndarray, m: int, breakdown_tol: float = 1e-14):
    """Arnoldi with modified Gram-Schmidt and one reorthogonalisation pass.

    Returns ``(V, H, beta)`` with ``V`` of shape ``(N, j)`` and ``H`` of
    shape ``(j, j)``, where ``j <= m`` is reduced on breakdown.
    """
    N = b.size
    beta = float(np.linalg.norm(b))
    V = np.zeros((N, m + 1))
    H = np.zeros((m + 1, m))
    if beta == 0.0:
        return V[:, :0], H[:0, :0], 0.0
    V[:, 0] = b / beta
    j_end = m
    for j in range(m):
        w = apply(V[:, j])
        for _ in range(2):
            for i in range(j + 1):
                c = V[:, i] @ w
                H[i, j] += c
                w -= c * V[:, i]
        hn = float(np.linalg.norm(w))
        if hn < breakdown_tol * max(1.0, abs(H[j, j])):
            j_end = j + 1
            break
        H[j + 1, j] = hn
        V[:, j + 1] = w / hn
    return V[:, :j_end], H[:j_end, :j_end], beta


def krylov_expv(apply, b: np.ndarray, t: float, m: int) -> np.ndarray:
    """Approximate ``exp(t A) b`` in an ``m``-dimensional Krylov space."""
    V, H, beta = arnoldi(apply, b.ravel(), m)
    if beta == 0.0:
        return np.zeros_like(b)
    y = scipy.linalg.expm(t * H)[:, 0]
    return (beta * (V @ y)).reshape(b.shape)


def krylov_phi1v(apply, b: np.ndarray, t: float, m: int) -> np.ndarray:
    """Approximate ``phi_1(t A) b`` in an ``m``-dimensional Krylov space."""
    V, H, beta = arnoldi(apply, b.ravel(), m)
    if beta == 0.0:
        return np.zeros_like(b)
    y = phi1_matrix(t * H)[:, 0]
    return (beta * (V @ y)).reshape(b.shape)


def etd_step(params: EtdParams, u: np.ndarray, tau: float | None = None) -> np.ndarray:
    """One ETD1 step ``exp(tau A) u + tau phi_1(tau A) g(u)`` with ``A = eps^2 D_h``.

    ``tau`` defaults to ``params.scheme.tau``.
    """
    sp = params.scheme
    g = sp.grid
    u = g.check(u)
    tau = sp.tau if tau is None else tau
    eps2 = sp.eps_interface**2
    shape = u.shape

    def A(x):
        return eps2 * apply_laplacian(sp.laplacian, x.reshape(shape)).ravel()

    m = params.krylov_dim
    lin = krylov_expv(A, u, tau, m)
    nl = krylov_phi1v(A, reaction(u), tau, m)
    return lin + tau * nl


def etd_step_dense(params: EtdParams, u: np.ndarray, tau: float | None = None) -> np.ndarray:
    """ETD1 step via the eigendecomposition of ``D_h`` (oracle; small grids)."""
    sp = params.scheme
    tau = sp.tau if tau is None else tau
    lam, Q = laplacian_eigh(sp.grid)
    z = tau * sp.eps_interface**2 * lam
    u = sp.grid.check(u)
    uf = u.ravel()
    ex = Q @ (np.exp(z) * (Q.T @ uf))
    ph = np.array([phi1_scalar(zi) for zi in z])
    nl = Q @ (ph * (Q.T @ reaction(uf)))
    return (ex + tau * nl).reshape(u.shape)


def etd_integrate(params: EtdParams, u0: np.ndarray, t_end: float, tau: float) -> np.ndarray:
    """Compose ETD1 steps of size ``tau`` up to ``t_end``; the last one is shortened."""
    u = np.array(u0, dtype=np.float64)
    t = 0.0
    while t_end - t > 1e-12 * max(1.0, t_end):
        dt = min(tau, t_end - t)
        u = etd_step(params, u, dt)
        t += dt
    return u
