"""Matrix-free Newton-GMRES for one implicit midpoint step.

Solves ``G(y) = y - Psi(u_prev, y) = 0``.  Each Newton iteration solves
``DG(y) dy = -G(y)`` with restarted GMRES and stops once the L2 length of
the update drops below ``eps_tol``.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from nhns.grid import apply_laplacian, l2_norm
from nhns.schemes import SchemeParams, midpoint_map, residual


@dataclass(frozen=True)
class NewtonConfig:
    eps_tol: float = 1e-8
    max_outer: int = 1000
    gmres_tol: float = 1e-10
    gmres_restart: int = 50
    gmres_max_iter: int = 2000

    def __post_init__(self):
        if min(self.eps_tol, self.gmres_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.gmres_restart < 1 or self.gmres_max_iter < 1:
            raise ValueError("iteration limits must be at least 1")


@dataclass
class NewtonReport:
    iterations: int = 0
    update_norms: list[float] = field(default_factory=list)
    gmres_iters: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    guess_time: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "l_update", "gmres_iters", "cumulative_time"])
        for k, (l, g, t) in enumerate(
            zip(self.update_norms, self.gmres_iters, self.times), start=1
        ):
            w.writerow([k, repr(l), g, repr(t)])
        return buf.getvalue()


class GMRESError(RuntimeError):
    def __init__(self, msg, x, residual_norm):
        super().__init__(msg)
        self.x = x
        self.residual_norm = residual_norm


class NewtonError(RuntimeError):
    def __init__(self, msg, report: NewtonReport, y=None):
        super().__init__(msg)
        self.report = report
        self.y = y


class NewtonDivergence(NewtonError):
    pass


def G(params: SchemeParams, u_prev, y):
    return y - midpoint_map(params, u_prev, y)


def jacobian_vector_product(params: SchemeParams, u_prev, y, z):
    """``DG(y) z = z - tau/2 (eps^2 D_h z + (1 - 3 m^2) z)``, ``m = (u_prev + y)/2``."""
    g = params.grid
    u_prev, y, z = g.check(u_prev), g.check(y), g.check(z)
    m = 0.5 * (u_prev + y)
    lap = apply_laplacian(params.laplacian, z)
    return z - 0.5 * params.tau * (
        params.eps_interface**2 * lap + (1.0 - 3.0 * m * m) * z
    )


def gmres_solve(apply, b, cfg: NewtonConfig = NewtonConfig(), x0=None):
    """Restarted GMRES(m) with modified Gram-Schmidt and Givens rotations.

    ``apply`` maps flat vectors to flat vectors.  Returns ``(x, inner_iters)``
    with ``||apply(x) - b|| <= gmres_tol * ||b||``.
    """
    shape = np.shape(b)
    b = np.asarray(b, dtype=np.float64).ravel()
    N = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(N) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    if bnorm == 0.0:
        return np.zeros(shape), 0
    if not np.isfinite(bnorm):
        raise GMRESError("non-finite right-hand side", x.reshape(shape), bnorm)
    target = cfg.gmres_tol * bnorm
    m = min(cfg.gmres_restart, N)
    total = 0
    r = b - apply(x)
    rnorm = np.linalg.norm(r)
    while rnorm > target:
        if total >= cfg.gmres_max_iter:
            raise GMRESError(
                f"GMRES did not converge in {total} iterations "
                f"(relative residual {rnorm / bnorm:.3e})",
                x.reshape(shape),
                rnorm,
            )
        V = np.zeros((m + 1, N))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[0] = r / rnorm
        j_used = 0
        for j in range(m):
            # copy: ``apply`` may hand back its argument
            w = np.array(apply(V[j]), dtype=np.float64)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_used = j + 1
            if abs(g[j + 1]) <= target or total >= cfg.gmres_max_iter:
                break
        ycoef = np.linalg.solve(np.triu(H[:j_used, :j_used]), g[:j_used])
        x = x + V[:j_used].T @ ycoef
        # true residual; a restart follows if rounding left it above target
        r = b - apply(x)
        rnorm = np.linalg.norm(r)
    return x.reshape(shape), total


def newton_solve(params: SchemeParams, u_prev, y0, cfg: NewtonConfig = NewtonConfig()):
    """Newton iteration for one midpoint step starting from ``y0``.

    Returns ``(u_next, report)``.  ``report.iterations`` counts linear solves;
    the last recorded update length is below ``eps_tol`` on success.
    """
    g = params.grid
    u_prev = g.check(u_prev)
    y = np.array(g.check(y0), dtype=np.float64)
    report = NewtonReport()
    if not np.all(np.isfinite(y)):
        raise NewtonDivergence("non-finite initial guess", report, y)
    shape = y.shape
    t0 = time.perf_counter()
    for _ in range(cfg.max_outer):
        b = -G(params, u_prev, y)
        if not np.all(np.isfinite(b)):
            report.wall_time = time.perf_counter() - t0
            raise NewtonDivergence(
                f"non-finite Newton residual at k={report.iterations + 1}", report, y
            )

        def apply(z, y_old=y):
            return jacobian_vector_product(
                params, u_prev, y_old, z.reshape(shape)
            ).ravel()

        try:
            dy, inner = gmres_solve(apply, b, cfg)
        except GMRESError as e:
            report.wall_time = time.perf_counter() - t0
            raise NewtonError(
                f"linear solve failed at k={report.iterations + 1}: {e}", report, y
            ) from e
        y = y + dy
        l_update = float(l2_norm(dy, g))
        report.iterations += 1
        report.update_norms.append(l_update)
        report.gmres_iters.append(inner)
        report.times.append(time.perf_counter() - t0)
        if not (np.isfinite(l_update) and np.all(np.isfinite(y))):
            report.wall_time = time.perf_counter() - t0
            raise NewtonDivergence(
                f"Newton iterate became non-finite at k={report.iterations}",
                report,
                y,
            )
        if l_update < cfg.eps_tol:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        raise NewtonError(
            f"Newton did not converge in {cfg.max_outer} iterations "
            f"(last update {report.update_norms[-1]:.3e})",
            report,
            y,
        )
    return y, report


def residual_norm(params: SchemeParams, u_prev, v) -> float:
    return float(l2_norm(residual(params, u_prev, v), params.grid))
