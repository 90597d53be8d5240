"""Experiments on Newton initialisation and the training-set covering bound."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from nhns.grid import l2_norm
from nhns.newton import NewtonConfig, NewtonError, NewtonReport, newton_solve
from nhns.schemes import SchemeParams

# N_eps values with more decimal digits than this are reported by log10 only
MAX_DIGITS = 4000


@dataclass
class AsymptoteExperiment:
    eps0: float
    ns: np.ndarray
    counts: np.ndarray
    c_tilde: float
    fit_min: int
    failed: list[int] = field(default_factory=list)

    def fitted(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore"):
            return self.c_tilde - np.log2(n)

    def fit_mask(self) -> np.ndarray:
        return self.ns >= self.fit_min

    def residuals(self) -> np.ndarray:
        return self.counts - self.fitted(self.ns)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "M", "fitted_value", "residual"])
        for n, m, f, r in zip(self.ns, self.counts, self.fitted(self.ns), self.residuals()):
            w.writerow([int(n), int(m), repr(float(f)), repr(float(r))])
        return buf.getvalue()


def fit_c_tilde(ns, counts) -> float:
    """Least-squares constant ``C`` in ``M(n) ~ C - log2(n)``."""
    ns = np.asarray(ns, dtype=float)
    return float(np.mean(np.asarray(counts, dtype=float) + np.log2(ns)))


def converged_step(params: SchemeParams, u_prev, tol: float = 1e-12) -> np.ndarray:
    """A tightly converged midpoint step from the direct guess."""
    cfg = NewtonConfig(eps_tol=tol, gmres_tol=1e-13, max_outer=60)
    try:
        xi, _ = newton_solve(params, u_prev, u_prev, cfg)
    except NewtonError as e:
        # at 1e-12 the update may stall at rounding level; keep the last iterate
        if e.y is None or e.report.update_norms[-1] > 1e3 * tol:
            raise
        xi = e.y
    return xi


def iteration_asymptote_experiment(params: SchemeParams, u_prev, n_max: int,
                                   cfg: NewtonConfig = NewtonConfig(),
                                   fit_min: int = 4, xi=None) -> AsymptoteExperiment:
    """Newton counts when the direct guess error is shrunk by ``2**-n``.

    The guess is ``xi + 2**-n (u_prev - xi)`` so the L2 initial error is
    ``eps0 / 2**n`` with ``eps0 = ||u_prev - xi||``.
    """
    u_prev = params.grid.check(u_prev)
    if xi is None:
        xi = converged_step(params, u_prev)
    d = u_prev - xi
    eps0 = float(l2_norm(d, params.grid))
    ns, counts, failed = [], [], []
    for n in range(n_max + 1):
        y0 = xi + 2.0**-n * d
        try:
            _, rep = newton_solve(params, u_prev, y0, cfg)
        except NewtonError:
            failed.append(n)
            continue
        ns.append(n)
        counts.append(rep.iterations)
    ns, counts = np.array(ns), np.array(counts)
    sel = ns >= fit_min
    if not np.any(sel):
        raise ValueError(f"no converged runs with n >= {fit_min} to fit")
    return AsymptoteExperiment(eps0, ns, counts, fit_c_tilde(ns[sel], counts[sel]),
                               fit_min, failed)


def quadratic_constant_probe(trace: NewtonReport, tail_start: float = 1e-2,
                             floor: float = 1e-13) -> float:
    """Largest ``l[k+1] / l[k]**2`` over the tail of a Newton trace.

    The tail is the part where update lengths have dropped to ``tail_start``;
    pairs whose second update sits below ``floor`` are rounding noise and are
    skipped.  If no pair qualifies the last pair is used.
    """
    l = np.asarray(trace.update_norms, dtype=float)
    if l.size < 3:
        raise ValueError("quadratic probe needs at least 3 Newton iterations")
    prev, nxt = l[:-1], l[1:]
    sel = (prev <= tail_start) & (nxt >= floor)
    if not np.any(sel):
        sel = np.zeros_like(prev, dtype=bool)
        sel[-1] = True
    return float(np.max(nxt[sel] / prev[sel] ** 2))


# --------------------------------------------------------------------------
# covering number

@dataclass(frozen=True)
class CoveringQuery:
    alpha: float
    beta: float
    epsilon: float
    d: int = 1

    def __post_init__(self):
        if not (self.alpha > self.beta + 2 > self.d / 2):
            raise ValueError(
                "need alpha > beta + 2 > d / 2, got "
                f"alpha={self.alpha}, beta={self.beta}, d={self.d}"
            )
        if not 0 < self.epsilon < 4:
            raise ValueError("epsilon must lie in (0, 4)")
        if self.d < 1:
            raise ValueError("d must be a positive integer")

    @property
    def exponent(self) -> float:
        """``2 d (eps/2)**(1/(beta+2-alpha)) + d``; ``inf`` once it overflows."""
        t = math.log(self.epsilon / 2) / (self.beta + 2 - self.alpha)
        if t > 700:
            return math.inf
        return 2 * self.d * math.exp(t) + self.d


class CoveringNumber(NamedTuple):
    value: int | None
    log10: float

    @property
    def representable(self) -> bool:
        return self.value is not None


def covering_number(q: CoveringQuery) -> CoveringNumber:
    """``ceil((4/eps) ** (2 d (eps/2) ** (1/(beta+2-alpha)) + d))``.

    Evaluated in the log domain first; values with more than ``MAX_DIGITS``
    digits come back as ``value=None`` with only their base-10 logarithm.
    """
    import mpmath

    with mpmath.workdps(30):
        e = mpmath.mpf(q.epsilon)
        expo = 2 * q.d * mpmath.exp(mpmath.log(e / 2) / (mpmath.mpf(q.beta) + 2 - q.alpha)) + q.d
        log10 = float(expo * mpmath.log10(4 / e))
    if log10 > MAX_DIGITS:
        return CoveringNumber(None, log10)
    with mpmath.workdps(int(log10) + 30):
        eps = mpmath.mpf(q.epsilon)
        e = (2 * q.d * (eps / 2) ** (mpmath.mpf(1) / (mpmath.mpf(q.beta) + 2 - q.alpha))
             + q.d)
        val = (4 / eps) ** e
        # absorb rounding noise when the exact value is an integer
        nearest = mpmath.nint(val)
        if abs(val - nearest) <= mpmath.mpf(10) ** (-20) * max(1, abs(val)):
            val = nearest
        return CoveringNumber(int(mpmath.ceil(val)), log10)
