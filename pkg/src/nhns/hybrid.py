"""Time marching with the implicit midpoint method and pluggable Newton guesses."""
from __future__ import annotations

import csv
import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from nhns.grid import l2_norm, linf_norm
from nhns.net import ConvNet, forward
from nhns.newton import NewtonConfig, NewtonError, NewtonReport, newton_solve
from nhns.schemes import EtdParams, SchemeParams, energy, etd_integrate, etd_step


@dataclass(frozen=True)
class Direct:
    name = "direct"


@dataclass(frozen=True)
class Neural:
    net: ConvNet = field(compare=False)
    name = "neural"


@dataclass(frozen=True)
class EtdPredictor:
    tau_etd: float
    krylov_dim: int = 10
    name = "etd"

    def __post_init__(self):
        if not self.tau_etd > 0:
            raise ValueError("tau_etd must be positive")


def _check_neural(strategy: Neural, params: SchemeParams):
    spec = strategy.net.spec
    if spec.dim != params.grid.dim:
        raise ValueError(
            f"{spec.dim}D network cannot initialise a {params.grid.dim}D run"
        )
    meta = strategy.net.meta
    if "tau" in meta and not math.isclose(meta["tau"], params.tau):
        warnings.warn(
            f"network was trained for tau={meta['tau']} but the run uses "
            f"tau={params.tau}",
            stacklevel=3,
        )


def initial_guess(strategy, params: SchemeParams, u_prev: np.ndarray) -> np.ndarray:
    if isinstance(strategy, Direct):
        return np.array(u_prev, dtype=np.float64)
    if isinstance(strategy, Neural):
        return forward(strategy.net, u_prev)
    if isinstance(strategy, EtdPredictor):
        ep = EtdParams(params, strategy.krylov_dim)
        if math.isclose(strategy.tau_etd, params.tau):
            return etd_step(ep, u_prev, params.tau)
        return etd_integrate(ep, u_prev, params.tau, strategy.tau_etd)
    raise TypeError(f"unknown strategy {strategy!r}")


@dataclass(frozen=True)
class RunConfig:
    scheme: SchemeParams
    newton: NewtonConfig = NewtonConfig()
    strategy: object = Direct()
    t_end: float = 4.0
    record_every: int = 1

    def __post_init__(self):
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        self.num_steps()
        if isinstance(self.strategy, Neural):
            _check_neural(self.strategy, self.scheme)

    def num_steps(self) -> int:
        ratio = self.t_end / self.scheme.tau
        n = round(ratio)
        if n < 1 or abs(n - ratio) > 1e-12 * max(1.0, ratio):
            raise ValueError(
                f"t_end={self.t_end} is not a positive multiple of tau={self.scheme.tau}"
            )
        return n


@dataclass
class RunReport:
    steps: list[NewtonReport] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    max_abs: list[float] = field(default_factory=list)
    guess_time: float = 0.0
    newton_time: float = 0.0
    wall_time: float = 0.0
    final: np.ndarray | None = None

    @property
    def iterations(self) -> list[int]:
        return [s.iterations for s in self.steps]

    def write_csv(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)

        def dump(name, header, rows):
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)

        dump("energy.csv", ["t", "energy"], zip(self.times, map(repr, self.energy)))
        dump("maxabs.csv", ["t", "max_abs"], zip(self.times, map(repr, self.max_abs)))
        dump(
            "iters.csv",
            ["step", "iterations", "gmres_iters"],
            [(i + 1, s.iterations, sum(s.gmres_iters)) for i, s in enumerate(self.steps)],
        )
        dump(
            "timing.csv",
            ["step", "guess_time", "newton_time"],
            [(i + 1, repr(s.guess_time), repr(s.wall_time)) for i, s in enumerate(self.steps)],
        )


class RunError(RuntimeError):
    def __init__(self, msg, report: RunReport):
        super().__init__(msg)
        self.report = report


def step(cfg: RunConfig, u_prev: np.ndarray):
    """One midpoint step: initial guess then Newton.  Returns ``(u_next, report)``."""
    t0 = time.perf_counter()
    y0 = initial_guess(cfg.strategy, cfg.scheme, u_prev)
    guess_time = time.perf_counter() - t0
    try:
        u_next, rep = newton_solve(cfg.scheme, u_prev, y0, cfg.newton)
    except NewtonError as e:
        e.report.guess_time = guess_time
        raise
    rep.guess_time = guess_time
    return u_next, rep


def _record(rep: RunReport, params: SchemeParams, t: float, u: np.ndarray):
    rep.times.append(t)
    rep.energy.append(energy(params, u))
    rep.max_abs.append(float(linf_norm(u, params.grid)))


def run(cfg: RunConfig, u0: np.ndarray) -> RunReport:
    """March ``u0`` to ``t_end``; diagnostics every ``record_every`` steps."""
    params = cfg.scheme
    u = params.grid.check(u0).astype(np.float64, copy=True)
    rep = RunReport()
    _record(rep, params, 0.0, u)
    n_steps = cfg.num_steps()
    t0 = time.perf_counter()
    for k in range(1, n_steps + 1):
        try:
            u, srep = step(cfg, u)
        except NewtonError as e:
            rep.steps.append(e.report)
            rep.wall_time = time.perf_counter() - t0
            rep.final = u
            raise RunError(f"step {k} failed: {e}", rep) from e
        rep.steps.append(srep)
        rep.guess_time += srep.guess_time
        rep.newton_time += srep.wall_time
        if k % cfg.record_every == 0 or k == n_steps:
            _record(rep, params, k * params.tau, u)
    rep.wall_time = time.perf_counter() - t0
    rep.final = u
    return rep


def run_etd(params: EtdParams, u0: np.ndarray, t_end: float, record_every: int = 1) -> RunReport:
    """Pure ETD1 integration (no Newton), reported like :func:`run`."""
    sp = params.scheme
    n_steps = RunConfig(sp, t_end=t_end).num_steps()
    u = sp.grid.check(u0).astype(np.float64, copy=True)
    rep = RunReport()
    _record(rep, sp, 0.0, u)
    t0 = time.perf_counter()
    for k in range(1, n_steps + 1):
        u = etd_step(params, u)
        if k % record_every == 0 or k == n_steps:
            _record(rep, sp, k * sp.tau, u)
    rep.wall_time = time.perf_counter() - t0
    rep.guess_time = rep.wall_time
    rep.final = u
    return rep


def reference_solution(params: SchemeParams, u0, t_end: float, refine: int = 32,
                       newton: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Midpoint solution with step ``tau / refine`` (direct initial guesses)."""
    cfg = RunConfig(params.with_tau(params.tau / refine), newton, Direct(), t_end,
                    record_every=10**9)
    return run(cfg, u0).final


# --------------------------------------------------------------------------
# benchmarks

BENCH_COLUMNS = ["dim", "tau", "strategy", "mean_iters", "mean_guess_time",
                 "mean_newton_time", "mean_total_time", "l2_error_vs_reference"]


def bench(params: SchemeParams, strategies: dict, initial_data, t_end: float | None = None,
          newton: NewtonConfig = NewtonConfig(), repeats: int = 1,
          reference: bool = False, refine: int = 32) -> list[dict]:
    """Average iteration counts and timings over a set of initial data.

    ``t_end`` defaults to a single step.  Timings are the median over
    ``repeats`` repetitions of each run; iteration counts are deterministic.
    """
    t_end = params.tau if t_end is None else t_end
    refs = None
    if reference:
        refs = [reference_solution(params, u0, t_end, refine, newton) for u0 in initial_data]
    rows = []
    for name, strat in strategies.items():
        iters, gt, nt, tt, errs = [], [], [], [], []
        for i, u0 in enumerate(initial_data):
            cfg = RunConfig(params, newton, strat, t_end, record_every=10**9)
            reps = [run(cfg, u0) for _ in range(max(1, repeats))]
            r0 = reps[0]
            iters.append(np.mean(r0.iterations))
            gt.append(np.median([r.guess_time for r in reps]))
            nt.append(np.median([r.newton_time for r in reps]))
            tt.append(np.median([r.guess_time + r.newton_time for r in reps]))
            if refs is not None:
                errs.append(float(l2_norm(r0.final - refs[i], params.grid)))
        rows.append(dict(
            dim=params.grid.dim, tau=params.tau, strategy=name,
            mean_iters=float(np.mean(iters)), mean_guess_time=float(np.mean(gt)),
            mean_newton_time=float(np.mean(nt)), mean_total_time=float(np.mean(tt)),
            l2_error_vs_reference=float(np.mean(errs)) if errs else float("nan"),
        ))
    return rows


def acceleration_rate(t_direct: float, t_other: float) -> float:
    return (t_direct - t_other) / t_direct
