"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The desk-scale network (256 samples, 50 epochs, tau=2) is trained once per
session, which takes about ten minutes on one core.  Long full-scale checks
run only with ``NHNS_SLOW=1``.
"""
import os
import time

import numpy as np
import pytest

from nhns.analysis import CoveringQuery, covering_number, iteration_asymptote_experiment
from nhns.grid import GridSpec, l2_norm
from nhns.hybrid import Direct, EtdPredictor, Neural, RunConfig, bench, reference_solution, run
from nhns.net import FULL_1D, FULL_2D, ConvNet, ConvSpec
from nhns.newton import NewtonConfig, newton_solve
from nhns.schemes import EtdParams, SchemeParams, etd_step, etd_step_dense
from nhns.training import (DatasetSpec, TrainConfig, evaluate, generate_dataset, generate_sample,
                           loss, loss_and_grad, split, train)

RESULTS = []
EPS_TOL = 1e-8
HELD_OUT_SEED = 1_000_003
SLOW = pytest.mark.skipif(not os.environ.get("NHNS_SLOW"), reason="set NHNS_SLOW=1 for full-scale runs")


def verdict(k, ok, detail):
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def held_out(n=512, count=100, dim=1):
    spec = DatasetSpec(dim, n, 0, 0, seed=HELD_OUT_SEED)
    return [generate_sample(spec, i) for i in range(count)], spec.grid


def mean_iters(params, strategy, data):
    return bench(params, {"s": strategy}, data)[0]["mean_iters"]


@pytest.fixture(scope="module")
def table_one():
    data, grid = held_out()
    out = {}
    for tau in (0.5, 1.0, 2.0):
        p = SchemeParams(tau, 0.01, grid)
        out[tau] = (mean_iters(p, Direct(), data), mean_iters(p, EtdPredictor(tau), data))
    return out


@pytest.fixture(scope="module")
def desk():
    spec = DatasetSpec(1, 512, n_train=256, n_test=32, seed=0)
    tr, te = split(spec, generate_dataset(spec))
    cfg = TrainConfig(tau=2.0, eps_interface=0.01, epochs=50)
    net = ConvNet.init(FULL_1D, np.random.default_rng(0))
    start = evaluate(SchemeParams(2.0, 0.01, spec.grid), net, tr)
    best, hist = train(net, tr, te, cfg, spec.grid)
    return best, hist, start


def test_criterion_01_direct_counts(table_one):
    target = {0.5: 5.00, 1.0: 5.00, 2.0: 12.10}
    got = {t: v[0] for t, v in table_one.items()}
    ok = all(abs(got[t] - target[t]) <= 1 for t in target)
    verdict(1, ok, "direct mean iters " + ", ".join(f"tau={t:g}: {got[t]:.2f} (target {target[t]:.2f})" for t in target))


def test_criterion_02_etd_counts(table_one):
    ok = all(e <= d for d, e in table_one.values()) and table_one[2.0][1] <= 10 + 1
    verdict(2, ok, "etd mean iters " + ", ".join(f"tau={t:g}: {e:.2f} vs direct {d:.2f}" for t, (d, e) in table_one.items()))


def test_criterion_03_neural_improvement(desk):
    net = desk[0]
    data, grid = held_out(count=20)
    p = SchemeParams(2.0, 0.01, grid)
    d, n = mean_iters(p, Direct(), data), mean_iters(p, Neural(net), data)
    verdict(3, n <= d - 2, f"tau=2 over 20 held-out samples: neural {n:.2f}, direct {d:.2f}")


def test_criterion_03b_desk_loss_reduction(desk):
    _, hist, start = desk
    final = hist.rows[-1]["train_loss"]
    verdict("3b", final <= 1e-2 * start, f"desk train loss {start:.3e} -> {final:.3e} ({start / final:.0f}x)")


def test_criterion_04_asymptote():
    data, grid = held_out(count=1)
    exp = iteration_asymptote_experiment(SchemeParams(1.0, 0.01, grid), data[0], 17)
    res = exp.residuals()[exp.fit_mask()]
    mono = np.all(np.diff(exp.counts) <= 1)
    ok = mono and len(exp.ns) == 18 and np.abs(res).max() <= 1
    verdict(4, ok, f"M(n) = {exp.counts.tolist()}, C~ = {exp.c_tilde:.3f}, max |residual| = {np.abs(res).max():.3f}")


def test_criterion_05_pipeline_gradient():
    spec = ConvSpec(1, (1, 4, 4, 1), 5)
    p = SchemeParams(1.0, 0.05, GridSpec(1, 32))
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        net = ConvNet.init(spec, rng)
        batch = rng.uniform(-1, 1, (2, 32))
        _, (dW, db) = loss_and_grad(p, net, batch)
        g = np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in zip(dW, db)])
        theta = net.get_flat()
        fd = np.empty_like(theta)
        for i in range(theta.size):
            step = np.zeros_like(theta)
            step[i] = 1e-6
            net.set_flat(theta + step)
            lp = loss(p, net, batch)
            net.set_flat(theta - step)
            fd[i] = (lp - loss(p, net, batch)) / 2e-6
        net.set_flat(theta)
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
    verdict(5, worst <= 1e-5, f"worst relative gradient error over 5 seeds: {worst:.2e}")


def test_criterion_06_krylov_oracle():
    data, grid = held_out(n=64, count=1)
    ep = EtdParams(SchemeParams(1.0, 0.01, grid), krylov_dim=10)
    got, ref = etd_step(ep, data[0]), etd_step_dense(ep, data[0])
    err = l2_norm(got - ref, grid) / l2_norm(ref, grid)
    verdict(6, err <= 1e-8, f"relative L2 error vs dense oracle: {err:.2e}")


def test_criterion_07_structure_preservation():
    data, grid = held_out(count=20)
    p = SchemeParams(1.0, 0.01, grid)
    rise, peak = -np.inf, 0.0
    for u0 in data:
        rep = run(RunConfig(p, t_end=4.0), u0)
        rise = max(rise, np.diff(rep.energy).max())
        peak = max(peak, max(rep.max_abs))
    ok = rise <= 1e-9 and peak <= 1 + 1e-10
    verdict(7, ok, f"tau=1, T=4, 20 samples: largest energy change {rise:.3e}, max|u| - 1 = {peak - 1:.3e}")


def test_criterion_08_parameter_counts():
    a, b = ConvNet.zeros(FULL_1D).num_params(), ConvNet.zeros(FULL_2D).num_params()
    verdict(8, (a, b) == (113409, 417473), f"1D {a}, 2D {b}")


def test_criterion_09_strategy_equivalence(desk):
    data, grid = held_out(count=5)
    p = SchemeParams(2.0, 0.01, grid)
    worst = 0.0
    for u0 in data:
        finals = [run(RunConfig(p, strategy=s, t_end=4.0), u0).final
                  for s in (Direct(), EtdPredictor(2.0), Neural(desk[0]))]
        worst = max(worst, *(l2_norm(f - finals[0], grid) for f in finals[1:]))
    verdict(9, worst <= 100 * EPS_TOL, f"largest L2 gap between final states: {worst:.2e}")


def test_criterion_10_midpoint_order():
    data, grid = held_out(count=1)
    p = SchemeParams(0.5, 0.01, grid)
    taus = [1 / 2, 1 / 4, 1 / 8]
    ref = reference_solution(p.with_tau(taus[-1]), data[0], 1.0, refine=32)
    errs = [l2_norm(run(RunConfig(p.with_tau(t), t_end=1.0), data[0]).final - ref, grid) for t in taus]
    order = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    verdict(10, order >= 1.8, f"fitted order {order:.3f}")


def test_criterion_11_covering():
    import mpmath

    cases = [(4, 0, 2, 1), (4, 0, 1, 1), (4, 0, 3, 1), (3, 0.5, 0.5, 1), (5, 1, 3, 1),
             (6, 2, 0.1, 1), (4, 0, 2, 2), (5, 1.5, 1.5, 2), (3.5, 1, 3.9, 3), (7, 3, 0.25, 2)]
    bad = []
    for a, b, e, d in cases:
        with mpmath.workdps(80):
            E = mpmath.mpf(e)
            hand = int(mpmath.ceil((4 / E) ** (2 * d * (E / 2) ** (1 / (mpmath.mpf(b) + 2 - a)) + d)
                                   - mpmath.mpf(10) ** -40))
        if covering_number(CoveringQuery(a, b, e, d)).value != hand:
            bad.append((a, b, e, d))
    pinned = covering_number(CoveringQuery(4, 0, 2, 1)).value
    verdict(11, not bad and pinned == 8, f"{len(cases) - len(bad)}/{len(cases)} tuples match, (4,0,2,d=1) -> {pinned}")


def test_criterion_12_relative_cpu_time(desk):
    data, grid = held_out(count=20)
    p = SchemeParams(2.0, 0.01, grid)
    rows = bench(p, {"direct": Direct(), "neural": Neural(desk[0])}, data, t_end=4.0, repeats=5)
    t_d, t_n = rows[0]["mean_total_time"], rows[1]["mean_total_time"]
    verdict(12, t_n < t_d, f"tau=2, T=4 mean total time: neural {t_n:.4f}s, direct {t_d:.4f}s "
                           f"(acceleration {(t_d - t_n) / t_d:.1%})")


@SLOW
def test_full_scale_neural_counts():
    spec = DatasetSpec(1, 512, seed=0)
    tr, te = split(spec, generate_dataset(spec))
    net, _ = train(ConvNet.init(FULL_1D, np.random.default_rng(0)), tr, te,
                   TrainConfig(tau=2.0, eps_interface=0.01), spec.grid)
    data, grid = held_out()
    n = mean_iters(SchemeParams(2.0, 0.01, grid), Neural(net), data)
    verdict("3p", abs(n - 4.25) <= 1, f"full-scale neural mean iters at tau=2: {n:.2f} (target 4.25)")


@SLOW
def test_full_scale_prediction_error():
    spec = DatasetSpec(1, 512, seed=0)
    tr, te = split(spec, generate_dataset(spec))
    net, _ = train(ConvNet.init(FULL_1D, np.random.default_rng(0)), tr, te,
                   TrainConfig(tau=1.0, eps_interface=0.01), spec.grid)
    data, grid = held_out(count=1)
    p = SchemeParams(1.0, 0.01, grid)
    sol, _ = newton_solve(p, data[0], data[0], NewtonConfig(eps_tol=1e-12))
    err = l2_norm(net(data[0]) - sol, grid)
    verdict("pe", err <= 2e-3, f"full-scale prediction L2 error at tau=1: {err:.2e}")
