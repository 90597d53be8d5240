import math

import mpmath
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import assume, given, strategies as st

from nhns.analysis import (MAX_DIGITS, CoveringQuery, covering_number, fit_c_tilde,
                           iteration_asymptote_experiment, quadratic_constant_probe)
from nhns.grid import GridSpec
from nhns.newton import NewtonConfig, NewtonReport, newton_solve
from nhns.schemes import SchemeParams
from nhns.training import DatasetSpec, generate_sample


@pytest.fixture(scope="module")
def experiment():
    spec = DatasetSpec(1, 512, 0, 0, seed=8)
    p = SchemeParams(1.0, 0.01, spec.grid)
    u = generate_sample(spec, 0)
    return iteration_asymptote_experiment(p, u, 17), p, u


def test_asymptote_shape(experiment):
    exp, p, u = experiment
    assert list(exp.ns) == list(range(18)) and not exp.failed
    assert np.all(np.diff(exp.counts) <= 1)
    assert np.abs(exp.residuals()[exp.fit_mask()]).max() <= 1
    assert exp.eps0 > 0


def test_asymptote_starts_at_direct_count(experiment):
    exp, p, u = experiment
    assert exp.counts[0] == newton_solve(p, u, u)[1].iterations


def test_asymptote_fit_stable_on_halves(experiment):
    exp = experiment[0]
    ns, m = exp.ns[exp.fit_mask()], exp.counts[exp.fit_mask()]
    h = len(ns) // 2
    assert abs(fit_c_tilde(ns[:h], m[:h]) - fit_c_tilde(ns[h:], m[h:])) < 0.5


def test_asymptote_csv(experiment):
    lines = experiment[0].to_csv().splitlines()
    assert lines[0] == "n,M,fitted_value,residual"
    assert len(lines) == 19


def test_fit_is_least_squares():
    ns = np.array([4, 5, 6, 8])
    m = np.array([3, 3, 2, 2])
    c = fit_c_tilde(ns, m)
    grid = np.linspace(c - 1, c + 1, 2001)
    sse = [np.sum((m - (g - np.log2(ns))) ** 2) for g in grid]
    npt.assert_allclose(grid[np.argmin(sse)], c, atol=1e-3)


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_probe_positive_finite(tau):
    spec = DatasetSpec(1, 512, 0, 0, seed=8)
    u = generate_sample(spec, 1)
    _, rep = newton_solve(SchemeParams(tau, 0.01, spec.grid), u, u)
    c = quadratic_constant_probe(rep)
    assert np.isfinite(c) and c > 0


def test_probe_grows_with_step():
    spec = DatasetSpec(1, 512, 0, 0, seed=8)
    vals = []
    for tau in (0.5, 1.0, 2.0):
        cs = []
        for i in range(3):
            u = generate_sample(spec, i)
            cs.append(quadratic_constant_probe(newton_solve(SchemeParams(tau, 0.01, spec.grid), u, u)[1]))
        vals.append(np.median(cs))
    assert vals[0] < vals[1] < vals[2]


def test_affine_problem_converges_in_one_step(rng):
    p = SchemeParams(0.0, 0.01, GridSpec(1, 64))
    _, rep = newton_solve(p, rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64), NewtonConfig(eps_tol=1e-14))
    assert rep.update_norms[1] <= 1e-12


def test_probe_needs_three_iterations():
    with pytest.raises(ValueError):
        quadratic_constant_probe(NewtonReport(2, [1e-1, 1e-3]))


def hand_value(a, b, eps, d):
    with mpmath.workdps(60):
        e = mpmath.mpf(eps)
        expo = 2 * d * (e / 2) ** (1 / (mpmath.mpf(b) + 2 - a)) + d
        return int(mpmath.ceil((4 / e) ** expo - mpmath.mpf(10) ** -30))


@pytest.mark.parametrize("a,b,eps,d", [(4, 0, 2, 1), (4, 0, 1, 1), (3, 0.5, 0.5, 1), (5, 1, 3, 1),
                                       (6, 2, 0.1, 1), (4, 0, 2, 2), (5, 1.5, 1.5, 2), (3.5, 1, 3.9, 3)])
def test_covering_hand_values(a, b, eps, d):
    assert covering_number(CoveringQuery(a, b, eps, d)).value == hand_value(a, b, eps, d)


def test_covering_pinned_case():
    assert covering_number(CoveringQuery(4, 0, 2, 1)).value == 8


def test_covering_limit_near_four():
    assert covering_number(CoveringQuery(4, 0, 4 - 1e-12, 1)).value == 2
    assert covering_number(CoveringQuery(4, 0, 4 - 1e-12, 1)).log10 < 1e-11


@pytest.mark.parametrize("kw", [dict(alpha=2, beta=0), dict(alpha=4, beta=0, d=5),
                                dict(alpha=4, beta=0, epsilon=4), dict(alpha=4, beta=0, epsilon=0)])
def test_covering_domain_errors(kw):
    base = dict(alpha=4, beta=0, epsilon=1, d=1)
    base.update(kw)
    with pytest.raises(ValueError):
        CoveringQuery(**base)


def test_covering_huge_reports_log():
    q = CoveringQuery(2.5001, 0.5, 1e-3, 3)
    res = covering_number(q)
    assert not res.representable
    assert res.log10 > MAX_DIGITS
    with mpmath.workdps(40):
        expo = 6 * (mpmath.mpf("5e-4")) ** (1 / (mpmath.mpf("2.5") - mpmath.mpf("2.5001"))) + 3
        npt.assert_allclose(res.log10, float(expo * mpmath.log10(4000)), rtol=1e-12)
    assert math.isinf(q.exponent)


def test_covering_large_but_representable():
    q = CoveringQuery(4, 0, 0.01, 2)
    res = covering_number(q)
    assert res.representable and res.log10 < MAX_DIGITS
    assert len(str(res.value)) == math.floor(res.log10) + 1


@given(st.floats(0.01, 3.99), st.floats(0.01, 3.99))
def test_covering_monotone_in_eps(e1, e2):
    assume(e1 < e2)
    lo = covering_number(CoveringQuery(4, 0, e1, 1))
    hi = covering_number(CoveringQuery(4, 0, e2, 1))
    assert hi.log10 <= lo.log10 + 1e-12
    if lo.representable and hi.representable:
        assert hi.value <= lo.value
