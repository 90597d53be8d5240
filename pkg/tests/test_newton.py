import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from nhns.analysis import quadratic_constant_probe
from nhns.grid import GridSpec, l2_norm
from nhns.newton import (G, GMRESError, NewtonConfig, NewtonDivergence, NewtonError,
                         gmres_solve, jacobian_vector_product, newton_solve, residual_norm)
from nhns.schemes import SchemeParams, residual
from nhns.training import DatasetSpec, generate_sample


def ref_params(tau=1.0, n=512):
    return SchemeParams(tau, 0.01, GridSpec(1, n))


def sample(n=512, index=0, seed=5):
    return generate_sample(DatasetSpec(1, n, 0, 0, modes=min(n, 128), seed=seed), index)


@pytest.mark.parametrize("kw", [dict(eps_tol=0), dict(gmres_tol=-1), dict(max_outer=0),
                                dict(gmres_restart=0), dict(gmres_max_iter=0)])
def test_config_validated(kw):
    with pytest.raises(ValueError):
        NewtonConfig(**kw)


def test_jvp_of_zero(rng):
    p = ref_params(n=64)
    u, y = rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64)
    npt.assert_array_equal(jacobian_vector_product(p, u, y, np.zeros(64)), 0)


def test_jvp_zero_step_is_identity(rng):
    p = SchemeParams(0.0, 0.01, GridSpec(1, 32))
    z = rng.standard_normal(32)
    npt.assert_array_equal(jacobian_vector_product(p, rng.standard_normal(32), rng.standard_normal(32), z), z)


@pytest.mark.parametrize("seed", range(4))
def test_jvp_matches_central_difference(seed):
    rng = np.random.default_rng(seed)
    p = SchemeParams(1.0, 0.05, GridSpec(1, 64))
    u, y, z = (rng.uniform(-1, 1, 64) for _ in range(3))
    d = 1e-6
    fd = (G(p, u, y + d * z) - G(p, u, y - d * z)) / (2 * d)
    jv = jacobian_vector_product(p, u, y, z)
    assert np.linalg.norm(fd - jv) <= 1e-6 * np.linalg.norm(jv)


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_jvp_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    p = SchemeParams(0.9, 0.1, GridSpec(2, 6))
    u, y, z1, z2 = (rng.standard_normal((6, 6)) for _ in range(4))
    lhs = jacobian_vector_product(p, u, y, a * z1 + b * z2)
    rhs = a * jacobian_vector_product(p, u, y, z1) + b * jacobian_vector_product(p, u, y, z2)
    npt.assert_allclose(lhs, rhs, atol=1e-13 * (abs(a) + abs(b) + 1) * np.abs(rhs).max() + 1e-13)


def test_jvp_matrix_symmetric(rng):
    p = SchemeParams(2.0, 0.01, GridSpec(1, 64))
    u, y = rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64)
    J = np.column_stack([jacobian_vector_product(p, u, y, e) for e in np.eye(64)])
    npt.assert_allclose(J, J.T, atol=1e-14)


def test_gmres_identity():
    b = np.arange(1.0, 9.0)
    x, it = gmres_solve(lambda v: v, b)
    npt.assert_allclose(x, b)
    assert it == 1


def test_gmres_zero_rhs():
    x, it = gmres_solve(lambda v: 2 * v, np.zeros(5))
    assert it == 0 and not x.any()


@pytest.mark.parametrize("seed", range(3))
def test_gmres_against_dense_solve(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((16, 16))
    A = M @ M.T + 16 * np.eye(16)
    b = rng.standard_normal(16)
    x, _ = gmres_solve(lambda v: A @ v, b)
    npt.assert_allclose(x, np.linalg.solve(A, b), atol=1e-9)


def test_gmres_restarted_nonsymmetric(rng):
    A = np.eye(60) * 4 + rng.standard_normal((60, 60)) / 4
    b = rng.standard_normal(60)
    x, it = gmres_solve(lambda v: A @ v, b, NewtonConfig(gmres_restart=5, gmres_max_iter=500))
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert it > 5


def test_gmres_failure_carries_iterate(rng):
    A = np.diag(np.linspace(1e-6, 1, 40))
    b = rng.standard_normal(40)
    with pytest.raises(GMRESError) as exc:
        gmres_solve(lambda v: A @ v, b, NewtonConfig(gmres_restart=2, gmres_max_iter=4))
    assert exc.value.x.shape == (40,)
    assert exc.value.residual_norm > 0


def test_gmres_on_newton_system_within_size_bound():
    p = ref_params(tau=1.0, n=128)
    u = sample(128)
    b = -G(p, u, u)
    apply = lambda z: jacobian_vector_product(p, u, u, z)
    x, it = gmres_solve(apply, b, NewtonConfig(gmres_restart=200))
    assert np.linalg.norm(apply(x) - b) <= 1e-10 * np.linalg.norm(b)
    assert it <= 128


def test_exact_guess_converges_in_one():
    p = ref_params()
    u = sample()
    tight = NewtonConfig(eps_tol=1e-12, gmres_tol=1e-13)
    v, _ = newton_solve(p, u, u, tight)
    _, rep = newton_solve(p, u, v)
    assert rep.iterations == 1
    assert rep.update_norms[0] <= 1e-8


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_report_consistent(tau):
    p = ref_params(tau)
    u = sample(index=3)
    v, rep = newton_solve(p, u, u)
    assert rep.converged
    assert rep.iterations == len(rep.update_norms) == len(rep.gmres_iters) == len(rep.times)
    assert rep.update_norms[-1] < 1e-8
    assert all(u > 0 for u in rep.gmres_iters)
    assert np.all(np.diff(rep.times) >= 0)
    assert residual_norm(p, u, v) < 1e-6
    csv = rep.to_csv().splitlines()
    assert csv[0] == "k,l_update,gmres_iters,cumulative_time"
    assert len(csv) == rep.iterations + 1


def test_direct_guess_five_iterations_at_unit_step():
    p = ref_params(1.0)
    counts = [newton_solve(p, sample(index=i), sample(index=i))[1].iterations for i in range(10)]
    assert abs(np.mean(counts) - 5.0) <= 1.0


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_quadratic_tail(tau):
    p = ref_params(tau)
    u = sample(index=1)
    _, rep = newton_solve(p, u, u, NewtonConfig(eps_tol=1e-11, gmres_tol=1e-13))
    c = quadratic_constant_probe(rep)
    assert np.isfinite(c) and 0 < c < 1e3
    l = np.array(rep.update_norms)
    tail = (l[:-1] <= 1e-2) & (l[1:] >= 1e-13)
    assert np.all(l[1:][tail] <= c * l[:-1][tail] ** 2 * (1 + 1e-12))


def test_max_outer_exceeded():
    p = ref_params(2.0)
    u = sample()
    with pytest.raises(NewtonError) as exc:
        newton_solve(p, u, u, NewtonConfig(max_outer=2))
    assert exc.value.report.iterations == 2
    assert not exc.value.report.converged


def test_non_finite_guess_is_divergence():
    p = ref_params(n=16)
    y0 = np.zeros(16)
    y0[3] = np.nan
    with pytest.raises(NewtonDivergence):
        newton_solve(p, np.zeros(16), y0)


def test_overflowing_guess_is_divergence():
    p = SchemeParams(2.0, 0.01, GridSpec(1, 16))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NewtonDivergence):
        newton_solve(p, np.zeros(16), np.full(16, 1e200), NewtonConfig(max_outer=50))


def test_fixed_point_of_newton_update(rng):
    p = ref_params(n=64)
    u = rng.uniform(-1, 1, 64)
    v, _ = newton_solve(p, u, u, NewtonConfig(eps_tol=1e-12, gmres_tol=1e-13))
    assert l2_norm(residual(p, u, v), p.grid) < 1e-10
    w, rep = newton_solve(p, u, v)
    assert l2_norm(w - v, p.grid) < 1e-10 and rep.iterations == 1


def test_solution_independent_of_guess():
    p = ref_params(2.0)
    u = sample(index=2)
    a, _ = newton_solve(p, u, u)
    b, _ = newton_solve(p, u, np.tanh(3 * u))
    assert l2_norm(a - b, p.grid) <= 100 * 1e-8
