import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnflow.lame import (LameParameter, apply_lame, hessian_ratio, measured_operator_norm,
                         riesz_constants, solve_lame)
from nnflow.torus import MeanError, TorusField, TorusGrid, random_field


def unit_mode(g, comp, axis, fn=np.sin):
    v = np.zeros((g.d,) + g.shape)
    v[comp] = fn(g.x[axis])
    return TorusField(g, v)


def test_parallel_mode_solution():
    g = TorusGrid(3, 16)
    u = solve_lame(LameParameter(0.0), unit_mode(g, 0, 0))
    assert np.allclose(u.values, -unit_mode(g, 0, 0).values, atol=1e-13)


def test_transverse_mode_solution():
    g = TorusGrid(3, 16)
    u = solve_lame(LameParameter(0.7), unit_mode(g, 1, 0))
    assert np.allclose(u.values, -2 * unit_mode(g, 1, 0).values, atol=1e-13)


def test_gradient_forcing_with_bulk_term():
    # f = grad(sin x1) = cos x1 e1 is curl free, so only 1 + lambda_bar = 2 acts
    g = TorusGrid(2, 16)
    u = solve_lame(LameParameter(1.0), unit_mode(g, 0, 0, np.cos))
    assert np.allclose(u.values, -0.5 * unit_mode(g, 0, 0, np.cos).values, atol=1e-13)


def test_zero_and_mean_checks():
    g = TorusGrid(2, 8)
    assert np.all(solve_lame(LameParameter(), TorusField.zeros(g, 1)).values == 0)
    with pytest.raises(MeanError):
        solve_lame(LameParameter(), TorusField(g, np.ones((2,) + g.shape)))
    with pytest.raises(ValueError):
        LameParameter(-0.5)


@given(seed=st.integers(0, 2**32 - 1), lb=st.floats(-0.45, 10.0), d=st.integers(1, 3))
def test_solve_inverts_apply(seed, lb, d):
    g = TorusGrid(d, 16)
    f = random_field(g, 1, band=5, seed=seed)
    p = LameParameter(lb)
    u = solve_lame(p, f)
    assert np.allclose(apply_lame(p, u).values, f.values, atol=1e-11 * (1 + np.abs(f.values).max()))


@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_solve_is_linear(seed, a, b):
    g = TorusGrid(2, 16)
    rng = np.random.Generator(np.random.Philox(seed))
    f1 = random_field(g, 1, band=4, rng=rng)
    f2 = random_field(g, 1, band=4, rng=rng)
    p = LameParameter(0.3)
    lhs = solve_lame(p, a * f1 + b * f2).values
    rhs = a * solve_lame(p, f1).values + b * solve_lame(p, f2).values
    assert np.allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("p,d,lb,expected", [(2, 3, 0.0, 15.0), (3, 3, 0.0, 81.0)])
def test_constants_table(p, d, lb, expected):
    assert riesz_constants(p, d, LameParameter(lb)).C_total == pytest.approx(expected, rel=1e-14)


def test_constants_stiff_bulk_limit():
    # ratio -> 1 as lambda_bar grows, so at p = 2, d = 3 the total tends to 20
    c = riesz_constants(2, 3, LameParameter(1e12))
    assert c.C_total == pytest.approx(20.0, rel=1e-10)
    with pytest.raises(ValueError):
        riesz_constants(1.5, 3, LameParameter())


@given(p=st.floats(2.0, 10.0), d=st.integers(1, 3), lb=st.floats(0.0, 50.0))
def test_constants_grow_with_exponent_and_bulk(p, d, lb):
    base = riesz_constants(p, d, LameParameter(lb))
    assert riesz_constants(p + 0.5, d, LameParameter(lb)).C_total >= base.C_total
    assert riesz_constants(p, d, LameParameter(lb + 1.0)).C_total >= base.C_total


@pytest.mark.parametrize("lb", [0.0, 1.0, 4.0])
@pytest.mark.parametrize("p", [2.0, 4.0])
def test_aligned_mode_hessian_ratio(lb, p):
    g = TorusGrid(3, 16)
    r = hessian_ratio(LameParameter(lb), unit_mode(g, 0, 0), p)
    assert r == pytest.approx(1.0 / (1.0 + lb), rel=1e-12)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_measured_norm_below_bound(p):
    param = LameParameter(0.0)
    worst = measured_operator_norm(param, p, trials=20, grid=TorusGrid(3, 16), band=3)
    assert 0 < worst <= riesz_constants(p, 3, param).C1
