import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnflow.torus import (MeanError, TorusField, TorusGrid, dealias, div, grad, inner, laplacian,
                          norm, random_field, riesz, sym_grad)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(4, 16)
    with pytest.raises(ValueError):
        TorusGrid(2, 15)
    with pytest.raises(ValueError):
        TorusGrid(2, 2)


def test_divergence_of_single_mode():
    g = TorusGrid(3, 16)
    u = np.zeros((3,) + g.shape)
    u[0] = np.sin(g.x[0])
    d = div(TorusField(g, u))
    assert np.allclose(d.values, np.cos(g.x[0]), atol=1e-13)


def test_sym_grad_off_diagonal():
    g = TorusGrid(3, 16)
    u = np.zeros((3,) + g.shape)
    u[1] = np.sin(g.x[0])
    D = sym_grad(TorusField(g, u)).values
    expect = np.zeros_like(D)
    expect[0, 1] = expect[1, 0] = np.cos(g.x[0]) / 2
    assert np.allclose(D, expect, atol=1e-13)


def test_laplacian_of_sine():
    g = TorusGrid(2, 16)
    u = TorusField(g, np.sin(g.x[0]))
    assert np.allclose(laplacian(u).values, -np.sin(g.x[0]), atol=1e-13)


def test_riesz_1d_sine_to_cosine():
    g = TorusGrid(1, 32)
    r = riesz(0, TorusField(g, np.sin(g.x[0])))
    assert np.allclose(r.values, np.cos(g.x[0]), atol=1e-13)


def test_riesz_rejects_nonzero_mean():
    g = TorusGrid(2, 16)
    with pytest.raises(MeanError):
        riesz(0, TorusField(g, 1.0 + np.sin(g.x[0])))


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3))
def test_riesz_square_sum_is_minus_identity(seed, d):
    g = TorusGrid(d, 8)
    u = random_field(g, 0, band=2, seed=seed)
    total = sum(riesz(j, riesz(j, u)).values for j in range(d))
    assert np.allclose(total, -u.values, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_riesz_second_order_matrix_squares_to_minus_itself(seed):
    # with the i k_j/|k| multiplier, (R_i R_j) has symbol -k_i k_j/|k|^2, so the
    # idempotent gradient projector is its negative
    g = TorusGrid(3, 8)
    u = random_field(g, 1, band=2, seed=seed)

    def rr(v):
        out = np.zeros_like(v.values)
        for i in range(3):
            for j in range(3):
                out[i] += riesz(i, riesz(j, v[j])).values
        return TorusField(g, out)

    once = rr(u)
    assert np.allclose(rr(once).values, -once.values, atol=1e-12)
    proj = -once
    assert np.allclose((-rr(proj)).values, proj.values, atol=1e-12)


def test_riesz_single_mode_isometry():
    g = TorusGrid(2, 16)
    x = g.x
    u = TorusField(g, np.cos(3 * x[0] + 4 * x[1]))
    for j, kj in enumerate((3, 4)):
        assert norm(riesz(j, u)) == pytest.approx(kj / 5 * norm(u), rel=1e-12)


def test_norms_of_sine():
    g = TorusGrid(3, 16)
    s = TorusField(g, np.sin(g.x[0]))
    assert norm(s) ** 2 == pytest.approx((2 * np.pi) ** 3 / 2, rel=1e-13)
    assert norm(s, "Lq", np.inf) == pytest.approx(1.0, abs=1e-15)
    z = TorusField.zeros(g, rank=1)
    for space in ("L2", "Lq", "W1q", "W2q", "H1", "H2", "Hminus1"):
        assert norm(z, space, 3.0) == 0.0


def test_h_minus_one_of_single_mode():
    g = TorusGrid(1, 16)
    s = TorusField(g, np.sin(2 * g.x[0]))
    assert norm(s, "Hminus1") == pytest.approx(norm(s) / np.sqrt(5), rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3), rank=st.integers(0, 1))
def test_parseval(seed, d, rank):
    g = TorusGrid(d, 8)
    u = random_field(g, rank, band=3, seed=seed, zero_mean=False)
    c = u.coefficients
    e = np.abs(c) ** 2
    if rank:
        e = e.sum(axis=0)
    spectral = g.volume * np.sum(g.parseval_weight * e)
    assert spectral == pytest.approx(norm(u) ** 2, rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3))
def test_div_grad_is_laplacian(seed, d):
    g = TorusGrid(d, 8)
    u = random_field(g, 0, band=3, seed=seed)
    assert np.allclose(div(grad(u)).values, laplacian(u).values, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(1, 7))
def test_grad_and_riesz_commute_with_grid_shift(seed, shift):
    g = TorusGrid(2, 8)
    u = random_field(g, 0, band=3, seed=seed)
    moved = TorusField(g, np.roll(u.values, shift, axis=0))
    assert np.allclose(grad(moved).values, np.roll(grad(u).values, shift, axis=1), atol=1e-12)
    assert np.allclose(riesz(1, moved).values, np.roll(riesz(1, u).values, shift, axis=0),
                       atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_dealias_idempotent_and_energy_decreasing(seed):
    g = TorusGrid(2, 16)
    u = random_field(g, 1, band=7, seed=seed)
    once = dealias(u)
    assert np.array_equal(dealias(once).values, once.values) or np.allclose(
        dealias(once).values, once.values, atol=1e-15)
    assert norm(once) <= norm(u) * (1 + 1e-14)


def test_dealias_keeps_band_limited_field():
    g = TorusGrid(2, 32)
    u = random_field(g, 0, band=10, seed=4)
    assert np.allclose(dealias(u).values, u.values, atol=1e-14)


def test_zero_mean_flag_drops_mean_mode():
    g = TorusGrid(2, 8)
    u = TorusField(g, 3.0 + np.sin(g.x[0]), zero_mean=True)
    assert abs(u.mean()) < 1e-14
    assert abs(u.coefficients[0, 0]) < 1e-15


def test_random_field_is_reproducible_and_scaled():
    g = TorusGrid(3, 8)
    a = random_field(g, 1, band=2, seed=11, amplitude=0.5)
    b = random_field(g, 1, band=2, seed=11, amplitude=0.5)
    assert a.values.tobytes() == b.values.tobytes()
    rms = np.sqrt(np.mean(np.sum(a.values ** 2, axis=0)))
    assert rms == pytest.approx(0.5, rel=1e-12)
    assert abs(a.mean()).max() < 1e-14


def test_field_arithmetic_and_inner():
    g = TorusGrid(1, 16)
    s = TorusField(g, np.sin(g.x[0]))
    c = TorusField(g, np.cos(g.x[0]))
    assert inner(s, c) == pytest.approx(0.0, abs=1e-13)
    assert inner(s, s) == pytest.approx(np.pi, rel=1e-13)
    assert np.allclose((2 * s - s / 2 + (-s)).values, 0.5 * s.values)
