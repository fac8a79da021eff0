import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnflow.constitutive import CertificationError, div_stress, newtonian, p_delta, power_law
from nnflow.elliptic import (ConvergenceError, certify_smallness, solve, solve_1d,
                             verify_1d_estimate, verify_h2_estimate)
from nnflow.lame import LameParameter, solve_lame
from nnflow.torus import MeanError, TorusField, TorusGrid, random_field


def shear(g, amp=1.0):
    v = np.zeros((g.d,) + g.shape)
    v[0] = amp * np.sin(g.x[0])
    return TorusField(g, v)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_zero_forcing():
    g = TorusGrid(3, 8)
    rep = solve(power_law(), TorusField.zeros(g, 1))
    assert rep.converged and rep.iterations == 1
    assert np.all(rep.u.values == 0)


def test_half_viscosity_is_exact_in_one_iteration():
    g = TorusGrid(3, 16)
    law = newtonian(0.5, 0.0)
    u_star = shear(g)
    f = -div_stress(law, u_star)
    rep = solve(law, f, LameParameter(0.0))
    assert rep.iterations == 1
    assert np.allclose(rep.u.values, u_star.values, atol=1e-13)


@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(0.1, 5.0), lam=st.floats(-0.1, 3.0))
def test_newtonian_agrees_with_rescaled_lame(seed, mu, lam):
    g = TorusGrid(2, 16)
    law = newtonian(mu, lam)
    f = random_field(g, 1, band=4, seed=seed)
    rep = solve(law, f, tol=1e-12)
    ref = solve_lame(LameParameter(lam / (2 * mu)), f * (-1.0 / (2 * mu)))
    assert rep.converged
    assert np.allclose(rep.u.values, ref.values, atol=1e-10 * np.abs(ref.values).max())


def test_power_law_manufactured_solution():
    g = TorusGrid(3, 32)
    law = power_law(mu0=1.0, eps=0.05, r=1.0)
    u_star = shear(g)
    f = -div_stress(law, u_star)
    rep = solve(law, f, tol=1e-12)
    assert rep.converged
    assert rel_l2(rep.u.values, u_star.values) < 1e-8


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_solution_is_zero_mean(seed):
    g = TorusGrid(2, 16)
    f = random_field(g, 1, band=3, seed=seed, amplitude=0.5)
    rep = solve(power_law(mu0=1.0, eps=0.1, r=1.0, lam=0.3), f)
    assert rep.converged
    assert np.abs(rep.u.values.mean(axis=(1, 2))).max() < 1e-14


def test_input_checks():
    g = TorusGrid(2, 8)
    with pytest.raises(MeanError):
        solve(newtonian(), TorusField(g, np.ones((2,) + g.shape)))
    with pytest.raises(CertificationError):
        solve(newtonian(1.0, -1.0), random_field(g, 1, band=2, seed=0))


def test_non_convergence_is_reported():
    g = TorusGrid(2, 16)
    law = power_law(mu0=1.0, eps=0.5, r=1.0)
    f = random_field(g, 1, band=3, seed=4, amplitude=3.0)
    rep = solve(law, f, max_iter=2)
    assert not rep.converged and len(rep.residual_history) == 2
    with pytest.raises(ConvergenceError) as info:
        solve(law, f, max_iter=2, raise_on_failure=True)
    assert info.value.report.iterations == 2


def test_smallness_examples():
    p0 = LameParameter(0.0)
    lin = certify_smallness(newtonian(1.0, 0.4), LameParameter(0.2), 2, 1.0)
    assert lin.delta_contraction == 0.0 and lin.alpha == 0.0 and lin.kappa == 0.0
    assert lin.certified
    weak = certify_smallness(power_law(mu0=1.0, eps=0.01, r=1.0), p0, 2, 1.0)
    assert weak.C_total == 15.0
    assert weak.delta_contraction == pytest.approx(15 * 0.02 / 1.01, rel=1e-12)
    assert weak.certified
    strong = certify_smallness(power_law(mu0=1.0, eps=1.0, r=1.0), p0, 2, 1.0)
    assert strong.delta_contraction == pytest.approx(15.0, rel=1e-12)
    assert not strong.certified


def test_certified_iteration_contracts():
    g = TorusGrid(3, 16)
    law = power_law(mu0=1.0, eps=0.01, r=1.0)
    f = random_field(g, 1, band=3, seed=11, amplitude=0.5)
    rep = solve(law, f, tol=1e-12)
    Du = g.sym_grad(rep.u.values)
    bound = float(np.sqrt(np.max(np.sum(Du * Du, axis=(0, 1)))))
    cert = certify_smallness(law, LameParameter(0.0), 2, max(bound, 1e-3))
    assert cert.certified
    ratios = rep.contraction_ratios()
    assert len(ratios) >= 2
    assert max(ratios[-3:]) <= cert.delta_contraction + 0.1


def test_1d_zero_and_linear_equality():
    g = TorusGrid(1, 64)
    zero = verify_1d_estimate(newtonian(1.0, 0.0), TorusField.zeros(g, 0), 2)
    assert (zero.lhs, zero.rhs, zero.satisfied) == (0.0, 0.0, True)
    f = TorusField(g, np.sin(g.x[0]))
    u, uxx = solve_1d(newtonian(1.0, 0.0), f)
    assert np.allclose(u.values, np.sin(g.x[0]), atol=1e-12)
    chk = verify_1d_estimate(newtonian(1.0, 0.0), f, 2)
    assert chk.lhs == pytest.approx(np.pi, rel=1e-12)
    assert chk.rhs == pytest.approx(np.pi, rel=1e-12)
    assert chk.satisfied


def test_1d_second_derivative_against_pointwise_oracle():
    # independent route: solve flux(w) = c - F by brentq point by point, then
    # differentiate w with a sixth-order finite difference on a refined grid
    from scipy.optimize import brentq
    g = TorusGrid(1, 256)
    law = power_law(mu0=0.1, eps=1.0, r=1.0)
    f = random_field(g, 0, band=16, seed=3)
    _, uxx = solve_1d(law, f)

    def F(x):
        kk = np.arange(1, 17)
        fh = np.fft.rfft(f.values)[1:17] / g.n
        return float(np.sum(2 * np.real(fh * np.exp(1j * kk * x) / (1j * kk))))

    flux = lambda w: (0.1 + w * w) * w
    w_of = lambda x, c: brentq(lambda w: flux(w) - (c - F(x)), -30, 30, xtol=1e-15)
    Fg = np.array([F(x) for x in g.x[0]])
    mean_w = lambda c: np.mean([brentq(lambda w: flux(w) - (c - Fx), -30, 30, xtol=1e-15)
                                for Fx in Fg])
    c = brentq(mean_w, Fg.min(), Fg.max(), xtol=1e-14)
    i = 37
    h = 1e-3
    xs = g.x[0][i] + h * np.arange(-3, 4)
    ws = np.array([w_of(x, c) for x in xs])
    d1 = (-ws[0] + 9 * ws[1] - 45 * ws[2] + 45 * ws[4] - 9 * ws[5] + ws[6]) / (60 * h)
    assert uxx.values[i] == pytest.approx(d1, rel=1e-6)


def test_1d_unsharp_constant_fails_below_unit_viscosity():
    # mu = 0.1: u_xx = -f/0.1, so int |u_xx|^2 = 100 pi while (0.1)^(-1) pi = 10 pi;
    # the Holder form eps^(-p) int |f|^p holds with equality
    g = TorusGrid(1, 64)
    f = TorusField(g, np.sin(g.x[0]))
    chk = verify_1d_estimate(newtonian(0.1, 0.0), f, 2)
    assert chk.lhs == pytest.approx(100 * np.pi, rel=1e-10)
    assert chk.rhs == pytest.approx(10 * np.pi, rel=1e-10)
    assert chk.satisfied is False
    assert float(chk.note.split()[-1]) == pytest.approx(100 * np.pi, rel=1e-5)


@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([2.0, 3.0]),
       eps=st.floats(0.05, 1.0), amp=st.floats(0.1, 5.0))
def test_1d_holder_form_holds(seed, p, eps, amp):
    g = TorusGrid(1, 128)
    law = p_delta(eps, 4.0)
    f = random_field(g, 0, band=8, seed=seed, amplitude=amp)
    chk = verify_1d_estimate(law, f, p)
    sharp = float(chk.note.split()[-1])
    assert chk.lhs <= sharp * (1 + 1e-5)


def test_h2_zero_and_single_mode():
    g = TorusGrid(3, 16)
    law = newtonian(0.5, 0.0)
    rep = solve(law, TorusField.zeros(g, 1))
    zero = verify_h2_estimate(law, TorusField.zeros(g, 1), rep)
    assert (zero.lhs, zero.rhs) == (0.0, 0.0)
    # u* = sin x1 e1: grad D u* has one entry -sin x1 and f = sin x1 e1
    u_star = shear(g)
    f = -div_stress(law, u_star)
    rep = solve(law, f)
    chk = verify_h2_estimate(law, f, rep)
    norm_sq = (2 * np.pi) ** 3 / 2
    eps_mu = law.eps.eps_mu
    assert chk.lhs == pytest.approx(0.5 * eps_mu * norm_sq, rel=1e-10)
    assert chk.rhs == pytest.approx(norm_sq / (2 * eps_mu), rel=1e-10)
    assert chk.satisfied and rep.estimate_checks[-1] is chk


@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(0.0, 0.2), lam=st.floats(0.0, 1.0))
@settings(max_examples=10)
def test_h2_estimate_random_certified_laws(seed, eps, lam):
    g = TorusGrid(3, 16)
    law = power_law(mu0=1.0, eps=eps, r=1.0, lam=lam)
    f = random_field(g, 1, band=3, seed=seed, amplitude=0.5)
    rep = solve(law, f, tol=1e-11)
    assert rep.converged
    assert verify_h2_estimate(law, f, rep).satisfied


def test_h2_estimate_negative_bulk_is_informative():
    g = TorusGrid(2, 16)
    law = newtonian(1.0, -0.2)
    f = random_field(g, 1, band=3, seed=1)
    chk = verify_h2_estimate(law, f, solve(law, f))
    assert chk.satisfied is None and "informative" in chk.note
