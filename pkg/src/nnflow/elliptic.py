"""Nonlinear elliptic solves ``-div S u = f`` and checks of their regularity estimates.

The solver rewrites the equation around a constant-coefficient Lame operator,

    div D u + lb grad div u = -f/(2 mu) - ((lam + lam' div u)/(2 mu) - lb) grad div u
                              - (2 mu'/mu) sum_i <d_i Du, Du> (Du)_i ,

and iterates exact Lame solves on the right-hand side, with damping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constitutive import ConstitutiveLaw, _frob2, div_stress_values
from .lame import LameParameter, _solve_hat, apply_lame_values, riesz_constants
from .torus import TorusField, TorusGrid, _check_zero_mean

__all__ = [
    "EllipticSolveReport",
    "EstimateCheck",
    "SmallnessCertificate",
    "ConvergenceError",
    "default_lame_parameter",
    "solve",
    "certify_smallness",
    "solve_1d",
    "verify_1d_estimate",
    "verify_h2_estimate",
]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class EstimateCheck:
    name: str
    lhs: float
    rhs: float
    satisfied: bool | None
    note: str = ""

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.satisfied))


@dataclass
class EllipticSolveReport:
    u: TorusField
    iterations: int
    residual_l2: float
    converged: bool
    residual_history: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    estimate_checks: list = field(default_factory=list)
    lambda_bar: float = 0.0

    def contraction_ratios(self, floor=1e-13):
        """Ratios of successive update sizes, ignoring updates at round-off level."""
        s = np.asarray(self.step_sizes)
        scale = max(float(np.max(s)) if s.size else 0.0, 1e-300)
        keep = s > floor * scale
        s = s[keep]
        return list(s[1:] / s[:-1])


@dataclass
class SmallnessCertificate:
    alpha: float | None
    c: float
    kappa: float
    delta_contraction: float
    C_total: float
    certified: bool

    @property
    def kappa_ok(self):
        return self.kappa <= 1.0


def default_lame_parameter(law: ConstitutiveLaw) -> LameParameter:
    """``lambda_bar = lam(0) / (2 mu(0))`` clipped into ``(-1/2, inf)``."""
    lb = float(law.lam(np.array(0.0))) / (2.0 * float(law.mu(np.array(0.0))))
    return LameParameter(max(lb, -0.5 + 1e-6))


def _l2(grid, a):
    return float(np.sqrt(grid.integrate(np.sum(a * a, axis=0))))


def _lame_rhs(law, grid, lb, uh, f):
    """``-f/(2 mu) - ((bulk/(2 mu) - lambda_bar) grad div u + (2 mu'/mu) sum_i <d_i Du, Du> (Du)_i)``.

    Written as ``L u - (P div S u + f)/(2 mu)`` with ``P`` the dealiasing
    projector, so the fixed point is exactly ``P div S u + f = 0``.
    """
    Du = grid.sym_grad_hat(uh)
    s = _frob2(grid.ifft(Du))
    mu = law.mu(s)
    ds = grid.dealias(div_stress_values(law, grid, uh))
    lu = apply_lame_values(grid, lb, grid.ifft(uh))
    return lu - (ds + f) / (2.0 * mu)


def solve(law: ConstitutiveLaw, f: TorusField, param: LameParameter | None = None,
          tol: float = 1e-10, max_iter: int = 200, theta: float = 1.0,
          u0: TorusField | None = None, raise_on_failure: bool = False) -> EllipticSolveReport:
    """Solve ``-div S u = f`` for zero-mean ``u`` by damped Lame fixed-point iteration.

    Parameters
    ----------
    law : ConstitutiveLaw
        Must pass :func:`~nnflow.constitutive.certify` on its scan domain.
    f : TorusField
        Zero-mean vector right-hand side.
    param : LameParameter, optional
        Reference operator; defaults to :func:`default_lame_parameter`.
    tol : float
        Stop once ``||div S u + f||_{L^2} <= tol * ||f||_{L^2}``.
    theta : float
        Initial damping; halved (down to 1/16) whenever the residual grows.

    Returns
    -------
    EllipticSolveReport
        ``converged`` is False after ``max_iter`` Lame solves unless
        ``raise_on_failure`` is set, in which case :class:`ConvergenceError`
        carries the report.
    """
    law.eps  # certification failure propagates here
    if f.rank != 1:
        raise ValueError("right-hand side must be a vector field")
    _check_zero_mean(f)
    grid = f.grid
    param = param or default_lame_parameter(law)
    lb = param.lambda_bar
    fv = f.values
    fnorm = _l2(grid, fv)
    mask = grid.dealias_mask

    def residual(uh):
        r = grid.dealias(div_stress_values(law, grid, uh)) + fv
        return _l2(grid, r)

    def lame_step(uh):
        rhs = _lame_rhs(law, grid, lb, uh, fv)
        rh = grid.fft(rhs) * mask
        return _solve_hat(grid, lb, rh)

    if u0 is None:
        mu0 = float(law.mu(np.array(0.0)))
        uh = _solve_hat(grid, lb, grid.fft(-fv / (2.0 * mu0)) * mask)
    else:
        uh = grid.fft(u0.values) * mask
        uh[(slice(None),) + (0,) * grid.d] = 0.0
    iterations = 1
    res = residual(uh)
    history = [res]
    steps = []
    scale = fnorm if fnorm > 0 else 1.0
    while res > tol * scale and iterations < max_iter:
        cand = lame_step(uh)
        iterations += 1
        th = theta
        while True:
            new = (1.0 - th) * uh + th * cand
            new_res = residual(new)
            if new_res <= res or th <= 1.0 / 16.0:
                break
            th = max(th / 2.0, 1.0 / 16.0)
        theta = th
        steps.append(_l2(grid, grid.ifft(new - uh)))
        uh, res = new, new_res
        history.append(res)
        if not np.isfinite(res):
            break
    converged = bool(res <= tol * scale)
    report = EllipticSolveReport(TorusField(grid, grid.ifft(uh)), iterations, res, converged,
                                 history, steps, lambda_bar=lb)
    if not converged:
        log.warning("elliptic solve stopped after %d iterations, residual %.3e", iterations, res)
        if raise_on_failure:
            raise ConvergenceError(f"no convergence after {iterations} iterations "
                                   f"(residual {res:.3e})", report)
    return report


def certify_smallness(law: ConstitutiveLaw, param: LameParameter, p: float,
                      field_bound: float, d: int = 3, n_samples: int = 401) -> SmallnessCertificate:
    """Check the smallness hypotheses that make the Lame fixed point a contraction.

    Scans ``s = |S|^2`` in ``[0, field_bound^2]`` and traces ``r`` with
    ``r^2 <= d s`` (so ``|r| <= sqrt(d) field_bound``).
    """
    C = riesz_constants(p, d, param).C_total
    s = np.linspace(0.0, field_bound**2, n_samples)
    mu = law.mu(s)
    with np.errstate(invalid="ignore"):
        smp = np.where(s > 0, s * np.asarray(law.mu_prime(s), dtype=float), 0.0)
    delta = C * float(np.max(np.abs(2.0 * smp) / mu))

    # mismatch between the reference bulk coefficient and the true one
    ss = s[:, None]
    t = np.linspace(-1.0, 1.0, n_samples)[None, :]
    r = t * np.sqrt(d * ss)
    mis = np.abs(param.lambda_bar - law.bulk(r) / (2.0 * law.mu(ss)))
    kappa = C * float(np.max(mis))

    alpha, c = _growth_exponent(law, s)
    certified = alpha is not None and kappa <= 1.0 and delta < 1.0
    return SmallnessCertificate(alpha, c, kappa, delta, C, certified)


def _growth_exponent(law, s):
    """Smallest ``alpha`` in ``[0, 1)`` with ``1/mu(s) <= c s^(alpha/2)`` on the samples."""
    pos = s[s > 0]
    inv = 1.0 / np.asarray(law.mu(pos), dtype=float)
    mu0 = float(law.mu(np.array(0.0)))
    if np.isfinite(1.0 / mu0) and mu0 > 0 and np.all(np.isfinite(inv)):
        return 0.0, float(max(np.max(inv), 1.0 / mu0))
    # 1/mu unbounded at 0: need alpha/2 >= -slope of log(1/mu) against log s near 0
    near = pos[: max(3, len(pos) // 10)]
    ln_inv = np.log(1.0 / np.asarray(law.mu(near), dtype=float))
    slope = np.polyfit(np.log(near), ln_inv, 1)[0]
    alpha = max(0.0, 2.0 * slope)
    if alpha >= 1.0:
        return None, np.inf
    return alpha, float(np.max(inv / pos ** (alpha / 2.0)))


def solve_1d(law: ConstitutiveLaw, f: TorusField):
    """Solve the scalar problem ``-(mu(|u'|^2) u')' = f`` on the circle.

    The flux ``mu(w^2) w`` with ``w = u'`` equals ``c - F`` for ``F`` the
    zero-mean antiderivative of ``f``; it is inverted pointwise (the flux is
    strictly increasing) and ``c`` is fixed by ``mean(w) = 0``.  Returns
    ``(u, u_xx)`` as scalar fields.
    """
    grid = f.grid
    if grid.d != 1 or f.rank != 0:
        raise ValueError("solve_1d needs a scalar field on the 1-torus")
    _check_zero_mean(f)
    k = grid.kd[0]
    fh = f.coefficients
    Fh = np.where(k != 0, fh / (1j * np.where(k != 0, k, 1.0)), 0.0)
    F = grid.ifft(Fh)
    lower = law.eps.eps_mu_1

    def flux(w):
        return law.mu(w * w) * w

    def invert(target):
        hi = np.abs(target) / lower + 1e-300
        a, b = -hi, hi.copy()
        for _ in range(200):
            m = 0.5 * (a + b)
            up = flux(m) > target
            b = np.where(up, m, b)
            a = np.where(up, a, m)
            if np.max(b - a) <= 4e-16 * max(1.0, np.max(np.abs(m))):
                break
        return 0.5 * (a + b)

    if np.max(np.abs(F)) == 0:
        zero = TorusField(grid, np.zeros(grid.shape))
        return zero, zero
    lo_c, hi_c = float(np.min(F)), float(np.max(F))
    c = brentq(lambda cc: float(np.mean(invert(cc - F))), lo_c, hi_c, xtol=1e-15, rtol=1e-15)
    w = invert(c - F)
    wh = grid.fft(w)
    wh[0] = 0.0
    uh = np.where(k != 0, wh / (1j * np.where(k != 0, k, 1.0)), 0.0)
    u = TorusField(grid, grid.ifft(uh))
    # differentiate the flux identity pointwise: (mu + 2 s mu') w' = -f.  The
    # inverse flux can have complex branch points close to the real axis, so
    # w may be far from band limited even when f is; avoid spectral d/dx here.
    s = w * w
    uxx = TorusField(grid, -f.values / (law.mu(s) + 2.0 * s * law.mu_prime(s)))
    return u, uxx


def verify_1d_estimate(law: ConstitutiveLaw, f: TorusField, p: float) -> EstimateCheck:
    """``int |u_xx|^p <= (eps_mu_2)^(1-p) int |f|^p`` for the 1-D problem.

    ``note`` carries the Holder-sharp bound ``eps_mu_2^(-p) int |f|^p`` for
    comparison; for ``eps_mu_2 < 1`` the first bound is the stronger claim.
    """
    _, uxx = solve_1d(law, f)
    grid = f.grid
    e2 = law.eps.eps_mu_2
    lhs = float(grid.integrate(np.abs(uxx.values) ** p))
    fp = float(grid.integrate(np.abs(f.values) ** p))
    rhs = e2 ** (1.0 - p) * fp
    sharp = e2 ** (-p) * fp
    return EstimateCheck("1d W2p", lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-8)),
                         note=f"holder bound {sharp:.6g}")


def verify_h2_estimate(law: ConstitutiveLaw, f: TorusField,
                       report: EllipticSolveReport) -> EstimateCheck:
    """``(eps_mu/2)||grad Du||^2 + eps_lambda_2 ||grad div u||^2 <= ||f||^2 / (2 eps_mu)``.

    When ``eps_lambda_2 < 0`` the signed combination is reported and the
    check is marked informative (``satisfied is None``).
    """
    if not report.converged:
        raise ConvergenceError("H2 check needs a converged solve", report)
    eps = law.eps
    grid = f.grid
    uh = report.u.coefficients
    Dh = grid.sym_grad_hat(uh)
    gD = grid.ifft(grid.grad_hat(Dh))
    gdiv = grid.ifft(grid.grad_hat(grid.div_hat(uh)))
    nD = float(grid.integrate(np.sum(gD * gD, axis=(0, 1, 2))))
    ndiv = float(grid.integrate(np.sum(gdiv * gdiv, axis=0)))
    lhs = 0.5 * eps.eps_mu * nD + eps.eps_lambda_2 * ndiv
    rhs = _l2(grid, f.values) ** 2 / (2.0 * eps.eps_mu)
    if eps.eps_lambda_2 < 0:
        chk = EstimateCheck("H2", lhs, rhs, None, note="informative: eps_lambda_2 < 0")
    else:
        chk = EstimateCheck("H2", lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-8)))
    report.estimate_checks.append(chk)
    return chk
