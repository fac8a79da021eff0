"""Shear-dependent viscosity laws and the stress tensor they generate.

A law is a pair of scalar functions: the shear viscosity ``mu(s)`` evaluated
at ``s = |Du|^2`` and the bulk function ``lam(r)`` evaluated at ``r = div u``.
The stress is ``S u = 2 mu(|Du|^2) Du + lam(div u) div u I``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .torus import TorusField, TorusGrid

__all__ = [
    "ConstitutiveLaw",
    "EllipticityConstants",
    "PressureLaw",
    "CertificationError",
    "ResolutionError",
    "QuadratureError",
    "certify",
    "stress",
    "div_stress",
    "div_stress_direct",
    "dissipation_potential",
    "coercivity_gap",
    "make_law",
    "make_pressure",
    "newtonian",
    "power_law",
    "p_delta",
    "tabulated",
]


class CertificationError(ValueError):
    """Ellipticity conditions fail on the scan grid.

    ``violations`` is a list of ``(inequality, value, witness)`` tuples where
    ``witness`` is the sample point realising the offending infimum.
    """

    def __init__(self, violations, constants):
        self.violations = violations
        self.constants = constants
        lines = [f"{name} = {val:.6g} (witness {wit})" for name, val, wit in violations]
        super().__init__("ellipticity not certified: " + "; ".join(lines))


class ResolutionError(ValueError):
    """Field carries energy outside the dealiased band."""


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class EllipticityConstants:
    eps_mu_1: float
    eps_mu_2: float
    eps_lambda_1: float
    eps_lambda_2: float
    s_max: float = np.inf
    r_max: float = np.inf

    @property
    def eps_mu(self):
        return min(self.eps_mu_1, self.eps_mu_2)

    def margins(self):
        """Slack in each of the four defining inequalities."""
        return {
            "eps_mu_1 > 0": self.eps_mu_1,
            "eps_mu_2 > 0": self.eps_mu_2,
            "2 eps_mu_1 + 3 eps_lambda_1 > 0": 2 * self.eps_mu_1 + 3 * self.eps_lambda_1,
            "2 eps_mu + 3 eps_lambda_2 > 0": 2 * self.eps_mu + 3 * self.eps_lambda_2,
        }


@dataclass(frozen=True)
class ConstitutiveLaw:
    mu: Callable
    mu_prime: Callable
    lam: Callable
    lam_prime: Callable
    s_max: float = 100.0
    r_max: float = 10.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    n_samples: int = 2001

    @cached_property
    def eps(self) -> EllipticityConstants:
        """Constants certified on the law's own scan domain (raises on failure)."""
        return certify(self, self.n_samples)

    @property
    def is_linear(self):
        return self.name == "newtonian"

    def with_scan(self, s_max=None, r_max=None):
        return dataclasses.replace(
            self,
            s_max=self.s_max if s_max is None else s_max,
            r_max=self.r_max if r_max is None else r_max,
        )

    def shear(self, s):
        """``mu(s) + 2 s mu'(s)``, with the ``s = 0`` value taken as ``mu(0)``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(invalid="ignore"):
            sm = np.where(s > 0, s * self.mu_prime(s), 0.0)
        return self.mu(s) + 2.0 * sm

    def bulk(self, r):
        """``lam(r) + r lam'(r)``."""
        r = np.asarray(r, dtype=float)
        return self.lam(r) + r * self.lam_prime(r)


@dataclass(frozen=True)
class PressureLaw:
    p: Callable
    p_prime: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        rho = np.linspace(0.0, 10.0, 101)
        if np.any(np.asarray(self.p(rho)) < 0):
            raise ValueError("pressure must be non-negative on rho >= 0")


# -- registry ---------------------------------------------------------------

def _const(c):
    return lambda x: np.full(np.shape(x), float(c))


def _bulk(lam0, lam2):
    if lam2 == 0:
        return _const(lam0), _const(0.0)
    return (lambda r: lam0 + lam2 * np.asarray(r) ** 2,
            lambda r: 2.0 * lam2 * np.asarray(r))


def newtonian(mu=1.0, lam=0.0, **scan):
    lam_f, lam_p = _bulk(lam, 0.0)
    return ConstitutiveLaw(_const(mu), _const(0.0), lam_f, lam_p, name="newtonian",
                           params={"mu": mu, "lam": lam}, **scan)


def power_law(mu0=1.0, eps=0.05, r=1.0, lam=0.0, lam2=0.0, **scan):
    """``mu(s) = mu0 + eps * s**r`` with bulk ``lam + lam2 * r**2``."""
    def mu(s):
        return mu0 + eps * np.asarray(s, dtype=float) ** r

    def mu_prime(s):
        s = np.asarray(s, dtype=float)
        if r == 1.0:
            return np.full(s.shape, float(eps))
        with np.errstate(divide="ignore"):
            return np.where(s > 0, eps * r * s ** (r - 1.0), 0.0 if r > 1 else np.inf)

    lam_f, lam_p = _bulk(lam, lam2)
    return ConstitutiveLaw(mu, mu_prime, lam_f, lam_p, name="power_law",
                           params={"mu0": mu0, "eps": eps, "r": r, "lam": lam, "lam2": lam2},
                           **scan)


def p_delta(delta=0.1, p=4.0, lam=0.0, lam2=0.0, **scan):
    """The (p-delta) structure ``mu(s) = delta + s**((p-2)/2)``."""
    law = power_law(mu0=delta, eps=1.0, r=(p - 2.0) / 2.0, lam=lam, lam2=lam2, **scan)
    return dataclasses.replace(law, name="p_delta",
                               params={"delta": delta, "p": p, "lam": lam, "lam2": lam2})


def tabulated(s_samples, mu_samples, lam=0.0, lam2=0.0, **scan):
    """Shear viscosity from ``(s, mu(s))`` samples by monotone cubic interpolation."""
    s_samples = np.asarray(s_samples, dtype=float)
    mu_samples = np.asarray(mu_samples, dtype=float)
    interp = PchipInterpolator(s_samples, mu_samples, extrapolate=True)
    deriv = interp.derivative()
    lam_f, lam_p = _bulk(lam, lam2)
    scan.setdefault("s_max", float(s_samples[-1]))
    return ConstitutiveLaw(lambda s: interp(np.asarray(s, dtype=float)),
                           lambda s: deriv(np.asarray(s, dtype=float)),
                           lam_f, lam_p, name="table",
                           params={"s": s_samples.tolist(), "mu": mu_samples.tolist(),
                                   "lam": lam, "lam2": lam2}, **scan)


_LAWS = {"newtonian": newtonian, "power_law": power_law, "p_delta": p_delta,
         "table": tabulated}


def make_law(name: str, **params) -> ConstitutiveLaw:
    try:
        factory = _LAWS[name]
    except KeyError:
        raise ValueError(f"unknown law {name!r}; choose from {sorted(_LAWS)}") from None
    return factory(**params)


def make_pressure(name="constant", **params) -> PressureLaw:
    """``constant`` (p = value), ``linear`` (p = kappa rho) or ``gamma`` (kappa rho^gamma)."""
    if name == "constant":
        v = params.get("value", 1.0)
        return PressureLaw(_const(v), _const(0.0), name, {"value": v})
    if name == "linear":
        k = params.get("kappa", 1.0)
        return PressureLaw(lambda r: k * np.asarray(r, dtype=float), _const(k), name,
                           {"kappa": k})
    if name == "gamma":
        k = params.get("kappa", 1.0)
        gam = params.get("gamma", 1.4)
        return PressureLaw(
            lambda r: k * np.maximum(np.asarray(r, dtype=float), 0.0) ** gam,
            lambda r: k * gam * np.maximum(np.asarray(r, dtype=float), 0.0) ** (gam - 1.0),
            name, {"kappa": k, "gamma": gam})
    raise ValueError(f"unknown pressure law {name!r}")


# -- certification ------------------------------------------------------------

def _refined_min(func, pts):
    """Minimum of ``func`` over ``pts`` refined by a bounded search in the bracket."""
    vals = np.asarray(func(pts), dtype=float)
    if np.any(np.isnan(vals)):
        i = int(np.flatnonzero(np.isnan(vals))[0])
        return -np.inf, float(pts[i])
    i = int(np.argmin(vals))
    best, where = float(vals[i]), float(pts[i])
    lo, hi = pts[max(i - 1, 0)], pts[min(i + 1, len(pts) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: float(func(np.array([t]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12 * max(1.0, abs(hi))})
        if res.success and res.fun < best:
            best, where = float(res.fun), float(res.x)
    return best, where


def certify(law: ConstitutiveLaw, n_samples: int = 2001) -> EllipticityConstants:
    """Infima of ``mu``, ``mu + 2 s mu'``, ``lam`` and ``lam + r lam'`` on the scan domain.

    The grid has ``n_samples`` points plus midpoints on ``[0, s_max]`` and
    ``[-r_max, r_max]``; the smallest sample is refined by a bounded scalar
    search in its bracket.  Raises :class:`CertificationError` listing every
    violated inequality.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if not (np.isfinite(law.s_max) and np.isfinite(law.r_max)):
        raise ValueError("scan domain must be finite")
    s = np.linspace(0.0, law.s_max, 2 * n_samples - 1)
    r = np.linspace(-law.r_max, law.r_max, 2 * n_samples - 1)
    e_mu1, w_mu1 = _refined_min(law.mu, s)
    e_mu2, w_mu2 = _refined_min(law.shear, s)
    e_l1, w_l1 = _refined_min(law.lam, r)
    e_l2, w_l2 = _refined_min(law.bulk, r)
    eps = EllipticityConstants(e_mu1, e_mu2, e_l1, e_l2, law.s_max, law.r_max)
    witness = {
        "eps_mu_1 > 0": {"s": w_mu1},
        "eps_mu_2 > 0": {"s": w_mu2},
        "2 eps_mu_1 + 3 eps_lambda_1 > 0": {"s": w_mu1, "r": w_l1},
        "2 eps_mu + 3 eps_lambda_2 > 0": {
            "s": w_mu1 if e_mu1 <= e_mu2 else w_mu2, "r": w_l2},
    }
    bad = [(k, v, witness[k]) for k, v in eps.margins().items() if not v > 0]
    if bad:
        raise CertificationError(bad, eps)
    return eps


# -- stress -------------------------------------------------------------------

def _frob2(a):
    """Pointwise ``|A|^2`` over the two leading (matrix) axes."""
    return np.sum(a * a, axis=(0, 1))


def stress(law: ConstitutiveLaw, Du, divu):
    """Pointwise ``2 mu(|Du|^2) Du + lam(div u) div u I``.

    ``Du`` has shape ``(d, d, ...)`` and ``divu`` the trailing shape.
    """
    Du = np.asarray(Du, dtype=float)
    divu = np.asarray(divu, dtype=float)
    d = Du.shape[0]
    eye = np.eye(d).reshape((d, d) + (1,) * (Du.ndim - 2))
    return 2.0 * law.mu(_frob2(Du)) * Du + (law.lam(divu) * divu) * eye


def _check_resolution(u: TorusField, tol=1e-12):
    g = u.grid
    c = u.coefficients
    e = g.parseval_weight * np.sum(np.abs(c) ** 2, axis=tuple(range(u.rank)))
    total = np.sum(e)
    outside = np.sum(e[~g.dealias_mask])
    if total > 0 and outside > tol * total:
        raise ResolutionError(
            f"{outside / total:.2e} of the energy lies outside the dealiased band")


def _chain_terms(grid: TorusGrid, uh):
    """``Du``, ``div u``, ``div Du``, ``grad div u`` and the mu' contraction term.

    The contraction is ``sum_i <d_i Du, Du> (Du)_i`` with ``(Du)_i`` the i-th row.
    """
    Dh = grid.sym_grad_hat(uh)
    Du = grid.ifft(Dh)
    divh = grid.div_hat(uh)
    divu = grid.ifft(divh)
    div_Du = grid.ifft(grid.div_hat(Dh))
    grad_div = grid.ifft(grid.grad_hat(divh))
    dDu = grid.ifft(grid.grad_hat(Dh))  # dDu[a, b, i] = d_i Du_ab
    contr = np.einsum("abi...,ab...->i...", dDu, Du)  # <d_i Du, Du>
    term = np.einsum("i...,ij...->j...", contr, Du)
    return Du, divu, div_Du, grad_div, term


def div_stress_values(law: ConstitutiveLaw, grid: TorusGrid, uh):
    """Grid values of ``div S u`` by the expanded chain rule (no dealiasing)."""
    Du, divu, div_Du, grad_div, term = _chain_terms(grid, uh)
    s = _frob2(Du)
    with np.errstate(invalid="ignore"):
        mp = np.asarray(law.mu_prime(s), dtype=float)
    mp = np.where(np.isfinite(mp), mp, 0.0)
    return 2.0 * law.mu(s) * div_Du + 4.0 * mp * term + law.bulk(divu) * grad_div


def div_stress(law: ConstitutiveLaw, u: TorusField, dealiased: bool = True,
               check: bool = True) -> TorusField:
    """``div S u`` from the chain-rule expansion, evaluated pseudo-spectrally.

    Raises :class:`ResolutionError` when ``u`` has energy beyond the dealiasing
    cutoff (set ``check=False`` to skip).
    """
    if u.rank != 1:
        raise ValueError("div_stress needs a vector field")
    if check:
        _check_resolution(u)
    g = u.grid
    vals = div_stress_values(law, g, u.coefficients)
    if dealiased:
        vals = g.dealias(vals)
    return TorusField(g, vals)


def div_stress_direct(law: ConstitutiveLaw, u: TorusField, dealiased: bool = True) -> TorusField:
    """Spectral divergence of the pointwise stress; independent check of :func:`div_stress`."""
    g = u.grid
    Du = g.ifft(g.sym_grad_hat(u.coefficients))
    S = stress(law, Du, np.trace(Du, axis1=0, axis2=1))
    vals = g.div(S)
    if dealiased:
        vals = g.dealias(vals)
    return TorusField(g, vals)


# -- energy identities ------------------------------------------------------

def _antiderivative(func, upper, epsabs=1e-12):
    """``int_0^upper func(s) ds`` pointwise via adaptive Gauss-Kronrod."""
    upper = np.asarray(upper, dtype=float).ravel()
    if upper.size == 0 or not np.any(upper):
        return np.zeros_like(upper)
    res, err, info = quad_vec(lambda t: func(t * upper) * upper, 0.0, 1.0, epsabs=epsabs,
                              epsrel=0.0, limit=200, norm="max", full_output=True)
    # status 2 (round-off detected) is harmless when the error estimate is still small
    tol = 10 * epsabs + 1e-13 * float(np.max(np.abs(res), initial=0.0))
    if not np.all(np.isfinite(res)) or (info.status != 0 and not err <= tol):
        raise QuadratureError(f"quadrature did not converge (error estimate {err:.2e})")
    return res


def dissipation_potential(law: ConstitutiveLaw, u: TorusField) -> float:
    """Potential whose time derivative along a path is ``int S u : grad u_t``.

    It is ``int [ int_0^{|Du|^2} mu(s) ds + int_0^{div u} lam(r) r dr ] dx``;
    for constant ``lam`` the second term equals ``(1/2) lam |div u|^2``.
    """
    g = u.grid
    Du = g.ifft(g.sym_grad_hat(u.coefficients))
    s = _frob2(Du)
    r = np.trace(Du, axis1=0, axis2=1)
    m = _antiderivative(law.mu, s).reshape(g.shape)
    lam_r = _antiderivative(lambda x: np.asarray(law.lam(x)) * x, r).reshape(g.shape)
    return float(g.integrate(m + lam_r))


def coercivity_gap(law: ConstitutiveLaw, u: TorusField, v: TorusField, eps=None):
    """Monotonicity gap of the stress operator and its ellipticity lower bound.

    Returns ``(J, bound)`` with
    ``J = int (S u - S v) : grad(u - v) = -int (div S u - div S v).(u - v)``
    and ``bound = eps_mu ||grad w||^2 + (eps_mu + eps_lambda_2) ||div w||^2``.
    """
    g = u.grid
    eps = law.eps if eps is None else eps
    w = u.values - v.values
    Du = g.ifft(g.sym_grad_hat(u.coefficients))
    Dv = g.ifft(g.sym_grad_hat(v.coefficients))
    Su = stress(law, Du, np.trace(Du, axis1=0, axis2=1))
    Sv = stress(law, Dv, np.trace(Dv, axis1=0, axis2=1))
    gw = g.grad(w)
    divw = np.trace(gw, axis1=0, axis2=1)
    J = float(g.integrate(np.sum((Su - Sv) * gw, axis=(0, 1))))
    bound = (eps.eps_mu * float(g.integrate(np.sum(gw * gw, axis=(0, 1))))
             + (eps.eps_mu + eps.eps_lambda_2) * float(g.integrate(divw * divw)))
    return J, bound
