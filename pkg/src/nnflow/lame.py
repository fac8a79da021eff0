"""Constant-coefficient Lame operator ``div D u + lambda_bar grad div u`` on the torus.

In Fourier space the operator acts as ``-(1/2)|k|^2`` on the part of a mode
orthogonal to ``k`` and as ``-(1 + lambda_bar)|k|^2`` on the part parallel to
``k``, so it is inverted mode by mode.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import MeanError, TorusField, TorusGrid, _check_zero_mean, random_field

__all__ = [
    "LameParameter",
    "RieszConstants",
    "solve_lame",
    "apply_lame",
    "riesz_constants",
    "measured_operator_norm",
]


@dataclass(frozen=True)
class LameParameter:
    lambda_bar: float = 0.0

    def __post_init__(self):
        if not 1.0 + 2.0 * self.lambda_bar > 0.0:
            raise ValueError(f"lambda_bar must exceed -1/2, got {self.lambda_bar}")

    @property
    def ratio(self):
        """``(1 + 2 lambda_bar) / (2 + 2 lambda_bar)``, the projector weight."""
        return (1.0 + 2.0 * self.lambda_bar) / (2.0 + 2.0 * self.lambda_bar)


@dataclass(frozen=True)
class RieszConstants:
    p: float
    d: int
    lambda_bar: float
    C1: float
    C2: float
    C_total: float


def _solve_hat(grid: TorusGrid, lambda_bar: float, fh):
    """Mode-wise inverse; the zero mode and Nyquist modes are set to zero."""
    k = grid.kd
    k2 = grid.k2
    safe = np.where(k2 > 0, k2, 1.0)
    kf = np.sum(k * fh, axis=0) / safe  # (k . f) / |k|^2
    par = k * kf
    perp = fh - par
    uh = -2.0 * perp / safe - par / ((1.0 + lambda_bar) * safe)
    uh[:, (k2 == 0) | grid.nyquist_mask] = 0.0
    return uh


def apply_lame_values(grid: TorusGrid, lambda_bar: float, u):
    uh = grid.fft(u)
    k = grid.kd
    kdotu = np.sum(k * uh, axis=0)
    return grid.ifft(-0.5 * grid.k2 * uh - (0.5 + lambda_bar) * k * kdotu)


def apply_lame(param: LameParameter, u: TorusField) -> TorusField:
    """``div D u + lambda_bar grad div u``."""
    return TorusField(u.grid, apply_lame_values(u.grid, param.lambda_bar, u.values))


def solve_lame(param: LameParameter, f: TorusField) -> TorusField:
    """Zero-mean solution of ``div D u + lambda_bar grad div u = f``.

    Raises :class:`~nnflow.torus.MeanError` if ``f`` does not have zero mean.
    """
    if f.rank != 1:
        raise ValueError("solve_lame needs a vector right-hand side")
    _check_zero_mean(f)
    g = f.grid
    return TorusField(g, g.ifft(_solve_hat(g, param.lambda_bar, f.coefficients)))


def riesz_constants(p: float, d: int, param: LameParameter) -> RieszConstants:
    """Upper bounds on the Lame regularity constants built from Riesz-transform norms.

    Uses ``||R_k R_l|| <= p - 1`` and ``||(R_i R_j)_ij|| <= d (p - 1)`` for
    ``p > 2``; at ``p = 2`` both norms are 1.  ``C1`` bounds the Hessian,
    ``C2`` the gradient of the divergence, and ``C_total`` is the combined
    constant entering the smallness condition.  Exponents below 2 are
    not supported.
    """
    if p < 2:
        raise ValueError("constants are only available for p >= 2")
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    a = param.ratio
    if p == 2:
        C1 = 2.0 * d * d * (1.0 + a)
        C2 = 2.0 * (1.0 + a)
        total = (d * d + 1.0) * (1.0 + a)
    else:
        pm = p - 1.0
        C1 = 2.0 * d * d * pm * (1.0 + a * d * pm)
        C2 = 2.0 * (d * pm + a * d * pm)
        total = d * d * pm * (1.0 + a * d * pm) + d * pm * (1.0 + a)
    return RieszConstants(p, d, param.lambda_bar, C1, C2, total)


def _lp(grid, a, p):
    tens = a.ndim - grid.d
    mag = np.sqrt(np.sum(a**2, axis=tuple(range(tens)))) if tens else np.abs(a)
    return float(grid.integrate(mag**p) ** (1.0 / p))


def hessian_ratio(param: LameParameter, f: TorusField, p: float) -> float:
    """``||grad^2 u||_{L^p} / ||f||_{L^p}`` for the Lame solution ``u`` of ``f``."""
    g = f.grid
    u = solve_lame(param, f)
    hess = g.ifft(g.grad_hat(g.grad_hat(u.coefficients)))
    return _lp(g, hess, p) / _lp(g, f.values, p)


def measured_operator_norm(param: LameParameter, p: float, trials: int = 100,
                           grid: TorusGrid | None = None, band: int = 4,
                           seed: int = 0) -> float:
    """Largest observed Hessian-to-data ratio over random band-limited data."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = grid or TorusGrid(3, 32)
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(trials):
        f = random_field(grid, rank=1, band=band, rng=rng)
        worst = max(worst, hessian_ratio(param, f, p))
    return worst


__all__ += ["MeanError", "hessian_ratio"]
