"""One linearised Picard stage: density transport and the momentum solve.

Given the previous velocity iterate ``w = u^{k-1}``, the stage solves

    rho_t + w . grad rho + rho div w = 0,
    rho u_t + rho w . grad u - div S u + grad p(rho) = rho f,

the first with pseudo-spectral RK4, the second with implicit BDF2 (backward
Euler on the first step).  Each BDF2 step is a collocation system (the
equation holds at every grid point, with the stress remainder and pressure
gradient dealiased), solved by GMRES preconditioned with the constant-coefficient
operator ``mean(rho) a - (mu0 Lap + (mu0 + lam0) grad div)``; the nonlinear
stress remainder is iterated to convergence around it.  Where ``rho`` vanishes
the step therefore reduces to the quasi-static balance ``div S u = grad p - rho f``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .constitutive import ConstitutiveLaw, PressureLaw, div_stress_values
from .torus import TorusField, TorusGrid

__all__ = [
    "FluidState",
    "StepConfig",
    "Trajectory",
    "StageError",
    "CFLError",
    "NegativeDensityError",
    "ImplicitSolveError",
    "transport_stage",
    "momentum_stage",
    "momentum_residual",
    "discrete_div_stress",
    "pressure_gradient",
]

log = logging.getLogger(__name__)

RK4_STABILITY = 2.8  # imaginary-axis stability limit of classical RK4 (2 sqrt 2)


class StageError(RuntimeError):
    """A stage stopped early; ``t`` is the time of failure, ``partial`` the steps done."""

    def __init__(self, msg, t, partial=None):
        super().__init__(msg)
        self.t = t
        self.partial = partial


class CFLError(StageError):
    pass


class NegativeDensityError(StageError):
    pass


class ImplicitSolveError(StageError):
    pass


@dataclass
class FluidState:
    rho: TorusField
    u: TorusField
    t: float = 0.0
    delta: float = 0.0

    def clipped_rho(self):
        return TorusField(self.rho.grid, np.maximum(self.rho.values, 0.0))


@dataclass(frozen=True)
class StepConfig:
    dt: float
    t_end: float
    cfl_safety: float = 0.9
    rho_floor: float = 1e-10
    negative_tol: float = 1e-3
    linear_tol: float = 1e-12
    nonlinear_tol: float = 1e-10
    max_outer: int = 60

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")

    @property
    def nsteps(self):
        return max(1, int(round(self.t_end / self.dt)))

    @property
    def times(self):
        return self.dt * np.arange(self.nsteps + 1)


class Trajectory:
    """Snapshots of a field at uniform times with cubic interpolation in between."""

    def __init__(self, grid: TorusGrid, times, values):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != self.times.size:
            raise ValueError("one snapshot per time is required")

    @classmethod
    def constant(cls, grid, times, value):
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (len(times),) + value.shape)
        return cls(grid, times, vals)

    def __len__(self):
        return self.times.size

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def field(self, i) -> TorusField:
        return TorusField(self.grid, self.values[i])

    def truncate(self, n_keep):
        return Trajectory(self.grid, self.times[:n_keep], self.values[:n_keep])

    def __call__(self, t):
        return self.at(t)

    def at(self, t):
        ts = self.times
        if ts.size == 1:
            return self.values[0]
        h = ts[1] - ts[0]
        s = (t - ts[0]) / h
        i = int(np.floor(s + 1e-9))
        if abs(s - round(s)) < 1e-9 and 0 <= round(s) < ts.size:
            return self.values[int(round(s))]
        i0 = min(max(i - 1, 0), max(ts.size - 4, 0))
        idx = list(range(i0, min(i0 + 4, ts.size)))
        out = 0.0
        for a in idx:
            wgt = 1.0
            for b in idx:
                if b != a:
                    wgt *= (s - b) / (a - b)
            out = out + wgt * self.values[a]
        return out


def _as_callable(u):
    if isinstance(u, Trajectory) or callable(u):
        return u
    vals = u.values if isinstance(u, TorusField) else np.asarray(u)
    return lambda t: vals


# -- transport --------------------------------------------------------------

def transport_stage(rho0: TorusField, u_prev, cfg: StepConfig) -> Trajectory:
    """Integrate ``rho_t + w . grad rho + rho div w = 0`` with RK4.

    ``u_prev`` is a :class:`Trajectory`, a callable ``t -> values`` or a
    fixed field.  The right-hand side is dealiased; the zero mode of the
    update vanishes identically so mass is conserved to round-off.
    """
    grid = rho0.grid
    if np.min(rho0.values) < -1e-12:
        raise NegativeDensityError("initial density is negative", 0.0)
    w_of = _as_callable(u_prev)
    kmax = grid.n // 2
    mask = grid.dealias_mask
    scale = max(float(np.max(np.abs(rho0.values))), 1e-300)

    def rhs(r, t):
        w = w_of(t)
        rh = grid.fft(r)
        gr = grid.ifft(grid.grad_hat(rh))
        divw = grid.div(w)
        out = -(np.sum(w * gr, axis=0) + r * divw)
        return grid.ifft(grid.fft(out) * mask)

    times = cfg.times
    dt = cfg.dt
    out = np.empty((times.size,) + grid.shape)
    out[0] = rho0.values
    r = rho0.values.copy()
    for n in range(times.size - 1):
        t = times[n]
        wmax = max(float(np.max(np.sqrt(np.sum(np.asarray(w_of(tt)) ** 2, axis=0))))
                   for tt in (t, t + dt))
        if dt * wmax * kmax > cfg.cfl_safety * RK4_STABILITY:
            raise CFLError(f"CFL violated at t={t:.4g} (|w|max={wmax:.3g})", t,
                           Trajectory(grid, times[: n + 1], out[: n + 1]))
        k1 = rhs(r, t)
        k2 = rhs(r + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = rhs(r + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = rhs(r + dt * k3, t + dt)
        r = r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(r)):
            raise StageError(f"non-finite density at t={t + dt:.4g}", t + dt,
                             Trajectory(grid, times[: n + 1], out[: n + 1]))
        if np.min(r) < -cfg.negative_tol * scale:
            raise NegativeDensityError(
                f"density {np.min(r):.3e} below tolerance at t={t + dt:.4g}; refine the grid",
                t + dt, Trajectory(grid, times[: n + 1], out[: n + 1]))
        out[n + 1] = r
    return Trajectory(grid, times, out)


# -- momentum ---------------------------------------------------------------

def _forcing(f, grid, t):
    if f is None:
        return np.zeros((grid.d,) + grid.shape)
    val = f(t) if callable(f) else f
    return val.values if isinstance(val, TorusField) else np.asarray(val, dtype=float)


class _MomentumSystem:
    """Galerkin operator pieces for one implicit step at fixed ``rho``, ``w``."""

    def __init__(self, law, grid, rho, w, a):
        self.law = law
        self.grid = grid
        self.rho = rho
        self.w = w
        self.a = a
        self.mask = grid.dealias_mask
        self.mu0 = float(law.mu(np.array(0.0)))
        self.lam0 = float(law.lam(np.array(0.0)))
        self.linear_law = law.is_linear
        rbar = float(np.mean(rho))
        k2 = grid.k2
        self.p_perp = rbar * a + self.mu0 * k2
        self.p_par = rbar * a + (2.0 * self.mu0 + self.lam0) * k2
        self.shape = (grid.d,) + grid.shape
        self.size = int(np.prod(self.shape))

    def l0_hat(self, uh):
        g = self.grid
        kdotu = np.sum(g.kd * uh, axis=0)
        return -self.mu0 * g.k2 * uh - (self.mu0 + self.lam0) * g.kd * kdotu

    def mass_conv(self, u, uh):
        g = self.grid
        gu = g.ifft(g.grad_hat(uh))  # gu[i, j] = d_j u_i
        conv = np.einsum("j...,ij...->i...", self.w, gu)
        return self.rho * (self.a * u + conv)

    def apply(self, x):
        """``rho a u + rho w.grad u - L0 u`` at the grid points."""
        g = self.grid
        u = x.reshape(self.shape)
        uh = g.fft(u)
        out = self.mass_conv(u, uh) - g.ifft(self.l0_hat(uh))
        return out.ravel()

    def precondition(self, x):
        g = self.grid
        xh = g.fft(x.reshape(self.shape))
        k = g.kd
        safe = np.where(g.k2 > 0, g.k2, 1.0)
        par = k * (np.sum(k * xh, axis=0) / safe)
        yh = (xh - par) / self.p_perp + par / self.p_par
        return g.ifft(yh).ravel()

    def remainder(self, uh):
        """Dealiased ``div S u - L0 u`` (zero for Newtonian laws)."""
        if self.linear_law:
            return 0.0
        g = self.grid
        ds = g.fft(div_stress_values(self.law, g, uh))
        return g.ifft((ds - self.l0_hat(uh)) * self.mask)


def discrete_div_stress(law, grid, u, mask=None):
    """``div S u`` as the momentum step sees it: exact Lame part plus dealiased remainder."""
    mask = grid.dealias_mask if mask is None else mask
    uh = grid.fft(u)
    mu0 = float(law.mu(np.array(0.0)))
    lam0 = float(law.lam(np.array(0.0)))
    kdotu = np.sum(grid.kd * uh, axis=0)
    l0 = -mu0 * grid.k2 * uh - (mu0 + lam0) * grid.kd * kdotu
    if law.is_linear:
        return grid.ifft(l0)
    ds = grid.fft(div_stress_values(law, grid, uh))
    return grid.ifft(l0 + (ds - l0) * mask)


def pressure_gradient(pressure, grid, rho):
    return grid.ifft(grid.grad_hat(grid.fft(pressure.p(rho))) * grid.dealias_mask)


def momentum_residual(law, pressure, grid, u, u_hist, a, rho, w, f):
    """Pointwise residual of ``rho a (u - u_hist) + rho w.grad u - div S u + grad p - rho f``."""
    gu = grid.ifft(grid.grad_hat(grid.fft(u)))
    conv = np.einsum("j...,ij...->i...", w, gu)
    return (rho * (a * (u - u_hist) + conv - f) - discrete_div_stress(law, grid, u)
            + pressure_gradient(pressure, grid, rho))


def momentum_stage(law: ConstitutiveLaw, pressure: PressureLaw, rho_k: Trajectory, u_prev,
                   u0: TorusField, f: Callable | None, cfg: StepConfig,
                   stats: dict | None = None) -> Trajectory:
    """Advance ``u^k`` over the stage with implicit BDF2.

    ``rho_k`` must share ``cfg.times``; ``f`` is ``None``, a field, or a
    callable ``t -> vector values``.  ``stats`` (if given) receives the
    largest relative residual and iteration counts.
    """
    grid = u0.grid
    w_of = _as_callable(u_prev)
    times = cfg.times
    if len(rho_k) != times.size:
        raise ValueError("density trajectory does not match the step configuration")
    if np.min(rho_k.values) < -1e-12 * max(1.0, float(np.max(rho_k.values))) - cfg.negative_tol:
        raise NegativeDensityError("negative density passed to the momentum stage", 0.0)
    dt = cfg.dt
    out = np.empty((times.size,) + u0.shape)
    out[0] = u0.values
    worst = 0.0
    total_lin = 0
    for n in range(times.size - 1):
        t1 = times[n + 1]
        if n == 0:
            a, hist = 1.0 / dt, out[0]
        else:
            a, hist = 1.5 / dt, (4.0 * out[n] - out[n - 1]) / 3.0
        rho = rho_k.values[n + 1]
        w = np.asarray(w_of(t1), dtype=float)
        fv = _forcing(f, grid, t1)
        sys_ = _MomentumSystem(law, grid, rho, w, a)
        b_fixed = rho * (a * hist + fv) - pressure_gradient(pressure, grid, rho)
        scale = (np.linalg.norm(b_fixed) + np.linalg.norm(rho * a * out[n])
                 + np.linalg.norm(grid.ifft(sys_.l0_hat(grid.fft(out[n])))) + 1e-300)
        A = LinearOperator((sys_.size, sys_.size), matvec=sys_.apply, dtype=float)
        M = LinearOperator((sys_.size, sys_.size), matvec=sys_.precondition, dtype=float)
        u = out[n].copy()
        rel = np.inf
        for outer in range(cfg.max_outer):
            b = b_fixed + sys_.remainder(grid.fft(u))
            x, info = gmres(A, b.ravel(), x0=u.ravel(), rtol=0.0,
                            atol=cfg.linear_tol * scale, restart=60, maxiter=20, M=M)
            total_lin += 1
            u = x.reshape(u.shape)
            res = momentum_residual(law, pressure, grid, u, hist, a, rho, w, fv)
            rel = float(np.linalg.norm(res)) / scale
            log.debug("outer %d info %d rel %.3e", outer, info, rel)
            if not np.isfinite(rel):
                break
            if rel <= cfg.nonlinear_tol:
                break
        if not np.isfinite(rel) or rel > max(cfg.nonlinear_tol, 1e3 * cfg.linear_tol) * 10:
            raise ImplicitSolveError(
                f"implicit step failed at t={t1:.4g} (relative residual {rel:.3e})", t1,
                Trajectory(grid, times[: n + 1], out[: n + 1]))
        worst = max(worst, rel)
        out[n + 1] = u
    if stats is not None:
        stats["max_relative_residual"] = worst
        stats["linear_solves"] = total_lin
    return Trajectory(grid, times, out)
