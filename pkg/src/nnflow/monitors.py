"""Trajectory functionals: a priori norm collection, elliptic ratio, blow-up watchdog."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .evolution import Trajectory, discrete_div_stress, pressure_gradient
from .torus import TorusField, TorusGrid, norm

__all__ = [
    "AprioriRecord",
    "WatchdogVerdict",
    "time_derivative",
    "density_rate",
    "apriori_snapshot",
    "apriori_series",
    "compatibility_energy",
    "elliptic_h2_surrogate",
    "blowup_watchdog",
    "pde_residuals",
]

COLUMNS = (
    "t", "Phi", "phi_K", "I", "rho_W1q0", "rho_t_Lq0", "rho_t_L2", "u_L2", "u_H1",
    "u_H2", "grad_u_L2sq", "rho_ut_sq", "sqrt_rho_ut_L2", "u_W2q0", "ut_H1",
    "int_u_W2q0_sq", "int_ut_H1_sq", "kinetic", "mass", "min_rho",
)


def time_derivative(traj: Trajectory):
    """Second-order finite differences in time (one-sided at the ends)."""
    if len(traj) < 2:
        return np.zeros_like(traj.values)
    edge = 2 if len(traj) >= 3 else 1
    return np.gradient(traj.values, traj.times, axis=0, edge_order=edge)


def density_rate(grid: TorusGrid, rho, w):
    """``-w . grad rho - rho div w`` evaluated spectrally."""
    return -(np.sum(w * grid.grad(rho), axis=0) + rho * grid.div(w))


def compatibility_energy(g: TorusField) -> float:
    return norm(g) ** 2


def apriori_snapshot(grid, rho, u, u_t, rho_t, q0):
    """Instantaneous norms at one time level, as a dict keyed like :data:`COLUMNS`."""
    R = TorusField(grid, rho)
    U = TorusField(grid, u)
    Ut = TorusField(grid, u_t)
    rho_W1 = norm(R, "W1q", q0)
    u_H1 = norm(U, "H1")
    sqrt_rho_ut = float(np.sqrt(grid.integrate(rho * np.sum(u_t**2, axis=0))))
    return {
        "Phi": 1.0 + rho_W1 + u_H1,
        "rho_W1q0": rho_W1,
        "rho_t_Lq0": norm(TorusField(grid, rho_t), "Lq", q0),
        "rho_t_L2": norm(TorusField(grid, rho_t)),
        "u_L2": norm(U),
        "u_H1": u_H1,
        "u_H2": norm(U, "H2"),
        "grad_u_L2sq": u_H1**2 - norm(U) ** 2,
        "rho_ut_sq": sqrt_rho_ut**2,
        "sqrt_rho_ut_L2": sqrt_rho_ut,
        "u_W2q0": norm(U, "W2q", q0),
        "ut_H1": norm(Ut, "H1"),
        "kinetic": 0.5 * float(grid.integrate(rho * np.sum(u**2, axis=0))),
        "mass": float(grid.integrate(rho)),
        "min_rho": float(np.min(rho)),
    }


@dataclass
class AprioriRecord:
    """Per-time-step monitor series for one (delta, k) stage."""

    times: np.ndarray
    columns: dict
    C0: float = 0.0
    q0: float = 6.0

    def __getitem__(self, key):
        return self.columns[key]

    def __len__(self):
        return self.times.size

    @property
    def phi_K(self):
        return float(self.columns["phi_K"][-1])

    def finite(self):
        return all(np.all(np.isfinite(v)) for v in self.columns.values())

    def sup(self):
        return {k: float(np.max(v)) for k, v in self.columns.items() if k != "t"}

    def to_csv(self, stream=None):
        """One row per time step; floats written with ``repr`` so output is byte-stable."""
        own = stream is None
        stream = stream or io.StringIO()
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(self.times.size):
            w.writerow([repr(float(self.columns[c][i])) for c in COLUMNS])
        return stream.getvalue() if own else None


def apriori_series(rho: Trajectory, u: Trajectory, q0: float = 6.0, w: Trajectory | None = None,
                   C0: float = 0.0, phi_prev: float = 0.0) -> AprioriRecord:
    """Monitor series along a stage.

    ``u_t`` comes from time differencing; ``rho_t`` from the continuity identity
    with the advecting field ``w`` (``u`` itself if not given).  ``phi_prev``
    carries the running maximum over earlier iterates, so ``phi_K`` is the sup
    over ``s <= t`` and ``k <= K``.
    """
    grid = u.grid
    ut = time_derivative(u)
    adv = u if w is None else w
    rows = []
    for i, t in enumerate(u.times):
        rt = density_rate(grid, rho.values[i], np.asarray(adv.at(t)))
        rows.append(apriori_snapshot(grid, rho.values[i], u.values[i], ut[i], rt, q0))
    cols = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    cols["t"] = u.times.copy()
    cols["phi_K"] = np.maximum.accumulate(np.maximum(cols["Phi"], phi_prev))

    def cumulative(y):
        out = np.zeros_like(y)
        if y.size > 1:
            out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(u.times))
        return out

    cols["int_u_W2q0_sq"] = cumulative(cols["u_W2q0"] ** 2)
    cols["int_ut_H1_sq"] = cumulative(cols["ut_H1"] ** 2)
    cols["I"] = (1.0 + cols["rho_W1q0"] + cols["rho_t_L2"] + cols["u_H2"] + cols["sqrt_rho_ut_L2"]
                 + cols["int_u_W2q0_sq"] + cols["int_ut_H1_sq"])
    return AprioriRecord(u.times.copy(), cols, C0=C0, q0=q0)


def elliptic_h2_surrogate(grid, rho, u, u_t, pressure, f=None, tiny=1e-300):
    """``||u||_{H^2} / ||F||_{L^2}`` with ``F = rho f - rho u_t - rho u.grad u - grad p``.

    The zero state gives 0.
    """
    U = TorusField(grid, u)
    h2 = norm(U, "H2")
    if h2 == 0.0:
        return 0.0
    gu = grid.grad(u)
    conv = np.einsum("j...,ij...->i...", u, gu)
    F = -rho * (u_t + conv) - pressure_gradient(pressure, grid, rho)
    if f is not None:
        F = F + rho * f
    return h2 / (norm(TorusField(grid, F)) + tiny)


@dataclass
class WatchdogVerdict:
    healthy: bool
    threshold: float
    t_trigger: float | None
    T_star: float
    phi_sup: np.ndarray = field(repr=False)
    I: np.ndarray = field(repr=False)
    advice: str = ""

    @property
    def triggered(self):
        return not self.healthy


def blowup_watchdog(record: AprioriRecord, threshold: float | None = None,
                    T: float | None = None, factor: float = 1e3) -> WatchdogVerdict:
    """Flag the first time the running sup of Phi crosses ``threshold`` or goes non-finite.

    The default threshold is ``factor * Phi(0)``.  ``T_star`` is the last
    healthy time (``T`` or the final stored time when nothing triggers).
    """
    times = record.times
    phi = np.asarray(record["Phi"], dtype=float)
    if threshold is None:
        threshold = factor * phi[0] if np.isfinite(phi[0]) else math.inf
    bad = ~np.isfinite(phi)
    sup = np.maximum.accumulate(np.where(bad, np.inf, phi))
    hit = np.nonzero(bad | (sup > threshold))[0]
    T_end = float(times[-1]) if T is None else float(T)
    if hit.size == 0:
        return WatchdogVerdict(True, threshold, None, T_end, sup, np.asarray(record["I"]))
    i = int(hit[0])
    t_star = float(times[i - 1]) if i > 0 else 0.0
    advice = ("Phi escaped the threshold; refine n and dt to tell discrete-norm "
              "escape from growth of the continuous solution")
    return WatchdogVerdict(False, threshold, float(times[i]), t_star, sup,
                           np.asarray(record["I"]), advice)


def pde_residuals(law, pressure, rho: Trajectory, u: Trajectory, f=None, discrete=True):
    """Relative L2 residuals of the continuity and momentum equations per interior time.

    Time derivatives are centred differences of the stored snapshots.  With
    ``discrete=True`` the spatial operators are the ones the scheme uses
    (dealiased continuity flux, dealiased stress remainder), so the residual
    measures time discretisation plus iteration error; ``discrete=False``
    evaluates the conservative flux ``div(rho u)`` without projection and so
    also exposes the spatial truncation of non-band-limited densities.
    """
    grid = u.grid
    ut = time_derivative(u)
    rt = time_derivative(rho)
    cont, mom = [], []
    for i in range(1, len(u) - 1):
        r, v = rho.values[i], u.values[i]
        if discrete:
            flux_div = grid.dealias(-density_rate(grid, r, v))
        else:
            flux_div = grid.div(r * v)
        c_scale = norm(TorusField(grid, rt[i])) + norm(TorusField(grid, flux_div)) + 1e-300
        cont.append(norm(TorusField(grid, rt[i] + flux_div)) / c_scale)
        conv = np.einsum("j...,ij...->i...", v, grid.grad(v))
        terms = [r * ut[i], r * conv, -discrete_div_stress(law, grid, v),
                 pressure_gradient(pressure, grid, r)]
        if f is not None:
            fv = f(u.times[i]) if callable(f) else f
            terms.append(-r * np.asarray(fv))
        res = sum(terms)
        m_scale = sum(norm(TorusField(grid, t)) for t in terms) + 1e-300
        mom.append(norm(TorusField(grid, res)) / m_scale)
    return np.array(cont), np.array(mom)
