"""The constructive pipeline: regularise, initialise, Picard-iterate, let delta go to 0.

For fixed ``delta`` the iteration starts from ``u^0 = 0`` and alternates

    rho^k:  transport of rho_0 + delta by u^{k-1}
    u^k:    linearised momentum equation with coefficients rho^k, u^{k-1}

until the sup-in-time change ``||sqrt(rho^k)(u^k - u^{k-1})|| + ||rho^k - rho^{k-1}||``
drops below ``tol``.  A stage failure or a blow-up trigger shortens the horizon
to the last healthy time and restarts.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .constitutive import ConstitutiveLaw, PressureLaw
from .elliptic import ConvergenceError, solve
from .evolution import (FluidState, StageError, StepConfig, Trajectory, momentum_stage,
                        transport_stage)
from .fieldio import load_field, save_field
from .monitors import AprioriRecord, apriori_series, blowup_watchdog, compatibility_energy
from .torus import TorusField, TorusGrid, norm

__all__ = [
    "ProblemData",
    "SchemeConfig",
    "IterationRecord",
    "IterationTrace",
    "PicardResult",
    "PicardError",
    "ContinuationResult",
    "TwinReport",
    "CheckpointStore",
    "regularize_and_initialize",
    "picard",
    "continuation_in_delta",
    "default_delta_schedule",
    "twin_run",
]

log = logging.getLogger(__name__)


@dataclass
class ProblemData:
    """Initial density, compatibility datum ``g``, forcing ``f(t)`` and exponent ``q``."""

    rho0: TorusField
    g: TorusField
    f: Callable | None = None
    q: float = 6.0
    T: float = 0.1

    def __post_init__(self):
        d = self.rho0.grid.d
        if self.rho0.rank != 0 or self.g.rank != 1:
            raise ValueError("rho0 must be scalar and g a vector field")
        if self.g.grid != self.rho0.grid:
            raise ValueError("rho0 and g live on different grids")
        if np.min(self.rho0.values) < 0:
            raise ValueError("rho0 must be non-negative")
        if not self.q > max(d, 1):
            raise ValueError(f"q must exceed {d}")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def grid(self) -> TorusGrid:
        return self.rho0.grid

    @property
    def q0(self):
        return min(6.0, self.q)

    def forcing(self, t):
        if self.f is None:
            return None
        return self.f(t)


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 0.01
    k_max: int = 12
    tol: float = 1e-6
    cfl_safety: float = 0.9
    watchdog_threshold: float | None = None
    watchdog_factor: float = 1e3
    max_restarts: int = 4
    elliptic_tol: float = 1e-10
    linear_tol: float = 1e-12
    nonlinear_tol: float = 1e-10
    negative_tol: float = 1e-3

    def step(self, T):
        return StepConfig(dt=self.dt, t_end=T, cfl_safety=self.cfl_safety,
                          negative_tol=self.negative_tol, linear_tol=self.linear_tol,
                          nonlinear_tol=self.nonlinear_tol)


def regularize_and_initialize(data: ProblemData, delta: float, law: ConstitutiveLaw,
                              pressure: PressureLaw, tol: float = 1e-10) -> FluidState:
    """``(rho_0 + delta, u_0)`` with ``-div S u_0 = sqrt(rho_0 + delta) g - grad p(rho_0 + delta)``.

    The right side is dealiased and its mean removed; the discarded mean is
    logged and stored on the returned state as ``discarded_mean``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = data.grid
    rho = data.rho0.values + delta
    rhs = np.sqrt(rho) * data.g.values - grid.grad(pressure.p(rho))
    rhs = grid.dealias(rhs)
    mean = rhs.reshape(grid.d, -1).mean(axis=1)
    if np.any(mean != 0):
        log.info("initial elliptic right side: discarded mean %s", mean)
    rhs = rhs - mean.reshape((grid.d,) + (1,) * grid.d)
    if np.max(np.abs(rhs)) == 0.0:
        u0 = TorusField.zeros(grid, rank=1)
    else:
        rep = solve(law, TorusField(grid, rhs), tol=tol)
        if not rep.converged:
            raise ConvergenceError("initial elliptic problem did not converge", rep)
        u0 = rep.u
    state = FluidState(TorusField(grid, rho), u0, 0.0, delta)
    state.discarded_mean = mean
    return state


@dataclass
class IterationRecord:
    k: int
    du: float
    drho: float
    phi_K: float
    T: float
    sup_norms: dict = field(default_factory=dict)

    @property
    def change(self):
        return self.du + self.drho


@dataclass
class IterationTrace:
    delta: float
    records: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    trigger_time: float | None = None
    discarded_mean: list = field(default_factory=list)

    def changes(self):
        return np.array([r.change for r in self.records])

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        raw["records"] = [IterationRecord(**r) for r in raw["records"]]
        return cls(**raw)

    def finite(self):
        vals = [r.du for r in self.records] + [r.drho for r in self.records]
        vals += [v for r in self.records for v in r.sup_norms.values()]
        return bool(np.all(np.isfinite(vals)))


@dataclass
class PicardResult:
    rho: Trajectory
    u: Trajectory
    trace: IterationTrace
    converged: bool
    T_star: float
    monitors: AprioriRecord | None = None
    initial: FluidState | None = None

    @property
    def iterations(self):
        return len(self.trace.records)


class PicardError(RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class CheckpointStore:
    """One directory per (delta, k) holding FieldFiles for every snapshot plus the trace."""

    def __init__(self, root):
        self.root = os.fspath(root)

    def _dir(self, delta, k):
        return os.path.join(self.root, f"delta_{delta:.6e}", f"k_{k:03d}")

    def save(self, delta, k, rho: Trajectory, u: Trajectory, trace: IterationTrace, T):
        path = self._dir(delta, k)
        os.makedirs(path, exist_ok=True)
        for i, t in enumerate(u.times):
            save_field(os.path.join(path, f"rho_{i:05d}.nnf"), rho.field(i), t, delta)
            save_field(os.path.join(path, f"u_{i:05d}.nnf"), u.field(i), t, delta)
        meta = {"k": k, "T": T, "nt": len(u), "trace": json.loads(trace.to_json())}
        with open(os.path.join(path, "meta.json.tmp"), "w") as fh:
            json.dump(meta, fh, sort_keys=True)
        os.replace(os.path.join(path, "meta.json.tmp"), os.path.join(path, "meta.json"))

    def latest(self, delta):
        base = os.path.join(self.root, f"delta_{delta:.6e}")
        if not os.path.isdir(base):
            return None
        ks = sorted(int(e[2:]) for e in os.listdir(base)
                    if e.startswith("k_") and os.path.exists(os.path.join(base, e, "meta.json")))
        return ks[-1] if ks else None

    def load(self, delta, k):
        path = self._dir(delta, k)
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
        rho, u, times = [], [], []
        for i in range(meta["nt"]):
            r, t, _ = load_field(os.path.join(path, f"rho_{i:05d}.nnf"))
            v, _, _ = load_field(os.path.join(path, f"u_{i:05d}.nnf"))
            rho.append(r.values)
            u.append(v.values)
            times.append(t)
        grid = r.grid
        trace = IterationTrace.from_json(json.dumps(meta["trace"]))
        return (Trajectory(grid, times, np.array(rho)), Trajectory(grid, times, np.array(u)),
                trace, meta["T"])


def _sup_l2(grid, arr, weight=None):
    out = 0.0
    for i in range(arr.shape[0]):
        a = arr[i]
        mag2 = np.sum(a**2, axis=0) if a.ndim > grid.d else a**2
        if weight is not None:
            mag2 = np.maximum(weight[i], 0.0) * mag2
        out = max(out, float(np.sqrt(grid.integrate(mag2))))
    return out


def _shorten(T, t_fail, dt):
    n_ok = int(math.floor((t_fail - 1e-12) / dt))
    return n_ok * dt


def picard(data: ProblemData, delta: float, law: ConstitutiveLaw, pressure: PressureLaw,
           cfg: SchemeConfig | None = None, state0: FluidState | None = None,
           checkpoint: CheckpointStore | None = None, resume: bool = False,
           raise_on_failure: bool = False) -> PicardResult:
    """Picard iteration in ``k`` at fixed ``delta``.

    Returns a :class:`PicardResult`; ``converged`` is False when ``k_max``
    is exhausted (and :class:`PicardError` is raised instead if
    ``raise_on_failure``).  The horizon may come back shorter than
    ``data.T`` after a stage failure or a watchdog trigger.
    """
    cfg = cfg or SchemeConfig()
    state0 = state0 or regularize_and_initialize(data, delta, law, pressure, cfg.elliptic_tol)
    grid = data.grid
    C0 = compatibility_energy(data.g)
    T = data.T
    trace = IterationTrace(delta, discarded_mean=[float(m) for m in
                                                   getattr(state0, "discarded_mean", [])])
    start_k, prev = 1, None
    if resume and checkpoint is not None:
        k_last = checkpoint.latest(delta)
        if k_last is not None:
            rho_l, u_l, trace, T = checkpoint.load(delta, k_last)
            prev = (rho_l, u_l)
            start_k = k_last + 1
            if trace.records and trace.records[-1].change < cfg.tol:
                mon = apriori_series(rho_l, u_l, data.q0, C0=C0)
                return PicardResult(rho_l, u_l, trace, True, T, mon, state0)
    restarts = 0
    while True:
        step = cfg.step(T)
        times = step.times
        if prev is None:
            rho_prev = Trajectory.constant(grid, times, state0.rho.values)
            u_prev = Trajectory.constant(grid, times, np.zeros(state0.u.shape))
            k0 = 1
        else:
            rho_prev, u_prev = prev
            k0 = start_k
        phi_prev = max((r.phi_K for r in trace.records), default=0.0)
        failed = None
        converged = False
        mon = None
        for k in range(k0, cfg.k_max + 1):
            try:
                rho_k = transport_stage(state0.rho, u_prev, step)
                u_k = momentum_stage(law, pressure, rho_k, u_prev, state0.u, data.f, step)
            except StageError as exc:
                failed = ("stage", exc.t, str(exc))
                break
            mon = apriori_series(rho_k, u_k, data.q0, w=u_prev, C0=C0, phi_prev=phi_prev)
            verdict = blowup_watchdog(mon, cfg.watchdog_threshold, T, cfg.watchdog_factor)
            du = _sup_l2(grid, u_k.values - u_prev.values, rho_k.values)
            drho = _sup_l2(grid, rho_k.values - rho_prev.values)
            phi_prev = max(phi_prev, mon.phi_K)
            sup = {key: float(v) for key, v in mon.sup().items()}
            trace.records.append(IterationRecord(k, du, drho, phi_prev, T, sup))
            log.info("delta=%.3e k=%d change=%.3e phi=%.3g", delta, k, du + drho, phi_prev)
            if verdict.triggered:
                failed = ("watchdog", verdict.t_trigger, verdict.advice)
                break
            if checkpoint is not None:
                checkpoint.save(delta, k, rho_k, u_k, trace, T)
            rho_prev, u_prev = rho_k, u_k
            if du + drho < cfg.tol:
                converged = True
                break
        if failed is None:
            result = PicardResult(rho_prev, u_prev, trace, converged, T, mon, state0)
            if not converged and raise_on_failure:
                raise PicardError(f"Picard iteration did not converge in {cfg.k_max} steps", result)
            return result
        kind, t_fail, why = failed
        if kind == "watchdog" and trace.trigger_time is None:
            trace.trigger_time = float(t_fail)
        T_new = _shorten(T, t_fail, cfg.dt)
        trace.restarts.append({"kind": kind, "t": float(t_fail), "T_new": T_new, "why": why})
        log.warning("%s failure at t=%.4g; horizon shortened to %.4g", kind, t_fail, T_new)
        restarts += 1
        if T_new < cfg.dt or restarts > cfg.max_restarts:
            partial = PicardResult(rho_prev, u_prev, trace, False, T_new, mon, state0)
            raise PicardError(f"{kind} failure at t={t_fail:.4g}; no healthy horizon left", partial)
        T = T_new
        prev, start_k = None, 1


def default_delta_schedule(start=1e-2, floor=1e-5):
    """Halving from ``start`` with ``floor`` as the last entry."""
    out = [start]
    while out[-1] / 2 > floor * (1 + 1e-9):
        out.append(out[-1] / 2)
    out.append(floor)
    return out


@dataclass
class ContinuationResult:
    deltas: list
    results: list
    u_diffs: np.ndarray
    rho_diffs: np.ndarray
    ratios: np.ndarray
    cauchy: bool
    limit_attained: bool

    @property
    def final(self) -> PicardResult:
        return self.results[-1]

    def report(self):
        lines = ["delta_i  delta_i+1  |du|_C(H1)  |drho|_C(Lq0)  ratio"]
        for i in range(len(self.u_diffs)):
            r = self.ratios[i - 1] if i > 0 else math.nan
            lines.append(f"{self.deltas[i]:.4e} {self.deltas[i + 1]:.4e} "
                         f"{self.u_diffs[i]:.6e} {self.rho_diffs[i]:.6e} {r:.4f}")
        lines.append(f"cauchy={self.cauchy} limit_attained={self.limit_attained}")
        return "\n".join(lines)


def _sup_diff(grid, a: Trajectory, b: Trajectory, space, q):
    n = min(len(a), len(b))
    out = 0.0
    for i in range(n):
        out = max(out, norm(TorusField(grid, a.values[i] - b.values[i]), space, q))
    return out


def continuation_in_delta(data: ProblemData, law: ConstitutiveLaw, pressure: PressureLaw,
                          schedule=None, cfg: SchemeConfig | None = None,
                          checkpoint: CheckpointStore | None = None, resume: bool = False,
                          limit_tol: float = 1e-6, band=(0.25, 1.0)) -> ContinuationResult:
    """Run :func:`picard` along a decreasing ``delta`` schedule and measure Cauchy behaviour.

    Consecutive differences are ``sup_t ||u^{d_i} - u^{d_i+1}||_{H^1}`` and
    ``sup_t ||rho^{d_i} - rho^{d_i+1}||_{L^{q0}}`` on the common time window.
    The run is reported Cauchy when each successive ratio of the summed
    differences lies in ``band``; non-Cauchy behaviour is logged, not raised.
    """
    schedule = list(schedule or default_delta_schedule())
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise ValueError("delta schedule must be positive and strictly decreasing")
    grid = data.grid
    results = [picard(data, dl, law, pressure, cfg, checkpoint=checkpoint, resume=resume)
               for dl in schedule]
    du = np.array([_sup_diff(grid, a.u, b.u, "H1", 2.0) for a, b in zip(results, results[1:])])
    dr = np.array([_sup_diff(grid, a.rho, b.rho, "Lq", data.q0)
                   for a, b in zip(results, results[1:])])
    tot = du + dr
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = tot[1:] / tot[:-1]
    cauchy = bool(np.all((ratios >= band[0]) & (ratios <= band[1]))) if ratios.size else True
    if not cauchy:
        log.warning("delta continuation is not Cauchy within %s: ratios %s", band, ratios)
    attained = bool(tot.size and tot[-1] < limit_tol)
    return ContinuationResult(schedule, results, du, dr, ratios, cauchy, attained)


@dataclass
class TwinReport:
    times: np.ndarray
    u_divergence: np.ndarray
    rho_divergence: np.ndarray
    data_difference: float
    identical: bool
    first: PicardResult = field(repr=False, default=None)
    second: PicardResult = field(repr=False, default=None)

    @property
    def max_divergence(self):
        return float(np.max(self.u_divergence) + np.max(self.rho_divergence))

    @property
    def ratio(self):
        if self.data_difference == 0:
            return 0.0 if self.max_divergence == 0 else math.inf
        return self.max_divergence / self.data_difference


def twin_run(data_a: ProblemData, data_b: ProblemData, delta: float, law: ConstitutiveLaw,
             pressure: PressureLaw, cfg: SchemeConfig | None = None) -> TwinReport:
    """Run both data sets through :func:`picard` and compare the trajectories."""
    cfg = cfg or SchemeConfig()
    grid = data_a.grid
    ra = picard(data_a, delta, law, pressure, cfg)
    rb = picard(data_b, delta, law, pressure, cfg)
    n = min(len(ra.u), len(rb.u))
    times = ra.u.times[:n]
    du = np.array([norm(TorusField(grid, ra.u.values[i] - rb.u.values[i])) for i in range(n)])
    dr = np.array([norm(TorusField(grid, ra.rho.values[i] - rb.rho.values[i])) for i in range(n)])
    size = norm(data_a.rho0 - data_b.rho0) + norm(data_a.g - data_b.g)
    fsup = 0.0
    for t in times:
        fa, fb = data_a.forcing(t), data_b.forcing(t)
        if fa is None and fb is None:
            continue
        fa = np.zeros((grid.d,) + grid.shape) if fa is None else np.asarray(fa)
        fb = np.zeros((grid.d,) + grid.shape) if fb is None else np.asarray(fb)
        fsup = max(fsup, norm(TorusField(grid, fa - fb)))
    identical = (n == len(ra.u) == len(rb.u)
                 and ra.u.values.tobytes() == rb.u.values.tobytes()
                 and ra.rho.values.tobytes() == rb.rho.values.tobytes()
                 and ra.trace.to_json() == rb.trace.to_json())
    return TwinReport(times, du, dr, size + fsup, identical, ra, rb)
