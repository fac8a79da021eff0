"""Flat ``section.key = value`` run configuration, validated in one pass.

Lines starting with ``#`` and blank lines are ignored.  Every problem found is
collected into one :class:`ConfigError` so a bad file is fixed in one go.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .constitutive import make_law, make_pressure
from .scheme import ProblemData, SchemeConfig, default_delta_schedule
from .torus import TorusField, TorusGrid, random_field

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "OUTPUT_ENV"]

OUTPUT_ENV = "NNFLOW_OUTPUT"

LAW_PARAMS = {
    "newtonian": ("mu", "lam"),
    "power_law": ("mu0", "eps", "r", "lam", "lam2"),
    "p_delta": ("delta", "p", "lam", "lam2"),
}
PRESSURE_PARAMS = {"constant": ("value",), "linear": ("kappa",), "gamma": ("kappa", "gamma")}

# key -> (parser, default)
_FIELDS = {
    "grid.d": (int, 3),
    "grid.n": (int, 32),
    "law.name": (str, "newtonian"),
    "pressure.name": (str, "constant"),
    "data.rho0.kind": (str, "constant"),
    "data.rho0.value": (float, 1.0),
    "data.rho0.amplitude": (float, 0.2),
    "data.rho0.band": (int, 3),
    "data.g.kind": (str, "zero"),
    "data.g.amplitude": (float, 1.0),
    "data.g.mode": (int, 1),
    "data.g.band": (int, 3),
    "data.f.kind": (str, "zero"),
    "data.f.amplitude": (float, 0.0),
    "data.f.mode": (int, 1),
    "scheme.delta_schedule": (str, "default"),
    "scheme.k_max": (int, 12),
    "scheme.tol": (float, 1e-6),
    "scheme.dt": (float, 0.01),
    "scheme.T": (float, 0.1),
    "scheme.q": (float, 6.0),
    "scheme.cfl_safety": (float, 0.9),
    "monitor.threshold": (str, "auto"),
    "monitor.factor": (float, 1e3),
    "output.dir": (str, "nnflow_out"),
    "seed": (int, 0),
}
_LAW_KEYS = {f"law.{p}" for ps in LAW_PARAMS.values() for p in ps}
_PRESSURE_KEYS = {f"pressure.{p}" for ps in PRESSURE_PARAMS.values() for p in ps}


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    law_params: dict = field(default_factory=dict)
    pressure_params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output_dir(self):
        return os.environ.get(OUTPUT_ENV) or self.values["output.dir"]

    def grid(self):
        return TorusGrid(self["grid.d"], self["grid.n"])

    def law(self):
        return make_law(self["law.name"], **self.law_params)

    def pressure(self):
        return make_pressure(self["pressure.name"], **self.pressure_params)

    def delta_schedule(self):
        text = self["scheme.delta_schedule"].strip()
        if text == "default":
            return default_delta_schedule()
        return [float(v) for v in text.split(",") if v.strip()]

    def threshold(self):
        t = self["monitor.threshold"].strip().lower()
        if t == "auto":
            return None
        return math.inf if t in ("inf", "infinity") else float(t)

    def scheme(self):
        return SchemeConfig(dt=self["scheme.dt"], k_max=self["scheme.k_max"],
                            tol=self["scheme.tol"], cfl_safety=self["scheme.cfl_safety"],
                            watchdog_threshold=self.threshold(),
                            watchdog_factor=self["monitor.factor"])

    def data(self, f_scale=1.0, rho_shift=None):
        """Build :class:`ProblemData` from the presets (``f_scale``/``rho_shift`` feed twin runs)."""
        grid = self.grid()
        seed = self["seed"]
        x = grid.x
        kind = self["data.rho0.kind"]
        if kind == "constant":
            rho0 = np.full(grid.shape, self["data.rho0.value"])
        elif kind == "bump":
            rho0 = self["data.rho0.value"] * _bump(np.sin(x[0]))
        else:
            pert = random_field(grid, 0, self["data.rho0.band"], seed=seed,
                                amplitude=self["data.rho0.amplitude"], zero_mean=True)
            rho0 = self["data.rho0.value"] + pert.values
            rho0 = np.maximum(rho0, 0.0)
        if rho_shift is not None:
            rho0 = np.maximum(rho0 + rho_shift, 0.0)
        g = _vector_preset(grid, self["data.g.kind"], self["data.g.amplitude"],
                           self["data.g.mode"], self["data.g.band"], seed + 1)
        f = _forcing_preset(grid, self["data.f.kind"], f_scale * self["data.f.amplitude"],
                            self["data.f.mode"])
        return ProblemData(TorusField(grid, rho0), TorusField(grid, g), f,
                           q=self["scheme.q"], T=self["scheme.T"])


def _bump(s):
    out = np.zeros_like(s)
    m = s > 0
    out[m] = np.exp(1.0 - 1.0 / s[m])
    return out


def _mode(grid, k):
    """``sin(k x_last) e_1`` (``sin(k x_1) e_1`` in one dimension)."""
    v = np.zeros((grid.d,) + grid.shape)
    v[0] = np.sin(k * grid.x[grid.d - 1])
    return v


def _vector_preset(grid, kind, amplitude, k, band, seed):
    if kind == "zero":
        return np.zeros((grid.d,) + grid.shape)
    if kind == "mode":
        return amplitude * _mode(grid, k)
    return random_field(grid, 1, band, seed=seed, amplitude=amplitude).values


def _forcing_preset(grid, kind, amplitude, k):
    if kind == "zero" or amplitude == 0.0:
        return None
    shape = _mode(grid, k)
    if kind == "mode":
        return lambda t: amplitude * shape
    return lambda t: (amplitude * t) * shape


_CHOICES = {
    "law.name": tuple(LAW_PARAMS),
    "pressure.name": tuple(PRESSURE_PARAMS),
    "data.rho0.kind": ("constant", "bump", "random"),
    "data.g.kind": ("zero", "mode", "random"),
    "data.f.kind": ("zero", "mode", "ramp"),
}


def parse_config(text: str) -> RunConfig:
    raw, errors = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            errors.append(f"{key}: given twice")
        raw[key] = value
    values = {k: default for k, (_, default) in _FIELDS.items()}
    law_params, pressure_params = {}, {}
    for key, text_value in raw.items():
        if key in _FIELDS:
            conv = _FIELDS[key][0]
            try:
                values[key] = conv(text_value)
            except ValueError:
                errors.append(f"{key}: cannot read {text_value!r} as {conv.__name__}")
        elif key in _LAW_KEYS or key in _PRESSURE_KEYS:
            try:
                val = float(text_value)
            except ValueError:
                errors.append(f"{key}: cannot read {text_value!r} as float")
                continue
            (law_params if key.startswith("law.") else pressure_params)[key.split(".", 1)[1]] = val
        else:
            errors.append(f"{key}: unknown key")
    for key, options in _CHOICES.items():
        if values[key] not in options:
            errors.append(f"{key}: must be one of {', '.join(options)}")
    allowed = LAW_PARAMS.get(values["law.name"], ())
    errors += [f"law.{p}: not a parameter of law {values['law.name']}"
               for p in law_params if p not in allowed]
    allowed = PRESSURE_PARAMS.get(values["pressure.name"], ())
    errors += [f"pressure.{p}: not a parameter of pressure {values['pressure.name']}"
               for p in pressure_params if p not in allowed]
    d, n = values["grid.d"], values["grid.n"]
    if d not in (1, 2, 3):
        errors.append("grid.d: must be 1, 2 or 3")
    if n < 4 or n % 2:
        errors.append("grid.n: must be an even integer >= 4")
    q = values["scheme.q"]
    if d in (1, 2, 3) and not q > max(d, 1):
        errors.append(f"scheme.q: q must exceed {d}")
    if not values["scheme.dt"] > 0:
        errors.append("scheme.dt: must be positive")
    if not values["scheme.T"] > 0:
        errors.append("scheme.T: must be positive")
    elif values["scheme.dt"] > 0 and values["scheme.dt"] > values["scheme.T"]:
        errors.append("scheme.dt: must not exceed scheme.T")
    if values["scheme.k_max"] < 1:
        errors.append("scheme.k_max: must be >= 1")
    if not values["scheme.tol"] > 0:
        errors.append("scheme.tol: must be positive")
    if not 0 < values["scheme.cfl_safety"] <= 1:
        errors.append("scheme.cfl_safety: must lie in (0, 1]")
    if values["data.rho0.value"] < 0:
        errors.append("data.rho0.value: density must be non-negative")
    if values["monitor.factor"] <= 1:
        errors.append("monitor.factor: must exceed 1")
    thr = values["monitor.threshold"].strip().lower()
    if thr not in ("auto", "inf", "infinity"):
        try:
            if not float(thr) > 0:
                errors.append("monitor.threshold: must be positive")
        except ValueError:
            errors.append("monitor.threshold: expected 'auto', 'inf' or a number")
    sched = values["scheme.delta_schedule"].strip()
    if sched != "default":
        try:
            ds = [float(v) for v in sched.split(",") if v.strip()]
            if not ds or min(ds) <= 0 or any(b >= a for a, b in zip(ds, ds[1:])):
                errors.append("scheme.delta_schedule: must be positive and strictly decreasing")
        except ValueError:
            errors.append("scheme.delta_schedule: expected a comma-separated list of numbers")
    for key in ("data.rho0.band", "data.g.band"):
        if n >= 4 and not 0 < values[key] < n // 2:
            errors.append(f"{key}: must lie between 1 and n/2 - 1")
    if errors:
        raise ConfigError(errors)
    return RunConfig(values, law_params, pressure_params)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
