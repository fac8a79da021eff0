"""
Blow-up watchdog and twin runs
==============================

Ramp the forcing until the Phi functional escapes its threshold, then
perturb the forcing slightly and compare two otherwise identical runs.
"""
import numpy as np

from nnflow.constitutive import make_pressure, power_law
from nnflow.scheme import ProblemData, SchemeConfig, picard, twin_run
from nnflow.torus import TorusField, TorusGrid

g = TorusGrid(2, 16)
law = power_law(mu0=1.0, eps=0.05, r=1.0)
pressure = make_pressure("linear", kappa=1.0)
mode = np.zeros((2,) + g.shape)
mode[0] = np.sin(g.x[1])
rho0 = TorusField(g, np.ones(g.shape))

cfg = SchemeConfig(dt=0.01, watchdog_factor=10.0, tol=1e-8)
for amp in (0.0, 50.0, 100.0, 200.0):
    f = (lambda t, a=amp: a * t * mode) if amp else None
    res = picard(ProblemData(rho0, TorusField.zeros(g, 1), f, T=1.0), 1e-2, law, pressure, cfg)
    print(f"amplitude {amp:5.0f}: trigger {res.trace.trigger_time}, kept horizon {res.T_star:.2f}")

# twins: forcing scaled by 1 + eps, for two eps a decade apart
x1, x2 = g.x
gv = np.stack([0.5 * np.cos(x2), np.sin(x1)])


def data(scale):
    return ProblemData(TorusField(g, 1 + 0.2 * np.sin(x1)), TorusField(g, gv),
                       lambda t: scale * mode, T=0.2)


cfg = SchemeConfig(dt=0.01, tol=1e-10)
print("identical data identical:", twin_run(data(1.0), data(1.0), 1e-2, law, pressure, cfg).identical)
for eps in (1e-2, 1e-3):
    rep = twin_run(data(1.0), data(1 + eps), 1e-2, law, pressure, cfg)
    print(f"eps={eps:g}: max divergence {rep.max_divergence:.3e}, per unit data {rep.ratio:.3f}")
