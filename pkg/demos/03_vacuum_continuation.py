"""
Vacuum and the delta -> 0 limit
===============================

The density is a smooth bump that vanishes on half the torus.  Each run
lifts it by delta, iterates the linearised stages to a fixed point, and we
watch consecutive runs approach each other as delta shrinks.
"""
import numpy as np

from nnflow.constitutive import make_pressure, power_law
from nnflow.monitors import pde_residuals
from nnflow.scheme import ProblemData, SchemeConfig, continuation_in_delta
from nnflow.torus import TorusField, TorusGrid

g = TorusGrid(2, 32)
s = np.sin(g.x[0])
rho0 = np.where(s > 0, np.exp(1 - 1 / np.where(s > 0, s, 1.0)), 0.0)
gv = np.zeros((2,) + g.shape)
gv[0] = np.sin(g.x[1])
data = ProblemData(TorusField(g, rho0), TorusField(g, gv), T=0.1)

law = power_law(mu0=1.0, eps=0.05, r=1.0)
pressure = make_pressure("linear", kappa=1.0)
cont = continuation_in_delta(data, law, pressure, [1e-2, 5e-3, 2.5e-3, 1.25e-3],
                             SchemeConfig(dt=0.01, tol=1e-9))
print(cont.report())

final = cont.final
print("iterations per delta:", [r.iterations for r in cont.results])
print("horizon reached:", final.T_star)
# runs shorten their horizon when transport of the thin layer drives rho negative
for r in cont.results:
    for ev in r.trace.restarts:
        print(f"  delta={r.trace.delta:.2e}: {ev['kind']} at t={ev['t']:.3g}")

cont_res, mom_res = pde_residuals(law, pressure, final.rho, final.u)
print("continuity residual", np.round(cont_res, 6))
print("momentum residual  ", np.round(mom_res, 6))
mon = final.monitors
print("sup Phi", mon.sup()["Phi"], " min rho", mon["min_rho"].min())
