"""
Nonlinear elliptic solves
=========================

-div S(u) = f is rewritten around the Lame operator and iterated.  We
watch the contraction, compare with the smallness certificate and look at
the 1D estimate, where the (eps^2)^(1-p) constant turns out to be too optimistic.
"""
import numpy as np

from nnflow.constitutive import div_stress, newtonian, power_law
from nnflow.elliptic import certify_smallness, solve, verify_1d_estimate, verify_h2_estimate
from nnflow.lame import LameParameter
from nnflow.torus import TorusField, TorusGrid, random_field

g = TorusGrid(3, 32)
law = power_law(mu0=1.0, eps=0.05, r=1.0)

# manufactured solution: pick u*, compute f from it, solve back
u_star = np.zeros((3,) + g.shape)
u_star[0] = np.sin(g.x[0])
f = -div_stress(law, TorusField(g, u_star))
rep = solve(law, f, tol=1e-12)
print("iterations", rep.iterations, "error", np.linalg.norm(rep.u.values - u_star) / np.linalg.norm(u_star))
print("contraction ratios", np.round(rep.contraction_ratios(), 4))

cert = certify_smallness(law, LameParameter(0.0), 2, 1.0)
print(f"smallness: delta={cert.delta_contraction:.3f} certified={cert.certified}")
# the constant 15 is loose; the iteration contracts far better than delta suggests

chk = verify_h2_estimate(law, f, rep)
print(f"H2 estimate: {chk.lhs:.4g} <= {chk.rhs:.4g}: {chk.satisfied}")

# 1D: with mu = 0.1 the solution has u_xx = -10 f, so int |u_xx|^2 = 100 int |f|^2
g1 = TorusGrid(1, 256)
f1 = TorusField(g1, np.sin(g1.x[0]))
chk = verify_1d_estimate(newtonian(0.1, 0.0), f1, 2)
print(f"1D, mu=0.1: lhs {chk.lhs:.4g}, rhs {chk.rhs:.4g}, {chk.note}")

# a shear-thickening law with random data sits between the two bounds
law1 = power_law(mu0=0.1, eps=1.0, r=1.0)
f1 = random_field(g1, 0, 16, seed=1)
f1 = f1 * (1 / np.sqrt(np.mean(f1.values**2)))
for p in (2, 3):
    chk = verify_1d_estimate(law1, f1, p)
    print(f"1D, mu=0.1+s, p={p}: lhs {chk.lhs:.4g}, rhs {chk.rhs:.4g}, {chk.note}")
