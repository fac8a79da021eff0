"""
Constitutive laws and the Lame reference operator
=================================================

Certify a few viscosity laws, look at the constants that control the
fixed-point solver, and check the monotonicity of the stress numerically.
"""
import numpy as np

from nnflow.constitutive import CertificationError, certify, coercivity_gap, newtonian, p_delta, power_law
from nnflow.lame import LameParameter, measured_operator_norm, riesz_constants
from nnflow.torus import TorusGrid, random_field

# certification scans mu(s), mu + 2 s mu', lam(r), lam + r lam' on a finite grid
for law in (newtonian(1.0, 0.0), p_delta(0.1, 4.0), power_law(mu0=1.0, eps=0.05, r=1.0)):
    e = certify(law)
    print(f"{law.name:10s} eps_mu={e.eps_mu_1:.3g}/{e.eps_mu_2:.3g}  "
          f"eps_lambda={e.eps_lambda_1:.3g}/{e.eps_lambda_2:.3g}")

# a negative bulk viscosity breaks the sum condition; the report names the witness
try:
    certify(newtonian(1.0, -1.0))
except CertificationError as exc:
    for ineq, value, where in exc.violations:
        print("violated:", ineq, value, where)

# Lame constants from Riesz-transform bounds vs what random data actually produce
param = LameParameter(0.0)
for p in (2, 3, 4):
    c = riesz_constants(p, 3, param)
    m = measured_operator_norm(param, p, trials=10, grid=TorusGrid(3, 16), band=3)
    print(f"p={p}: C_total={c.C_total:g}  C1={c.C1:g}  measured {m:.3f}")

# the stress operator is monotone: J >= eps_mu |grad w|^2 + ... for w = u - v
g = TorusGrid(3, 16)
law = p_delta(0.1, 4.0)
rng = np.random.Generator(np.random.Philox(0))
gaps = [coercivity_gap(law, random_field(g, 1, 3, rng=rng), random_field(g, 1, 3, rng=rng))
        for _ in range(5)]
print("J - bound:", ["%.3g" % (J - b) for J, b in gaps])
