"""Numerical laboratory for compressible non-Newtonian Navier-Stokes with vacuum."""
