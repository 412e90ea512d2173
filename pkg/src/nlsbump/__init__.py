"""Multi-bump bound states of the semiclassical nonlinear Schrodinger
equation: radial profiles, multi-well potentials, grid operators, a
Newton-Krylov solver, and asymptotic diagnostics."""

__version__ = "0.1.0"
