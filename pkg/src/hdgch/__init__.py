"""HDG solver for the convective Cahn-Hilliard equation.

Piecewise P^(k+1) scalars, [P^k]^2 fluxes and P^k face traces, first-order
convex-splitting time integration with explicit convection, and static
condensation to a symmetric trace system solved by MINRES.
"""

__version__ = "0.1.0"
