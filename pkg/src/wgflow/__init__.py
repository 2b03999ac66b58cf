"""Lagrangian discretizations of L2-Wasserstein gradient flows.

Modules:
    core         mass grids, Lagrangian states, exact 1D Wasserstein distance
    functionals  discrete energies, gradients, Hessians, fourth-order surrogates
    jko1d        implicit-Euler minimizing-movement stepping in 1D
    blob         deterministic particle method for aggregation-diffusion
    fdks         finite-difference Keller-Segel scheme with contraction checks
    mesh2d       moving-triangle-mesh scheme on the unit square
    analytic     closed-form reference solutions (Barenblatt profiles)
    cli          configuration-driven experiment runner
"""

__version__ = "0.1.0"
