"""Simulation and verification laboratory for hierarchical Anderson-Bernoulli
operators on finite boxes of Z^d.

Modules:
    lattice        boxes, boundaries, cones, scale ladders
    potential      hierarchical {0,h} potentials and Bernoulli disorder
    operator       Dirichlet Hamiltonians, Green's functions, non-resonant bounds
    spectral       eigendecompositions and the matrix-analysis toolbox
    transversality cone chains, influence maxima, unique-continuation martingale
    schur          a-adic Schur-complement cascade and the Wegner martingale
    experiments    Monte-Carlo / brute-force experiment drivers
    cli            batch runner
"""

__version__ = "0.1.0"
