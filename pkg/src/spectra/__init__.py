"""Non-smooth matrix optimization with spectral descent.

Solvers for the matrix-sign family (SD, TSD, Muon, MuonW and their
weight-decay/Frank-Wolfe variants), closed-form rate constants with
brute-force certification oracles, LAD/hinge experiment problems, and
convergence diagnostics.
"""

__version__ = "0.1.0"
