"""Numerical solvers for relative-arbitrage portfolio games.

Submodules:
  model        scenario configuration, validation, market oracles
  engine       N-particle / mean-field simulation, deflator, benchmark
  measure      empirical measures and Wasserstein diagnostics
  arbitrage    optimal initial proportion (Monte Carlo and finite differences), Fichera test
  nash         N-player Nash equilibrium by damped fixed point
  mfg          mean-field equilibrium with common noise
  convergence  large-population limit checks
  cli          scenario-driven command line
"""

__version__ = "0.1.0"
