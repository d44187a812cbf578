"""Surrogate-based global optimization toolkit.

Ordinary Kriging, gradient-enhanced Kriging (direct and indirect), and a
primal-dual aggregation surrogate that blends a Kriging model with a
nearest-gradient-sample Taylor model, driven by an expected-improvement
optimization loop with constraint penalties.
"""

__version__ = "0.1.0"
