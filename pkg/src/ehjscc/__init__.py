"""Charge-adaptive transmission policies for an energy-harvesting transmitter.

The package computes locally optimal transmission-power and bandwidth-mismatch
policies for lossy source transmission powered by a leaky, finite battery that
recharges from a compound Poisson energy-arrival process, together with
distortion lower bounds, derivative-free tuning of the policy constants, and an
event-driven Monte-Carlo simulator that certifies the analytic stationary law.
"""

from . import numerics, models, distortion, policy, search, simulator

__all__ = [
    "numerics",
    "models",
    "distortion",
    "policy",
    "search",
    "simulator",
]

__version__ = "0.1.0"
