"""Brownian motion under time-dependent Riemannian metrics.

Simulation of the metric-clock diffusion in explicit charts, the moving
parallel / damped / variation / reaction transports along its paths, and a
Monte Carlo estimator layer validated against spectral and closed-form PDE
oracles (Ricci-flow spheres, the cigar soliton, conformal torus flows).
"""

__version__ = "0.1.0"
