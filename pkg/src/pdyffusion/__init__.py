"""PDYffusion: PDE-regularized dynamics-informed diffusion forecasting.

Desk-scale pipeline: a PDE-regularized interpolator, a UKF-based
forecaster, cold-sampling inference, synthetic dynamical datasets,
probabilistic metrics, and a numerical verification suite.
"""

__version__ = "0.1.0"
