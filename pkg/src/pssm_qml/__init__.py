"""Gaussian quasi-maximum-likelihood estimation for partially observed
polynomial state space models: moment machinery, Kalman quasi-likelihood,
score/Fisher recursions, asymptotic covariances (empirical and explicit),
hypothesis tests, and reference Heston / Levy-OU models with simulators."""

__version__ = "0.1.0"
