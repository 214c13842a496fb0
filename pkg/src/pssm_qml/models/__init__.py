"""Concrete model specifications and simulators."""

from .iid_gauss import IIDGaussModel
from .isolated import IsolatedModel
from .heston import HestonModel, heston_model, heston_simulate
from .ou_nig import OUNIGModel, ou_model, ou_simulate, levy_noise_moments, nig_cumulants

__all__ = [
    "IIDGaussModel",
    "IsolatedModel",
    "HestonModel",
    "heston_model",
    "heston_simulate",
    "OUNIGModel",
    "ou_model",
    "ou_simulate",
    "levy_noise_moments",
    "nig_cumulants",
]
