"""Wrapper that pins a subset of parameters, exposing the rest for estimation."""

from __future__ import annotations

import numpy as np

from ..model_core import ModelSpec, ParamSpace


class IsolatedModel(ModelSpec):
    """Estimate only the components in ``free`` of a base model's parameter.

    Everything else is fixed at the supplied full parameter value, matching
    the isolated-estimation experiments.
    """

    def __init__(self, base: ModelSpec, theta_full, free):
        self.base = base
        self.theta_full = np.asarray(theta_full, dtype=float).copy()
        self.free = np.asarray(free, dtype=int)
        if self.free.ndim != 1 or len(set(self.free.tolist())) != self.free.size:
            raise ValueError("free must list distinct parameter indices")
        self.d = base.d
        self.m_unobs = base.m_unobs
        self.max_noise_order = base.max_noise_order
        names = tuple(base.theta_space.names[i] for i in self.free) \
            if base.theta_space.names else ()
        self.theta_space = ParamSpace(base.theta_space.lower[self.free],
                                      base.theta_space.upper[self.free], names)
        self.name = base.name + "-isolated"

    def full_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        full = self.theta_full.copy()
        full[self.free] = theta
        return full

    def a(self, theta):
        return self.base.a(self.full_theta(theta))

    def A(self, theta):
        return self.base.A(self.full_theta(theta))

    def da(self, theta):
        full = self.base.da(self.full_theta(theta))
        return None if full is None else full[self.free]

    def dA(self, theta):
        full = self.base.dA(self.full_theta(theta))
        return None if full is None else full[self.free]

    def d2a(self, theta):
        full = self.base.d2a(self.full_theta(theta))
        return None if full is None else full[np.ix_(self.free, self.free)]

    def d2A(self, theta):
        full = self.base.d2A(self.full_theta(theta))
        return None if full is None else full[np.ix_(self.free, self.free)]

    def noise_moments(self, theta, j):
        return self.base.noise_moments(self.full_theta(theta), j)

    def init_law(self, theta):
        return self.base.init_law(self.full_theta(theta))

    def observation(self):
        return self.base.observation()
