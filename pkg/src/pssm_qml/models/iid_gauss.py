"""I.i.d. Gaussian location-scale model, the fully-observed oracle chain.

X(t) = mu + N(t), N(t) ~ N(0, sigma^2 I_d) i.i.d.; theta = (mu_1..mu_d[, sigma2]).
Classical closed forms (theta_hat = sample mean, W = -1/sigma^2, U = 1/sigma^2,
V = sigma^2 per component) make this the reference chain for the whole stack.
"""

from __future__ import annotations

import numpy as np

from ..model_core import GaussianLaw, DiracLaw, ModelSpec, ParamSpace, gaussian_kron_moments


class IIDGaussModel(ModelSpec):
    """d-dimensional i.i.d. Gaussian observations with unknown mean.

    With ``estimate_variance`` the last parameter is the common variance
    sigma2; otherwise sigma2 is fixed.
    """

    max_noise_order = 4
    name = "iid-gauss"

    def __init__(self, d: int = 1, sigma2: float = 1.0, estimate_variance: bool = False,
                 mean_bounds: tuple[float, float] = (-10.0, 10.0),
                 var_bounds: tuple[float, float] = (1e-4, 100.0),
                 init: str = "stationary"):
        self.d = d
        self.m_unobs = 0
        self.sigma2 = float(sigma2)
        self.estimate_variance = estimate_variance
        self._init = init
        lo = [mean_bounds[0]] * d
        hi = [mean_bounds[1]] * d
        names = [f"mu{i+1}" for i in range(d)]
        if estimate_variance:
            lo.append(var_bounds[0])
            hi.append(var_bounds[1])
            names.append("sigma2")
        self.theta_space = ParamSpace(np.array(lo), np.array(hi), tuple(names))

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        mu = theta[: self.d]
        s2 = theta[self.d] if self.estimate_variance else self.sigma2
        return mu, s2

    def a(self, theta):
        mu, _ = self._split(theta)
        return mu.copy()

    def A(self, theta):
        return np.zeros((self.d, self.d))

    def da(self, theta):
        k = self.theta_space.k
        out = np.zeros((k, self.d))
        out[: self.d] = np.eye(self.d)
        return out

    def dA(self, theta):
        return np.zeros((self.theta_space.k, self.d, self.d))

    def d2a(self, theta):
        k = self.theta_space.k
        return np.zeros((k, k, self.d))

    def d2A(self, theta):
        k = self.theta_space.k
        return np.zeros((k, k, self.d, self.d))

    def noise_moments(self, theta, j: int):
        _, s2 = self._split(theta)
        d = self.d
        moments = gaussian_kron_moments(np.zeros(d), s2 * np.eye(d), j)
        coeffs = [np.zeros((d**j, d**s)) for s in range(j + 1)]
        coeffs[0] = moments[j - 1]
        return coeffs

    def init_law(self, theta):
        mu, s2 = self._split(theta)
        if self._init == "stationary":
            return GaussianLaw(mu, s2 * np.eye(self.d))
        return DiracLaw(mu)
