import numpy as np
import pytest

from pssm_qml.model_core import (
    DiracLaw,
    GaussianLaw,
    ModelSpec,
    ParamSpace,
    gaussian_kron_moments,
)


class LinearGaussianModel(ModelSpec):
    """Test helper: X(t) = a + A X(t-1) + N, N ~ N(0, C) i.i.d.

    theta parametrizes nothing unless suppliers are overridden; the default
    exposes a dummy scalar parameter so the interfaces stay exercised.
    """

    name = "test-linear-gauss"
    max_noise_order = 4

    def __init__(self, a, A, C, init=None, m_unobs=0):
        self._a = np.asarray(a, dtype=float).reshape(-1)
        self._A = np.atleast_2d(np.asarray(A, dtype=float))
        self._C = np.atleast_2d(np.asarray(C, dtype=float))
        self.d = self._a.size
        self.m_unobs = m_unobs
        self._init = init or GaussianLaw(np.zeros(self.d), self._C)
        self.theta_space = ParamSpace(np.array([-1.0]), np.array([1.0]), ("dummy",))

    def a(self, theta):
        return self._a.copy()

    def A(self, theta):
        return self._A.copy()

    def noise_moments(self, theta, j):
        moments = gaussian_kron_moments(np.zeros(self.d), self._C, j)
        out = [np.zeros((self.d**j, self.d**s)) for s in range(j + 1)]
        out[0] = moments[j - 1]
        return out

    def init_law(self, theta):
        return self._init


class ScalarQuadNoiseModel(ModelSpec):
    """Scalar chain with state-dependent noise N | x ~ N(0, q0 + q1 x + q2 x^2)."""

    name = "test-quad-noise"
    max_noise_order = 4

    def __init__(self, a=0.3, A=0.5, q=(1.0, 0.2, 0.1), x0=0.7):
        self._a, self._A = float(a), float(A)
        self.q = np.asarray(q, dtype=float)
        self.d = 1
        self.m_unobs = 0
        self.x0 = x0
        self.theta_space = ParamSpace(np.array([-1.0]), np.array([1.0]), ("dummy",))

    def a(self, theta):
        return np.array([self._a])

    def A(self, theta):
        return np.array([[self._A]])

    def variance(self, x):
        return self.q[0] + self.q[1] * x + self.q[2] * x * x

    def noise_moments(self, theta, j):
        q0, q1, q2 = self.q
        if j == 2:
            return [np.array([q0]), np.array([[q1]]), np.array([[q2]])]
        if j == 3:
            return [np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))]
        if j == 4:
            # E[N^4 | x] = 3 (q0 + q1 x + q2 x^2)^2
            c = 3.0 * np.array([
                q0 * q0,
                2 * q0 * q1,
                q1 * q1 + 2 * q0 * q2,
                2 * q1 * q2,
                q2 * q2,
            ])
            return [np.array([c[0]]), np.array([[c[1]]]), np.array([[c[2]]]),
                    np.array([[c[3]]]), np.array([[c[4]]])]
        raise ValueError(j)

    def init_law(self, theta):
        return DiracLaw(np.array([self.x0]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
