"""Two-factor Levy-driven Ornstein-Uhlenbeck short-rate model.

dm = -lambda m dt + dL1, dr = kappa (m - r) dt + dL2 with a centred symmetric
bivariate NIG driver (alpha fixed to 1, beta = 0, Delta = I); theta =
(lambda, kappa, delta).  X = (m, r) sampled on a fixed grid is affine, so the
step-noise N(t) is independent of the past and its Kronecker moments follow
from the driver cumulants by cumulant integrals with Kronecker-sum
exponentials.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from ..model_core import DiracLaw, ModelSpec, ParamSpace
from ..tensor_linalg import expm, kron_sum, unvec

__all__ = ["OUNIGModel", "ou_model", "ou_simulate", "levy_noise_moments",
           "nig_cumulants", "sample_inverse_gaussian"]


def nig_cumulants(alpha: float, delta: float, d: int = 2) -> dict[int, np.ndarray]:
    """Cumulant tensors (flattened) of a centred symmetric NIG Levy process at t=1.

    L(1) = sqrt(W) Z with W ~ IG(delta, alpha) and Z standard normal:
    kappa2 = (delta/alpha) I, kappa4_{ijkl} = (delta/alpha^3)
    (d_ij d_kl + d_ik d_jl + d_il d_jk), odd cumulants zero.
    """
    eye = np.eye(d)
    k2 = (delta / alpha) * eye
    var_w = delta / alpha**3
    k4 = var_w * (np.einsum("ij,kl->ijkl", eye, eye)
                  + np.einsum("ik,jl->ijkl", eye, eye)
                  + np.einsum("il,jk->ijkl", eye, eye))
    return {1: np.zeros(d), 2: k2.reshape(-1), 3: np.zeros(d**3), 4: k4.reshape(-1)}


def _kron_sum_power(q: np.ndarray, j: int) -> np.ndarray:
    """sum_i I x ... x Q x ... x I (j terms), so that (e^{-Qs})^{(x)j} = e^{-Q_j s}."""
    d = q.shape[0]
    out = q.copy()
    for _ in range(j - 1):
        out = kron_sum(out, q)
    return out


def levy_noise_moments(q: np.ndarray, cumulants: dict[int, np.ndarray], dt: float,
                       order: int = 4) -> dict[int, list[np.ndarray]]:
    """Kronecker moment coefficients of N = int_0^dt e^{-Q s} dL(s).

    kappa_j(N) = [Q_j^{-1} (I - e^{-Q_j dt})] kappa_j(L(1)) with Q_j the j-fold
    Kronecker sum of Q; moments from cumulants by the symmetric relations
    (odd cumulants must be zero).  Conditional moments equal unconditional
    ones, so only the constant coefficient is populated.
    """
    d = q.shape[0]
    for j in (1, 3):
        if j in cumulants and np.any(cumulants[j]):
            raise ValueError("odd driver cumulants must vanish for this model")
    kn: dict[int, np.ndarray] = {}
    for j in range(2, order + 1):
        qj = _kron_sum_power(q, j)
        integ = np.linalg.solve(qj, np.eye(d**j) - expm(-qj * dt))
        kn[j] = integ @ cumulants[j]
    out: dict[int, list[np.ndarray]] = {}
    for j in range(2, order + 1):
        coeffs = [np.zeros((d**j, d**s)) for s in range(j + 1)]
        if j == 2:
            coeffs[0] = kn[2].copy()
        elif j == 3:
            coeffs[0] = np.zeros(d**3)
        elif j == 4:
            c = unvec(kn[2], d, d)
            m4 = unvec(kn[4], d * d, d * d).reshape(d, d, d, d) \
                + np.einsum("ij,kl->ijkl", c, c) \
                + np.einsum("ik,jl->ijkl", c, c) \
                + np.einsum("il,jk->ijkl", c, c)
            coeffs[0] = m4.reshape(-1)
        out[j] = coeffs
    return out


class OUNIGModel(ModelSpec):
    """X = (m, r) with the stochastic mean m latent; theta = (lambda, kappa, delta)."""

    name = "ou-nig"
    max_noise_order = 4
    alpha = 1.0

    def __init__(self, dt: float = 1.0, x0=(0.5, 1.0)):
        self.dt = float(dt)
        self.d = 2
        self.m_unobs = 1
        self.x0 = np.asarray(x0, dtype=float)
        self.theta_space = ParamSpace(
            np.array([1e-4, 1e-4, 1e-4]),
            np.array([10.0, 10.0, 1000.0]),
            ("lambda", "kappa", "delta"),
        )

    def drift_matrix(self, theta) -> np.ndarray:
        lam, kappa, _ = np.asarray(theta, dtype=float)
        return np.array([[lam, 0.0], [-kappa, kappa]])

    def a(self, theta):
        return np.zeros(2)

    def A(self, theta):
        return expm(-self.drift_matrix(theta) * self.dt)

    def da(self, theta):
        return np.zeros((3, 2))

    def d2a(self, theta):
        return np.zeros((3, 3, 2))

    def dA(self, theta):
        out = np.zeros((3, 2, 2))
        q = self.drift_matrix(theta)
        dq = [np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [-1.0, 1.0]])]
        for j, dqj in enumerate(dq):
            out[j] = scipy.linalg.expm_frechet(-q * self.dt, -dqj * self.dt,
                                               compute_expm=False)
        return out

    def noise_moments(self, theta, j: int):
        lam, kappa, delta = np.asarray(theta, dtype=float)
        cum = nig_cumulants(self.alpha, delta, d=2)
        return levy_noise_moments(self.drift_matrix(theta), cum, self.dt, order=4)[j]

    def noise_cov_closed_form(self, theta) -> np.ndarray:
        """vec(C) = (Q (+) Q)^{-1} (I - e^{-(Q (+) Q) dt}) vec(c_L), c_L = (delta/alpha) I."""
        lam, kappa, delta = np.asarray(theta, dtype=float)
        q = self.drift_matrix(theta)
        qq = kron_sum(q, q)
        xi = np.eye(4) - expm(-qq * self.dt)
        v = np.linalg.solve(qq, xi @ ((delta / self.alpha) * np.eye(2)).reshape(-1, order="F"))
        return unvec(v, 2, 2)

    def init_law(self, theta):
        return DiracLaw(self.x0)


def ou_model(dt: float = 1.0, isolate: str | None = None, theta=None, **kwargs) -> ModelSpec:
    """Full 3-parameter OU-NIG model, or an isolated single-parameter variant."""
    from .isolated import IsolatedModel

    base = OUNIGModel(dt=dt, **kwargs)
    if isolate is None:
        return base
    names = base.theta_space.names
    if isolate not in names:
        raise ValueError(f"unknown parameter {isolate!r}")
    theta = np.asarray(theta if theta is not None else [1.0, 0.5, 3.0], dtype=float)
    return IsolatedModel(base, theta, [names.index(isolate)])


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def sample_inverse_gaussian(mean, shape, rng, size) -> np.ndarray:
    """IG(mean, shape) draws by the transformation method with a uniform flip."""
    nu = rng.standard_normal(size) ** 2
    y = mean + mean**2 * nu / (2.0 * shape) \
        - mean / (2.0 * shape) * np.sqrt(4.0 * mean * shape * nu + mean**2 * nu**2)
    u = rng.uniform(size=size)
    take_y = u <= mean / (mean + y)
    return np.where(take_y, y, mean**2 / y)


def ou_simulate(theta, T: int, dt: float = 1.0, inner_mesh: float = 1.0 / 5000.0,
                seed=None, n_paths: int = 1, x0=(0.5, 1.0), rng=None,
                chunk: int = 512):
    """Simulate the sampled OU-NIG state at observation times 1..T.

    The stochastic-integral representation is discretised by a left-point
    Euler rule on a mesh of ``inner_mesh``; NIG increments are sampled as
    sqrt(W) Z with W inverse-Gaussian.  Returns (n_paths, T, 2), squeezed for
    one path.
    """
    lam, kappa, delta = np.asarray(theta, dtype=float)
    alpha = OUNIGModel.alpha
    if rng is None:
        rng = np.random.default_rng(np.random.PCG64(seed))
    q = np.array([[lam, 0.0], [-kappa, kappa]])
    n_inner = int(round(dt / inner_mesh))
    h = dt / n_inner
    eqh = expm(-q * h)
    # weights e^{-Q h (M - n)} for the left-point increment at substep n
    weights = np.empty((n_inner, 2, 2))
    weights[n_inner - 1] = eqh
    for n in range(n_inner - 2, -1, -1):
        weights[n] = eqh @ weights[n + 1]
    x = np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    out = np.empty((n_paths, T, 2))
    ig_mean = delta * h / alpha
    ig_shape = (delta * h) ** 2
    step_A = np.linalg.matrix_power(eqh, n_inner)
    for start in range(0, T, chunk):
        stop = min(start + chunk, T)
        nt = stop - start
        w = sample_inverse_gaussian(ig_mean, ig_shape, rng, (n_paths, nt, n_inner))
        z = rng.standard_normal((n_paths, nt, n_inner, 2))
        dl = np.sqrt(w)[..., None] * z
        noise = np.einsum("mij,btmj->bti", weights, dl)
        for t in range(nt):
            x = x @ step_A.T + noise[:, t]
            out[:, start + t] = x
    return out[0] if n_paths == 1 else out
