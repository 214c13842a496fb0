"""Parametric polynomial state space models and their moment machinery.

A model is X(t) = a(theta) + A(theta) X(t-1) + N(t) with conditional noise
moments E[N(t)^{(x)j} | X(t-1)=x] that are polynomials of degree <= j in x.
From that data this module builds stacked Kronecker transitions up to order 4,
conditional/unconditional moment paths, time-varying noise covariances C(t),
stationary moments, and finite-difference parameter jets.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .tensor_linalg import spectral_radius, stacked_kron, stacked_len, unvec

__all__ = [
    "ParamSpace",
    "DiracLaw",
    "GaussianLaw",
    "ModelSpec",
    "observation_matrix",
    "NoiseSpec",
    "EmbeddedNoise",
    "Chain",
    "chain_of",
    "MomentMap",
    "TransitionOrderR",
    "transition_order_r",
    "moment_path",
    "unconditional_moments",
    "noise_cov",
    "stationary_moments",
    "param_jet",
    "ModelAtTheta",
    "validate_model",
    "gaussian_kron_moments",
]

_MACHEPS = float(np.finfo(float).eps)
_REDUCED_DIRECT_LIMIT = 4096


# ---------------------------------------------------------------------------
# parameter box and initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpace:
    """Compact box of admissible parameters."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise ValueError("parameter box must be two equal-length vectors")
        if not np.all(lo < hi):
            raise ValueError("parameter box requires lower < upper elementwise")

    @property
    def k(self) -> int:
        return self.lower.size

    def contains(self, theta, atol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - atol) and np.all(theta <= self.upper + atol))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)


def gaussian_kron_moments(mean: np.ndarray, cov: np.ndarray, r: int) -> list[np.ndarray]:
    """Raw Kronecker moments [E X, E X@X, ...] of a Gaussian, orders 1..r (Isserlis)."""
    mu = np.asarray(mean, dtype=float).reshape(-1)
    c = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mu.size
    # central moments as tensors
    central = {0: np.ones(()), 1: np.zeros((d,)), 2: c.copy()}
    if r >= 3:
        central[3] = np.zeros((d, d, d))
    if r >= 4:
        t4 = np.zeros((d, d, d, d))
        t4 += np.einsum("ij,kl->ijkl", c, c)
        t4 += np.einsum("ik,jl->ijkl", c, c)
        t4 += np.einsum("il,jk->ijkl", c, c)
        central[4] = t4
    if r > 4:
        raise ValueError("Gaussian moments implemented up to order 4")
    out = []
    for ell in range(1, r + 1):
        m = np.zeros((d,) * ell)
        out_idx = "".join(chr(ord("a") + q) for q in range(ell))
        for zset in itertools.product([0, 1], repeat=ell):
            p = sum(zset)
            if p % 2 == 1:
                continue
            # central moment at the Z positions, mu factors elsewhere
            operands, lhs = [], []
            if p > 0:
                operands.append(central[p])
                lhs.append("".join(chr(ord("a") + q) for q in range(ell) if zset[q]))
            for q in range(ell):
                if not zset[q]:
                    operands.append(mu)
                    lhs.append(chr(ord("a") + q))
            m = m + np.einsum(",".join(lhs) + "->" + out_idx, *operands)
        out.append(m.reshape(-1))
    return out


@dataclass(frozen=True)
class DiracLaw:
    """Deterministic initial state."""

    x0: np.ndarray

    def mean(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float).reshape(-1)

    def cov(self) -> np.ndarray:
        d = self.mean().size
        return np.zeros((d, d))

    def stacked_moments(self, r: int) -> list[np.ndarray]:
        x = self.mean()
        s = stacked_kron(x, r)
        d = x.size
        out, pos = [], 0
        for ell in range(1, r + 1):
            out.append(s[pos:pos + d**ell].copy())
            pos += d**ell
        return out


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian initial state; higher moments via Isserlis."""

    mu: np.ndarray
    sigma: np.ndarray

    def mean(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float).reshape(-1)

    def cov(self) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.sigma, dtype=float))

    def stacked_moments(self, r: int) -> list[np.ndarray]:
        return gaussian_kron_moments(self.mean(), self.cov(), r)


# ---------------------------------------------------------------------------
# model interface
# ---------------------------------------------------------------------------

def observation_matrix(d: int, m_unobs: int) -> np.ndarray:
    """Selector H of the observed components m_unobs..d-1 (x_o = H x)."""
    if not 0 <= m_unobs < d:
        raise ValueError("need 0 <= m_unobs < d")
    h = np.zeros((d - m_unobs, d))
    h[np.arange(d - m_unobs), np.arange(m_unobs, d)] = 1.0
    return h


class ModelSpec(ABC):
    """Capability interface each concrete model supplies.

    Concrete models define dimensions, the parameter box, the transition pair
    (a, A), conditional noise-moment coefficients up to order 2 or 4, and the
    initial law.  Analytic derivative suppliers are optional; finite
    differences are used otherwise.
    """

    d: int
    m_unobs: int
    theta_space: ParamSpace
    max_noise_order: int = 4
    name: str = "model"

    @property
    def k(self) -> int:
        return self.theta_space.k

    @property
    def observed_dim(self) -> int:
        return self.d - self.m_unobs

    @abstractmethod
    def a(self, theta) -> np.ndarray:
        ...

    @abstractmethod
    def A(self, theta) -> np.ndarray:
        ...

    @abstractmethod
    def noise_moments(self, theta, j: int) -> list[np.ndarray]:
        """Coefficients [Q_j[0], ..., Q_j[j]] of E[N^{(x)j} | X=x], Q_j[s]: (d^j, d^s)."""

    @abstractmethod
    def init_law(self, theta):
        ...

    # optional analytic derivative hooks -----------------------------------
    def da(self, theta):
        return None

    def dA(self, theta):
        return None

    def d2a(self, theta):
        return None

    def d2A(self, theta):
        return None

    def observation(self) -> np.ndarray:
        return observation_matrix(self.d, self.m_unobs)


# ---------------------------------------------------------------------------
# noise-moment containers and chains
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    """Dense conditional Kronecker noise moments of one chain."""

    d: int
    coeffs: dict[int, list[np.ndarray]]

    @property
    def max_order(self) -> int:
        return max(self.coeffs) if self.coeffs else 1

    def coeff(self, j: int, s: int) -> np.ndarray:
        return self.coeffs[j][s]

    def available(self, j: int) -> bool:
        return j in self.coeffs


@dataclass
class EmbeddedNoise:
    """Noise (N, 0, ..., 0) of an augmented chain, N from a base chain.

    Conditional moments depend only on the leading ``base.d`` components of
    the augmented state; all other blocks of the moment tensors are zero.
    """

    base: NoiseSpec
    dim: int

    @property
    def d(self) -> int:
        return self.dim

    @property
    def max_order(self) -> int:
        return self.base.max_order

    def available(self, j: int) -> bool:
        return self.base.available(j)


@dataclass
class Chain:
    """Order-1 transition data of a (possibly augmented) polynomial chain."""

    a: np.ndarray
    A: np.ndarray
    noise: NoiseSpec | EmbeddedNoise

    @property
    def d(self) -> int:
        return self.a.size


def chain_of(model: ModelSpec, theta) -> Chain:
    theta = np.asarray(theta, dtype=float)
    coeffs = {}
    for j in range(2, model.max_noise_order + 1):
        coeffs[j] = [np.asarray(q, dtype=float) for q in model.noise_moments(theta, j)]
    return Chain(
        a=np.asarray(model.a(theta), dtype=float).reshape(-1),
        A=np.atleast_2d(np.asarray(model.A(theta), dtype=float)),
        noise=NoiseSpec(d=model.d, coeffs=coeffs),
    )


# ---------------------------------------------------------------------------
# reduced symmetric-monomial index maps
# ---------------------------------------------------------------------------

class _ReducedBasis:
    """Index maps between Kronecker slots of x^{(x)ell} and sorted monomials."""

    def __init__(self, dim: int, r: int):
        self.dim = dim
        self.r = r
        self.mon_ids: list[dict] = []          # per ell: sorted index tuple -> id
        self.full_to_red: list[np.ndarray] = []  # per ell: (dim^ell,) int
        self.counts: list[np.ndarray] = []
        self.offsets = [0]
        for ell in range(1, r + 1):
            mons = list(itertools.combinations_with_replacement(range(dim), ell))
            ids = {m: i for i, m in enumerate(mons)}
            grid = np.indices((dim,) * ell).reshape(ell, -1)
            sorted_idx = np.sort(grid, axis=0)
            f2r = np.array([ids[tuple(col)] for col in sorted_idx.T], dtype=np.int64)
            self.mon_ids.append(ids)
            self.full_to_red.append(f2r)
            self.counts.append(np.bincount(f2r, minlength=len(mons)).astype(float))
            self.offsets.append(self.offsets[-1] + len(mons))

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def reduce(self, m_stack: list[np.ndarray]) -> np.ndarray:
        """Average equivalent Kronecker slots into reduced coordinates."""
        out = []
        for ell, m in enumerate(m_stack, start=1):
            f2r = self.full_to_red[ell - 1]
            out.append(np.bincount(f2r, weights=m, minlength=self.counts[ell - 1].size)
                       / self.counts[ell - 1])
        return np.concatenate(out)

    def expand(self, red: np.ndarray) -> list[np.ndarray]:
        out = []
        for ell in range(1, self.r + 1):
            seg = red[self.offsets[ell - 1]:self.offsets[ell]]
            out.append(seg[self.full_to_red[ell - 1]])
        return out


# ---------------------------------------------------------------------------
# the one-step stacked-moment map
# ---------------------------------------------------------------------------

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class MomentMap:
    """One-step map m -> E[vec_r X(t) | moments m of X(t-1)] for one chain.

    The map is applied structurally: the stacked transition A_r is never
    materialized.  Stacked moments are lists [m_1, ..., m_r] of flat arrays
    (an optional trailing batch axis is supported).
    """

    def __init__(self, chain: Chain, r: int):
        if r < 1 or r > 4:
            raise ValueError("stacked moment order must be in 1..4")
        for j in range(2, r + 1):
            if not chain.noise.available(j):
                raise ValueError(f"noise moments of order {j} unavailable for order-{r} map")
        self.chain = chain
        self.r = r
        self.D = chain.d
        base = chain.noise.base if isinstance(chain.noise, EmbeddedNoise) else chain.noise
        self._base_noise = base
        self._embedded = isinstance(chain.noise, EmbeddedNoise)
        self._terms = {ell: self._enumerate_terms(ell) for ell in range(1, r + 1)}

    def _enumerate_terms(self, ell: int):
        """All position-tag assignments ('a' | 'x' | noise-group) of length ell."""
        terms = []
        for tags in itertools.product("axN", repeat=ell):
            p = tags.count("N")
            if p == 1:
                continue  # E[N | x] = 0
            terms.append(tags)
        return terms

    def _apply_term(self, tags, m_stack, batch: bool):
        """One multinomial term of E[(a + Ax + N)^{(x)ell} | moments]."""
        chain, D = self.chain, self.D
        d = self._base_noise.d
        ell = len(tags)
        npos_x = [q for q, t in enumerate(tags) if t == "x"]
        npos_a = [q for q, t in enumerate(tags) if t == "a"]
        npos_g = [q for q, t in enumerate(tags) if t == "N"]
        p = len(npos_g)
        out = None
        s_values = range(p + 1) if p else [None]
        for s in s_values:
            u = len(npos_x) + (s or 0)
            has_batch = batch and u > 0
            # subscripts: row letters per position, column letters per consumed x
            row = {q: _LETTERS[q] for q in range(ell)}
            col_letters = _LETTERS[ell:ell + u]
            operands, lhs = [], []
            for i, q in enumerate(npos_x):
                operands.append(chain.A)
                lhs.append(row[q] + col_letters[i])
            for q in npos_a:
                operands.append(chain.a)
                lhs.append(row[q])
            if p:
                qcoef = self._base_noise.coeff(p, s)
                operands.append(qcoef.reshape((d,) * p + (d,) * s))
                lhs.append("".join(row[q] for q in npos_g) + col_letters[len(npos_x):])
            if u:
                m_u = m_stack[u - 1]
                shape = (D,) * u + (m_u.shape[-1:] if batch else ())
                mu_arr = m_u.reshape(shape)
                if p and s:
                    # the noise group consumes base-model components only
                    slicer = tuple(slice(0, d) for _ in range(len(npos_x), u))
                    mu_arr = mu_arr[(slice(None),) * len(npos_x) + slicer]
                operands.append(mu_arr)
                lhs.append(col_letters + ("..." if batch else ""))
            out_sub = "".join(row[q] for q in range(ell)) + ("..." if has_batch else "")
            val = np.einsum(",".join(lhs) + "->" + out_sub, *operands)
            if batch and not has_batch:
                val = val[..., None]
            if p and self._embedded:
                # zero-pad the noise axes from base dim d to D
                padded_shape = list(val.shape)
                for q in npos_g:
                    padded_shape[q] = D
                padded = np.zeros(padded_shape)
                idx = tuple(slice(0, d) if q in npos_g else slice(None)
                            for q in range(ell)) + ((slice(None),) if batch else ())
                padded[idx] = val
                val = padded
            out = val if out is None else out + val
        tail = out.shape[ell:]
        return out.reshape((D**ell,) + tail)

    def step(self, m_stack: list[np.ndarray]) -> list[np.ndarray]:
        """Apply the one-step conditional stacked-moment map."""
        batch = m_stack[0].ndim > 1
        out = []
        for ell in range(1, self.r + 1):
            acc = None
            for tags in self._terms[ell]:
                val = self._apply_term(tags, m_stack, batch)
                acc = val if acc is None else acc + val
            out.append(acc)
        return out

    # ------------------------------------------------------------------
    def const_part(self) -> list[np.ndarray]:
        """a_r: the value of the map at zero moments (constant of the affine map)."""
        zeros = [np.zeros(self.D**ell) for ell in range(1, self.r + 1)]
        return self.step(zeros)

    def apply_linear(self, m_stack: list[np.ndarray]) -> list[np.ndarray]:
        """A_r applied to a stacked vector (map minus its constant part)."""
        full = self.step(m_stack)
        const = self.const_part()
        if m_stack[0].ndim > 1:
            return [f - c[:, None] for f, c in zip(full, const)]
        return [f - c for f, c in zip(full, const)]

    def dense_transition(self) -> tuple[np.ndarray, np.ndarray]:
        """Materialized (a_r, A_r); only for small total dimension."""
        n = stacked_len(self.D, self.r)
        if n > 20000:
            raise ValueError("stacked transition too large to materialize")
        a_r = np.concatenate(self.const_part())
        cols = []
        eye = np.eye(n)
        for i in range(n):
            m = self._split(eye[:, i])
            cols.append(np.concatenate(self.apply_linear(m)))
        return a_r, np.column_stack(cols)

    def _split(self, flat: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for ell in range(1, self.r + 1):
            out.append(flat[pos:pos + self.D**ell])
            pos += self.D**ell
        return out

    # ------------------------------------------------------------------
    def reduced_basis(self) -> _ReducedBasis:
        if not hasattr(self, "_rb"):
            self._rb = _ReducedBasis(self.D, self.r)
        return self._rb

    def reduced_affine(self, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """(c, T) with red' = T red + c in reduced symmetric-monomial coordinates."""
        rb = self.reduced_basis()
        n = rb.size
        c = rb.reduce(self.const_part())
        t_mat = np.empty((n, n))
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            block = np.zeros((n, stop - start))
            block[np.arange(start, stop), np.arange(stop - start)] = 1.0
            m_stack = [seg[rb.full_to_red[ell - 1]]
                       for ell, seg in enumerate(self._segments(block), start=1)]
            out = self.apply_linear(m_stack)
            red = np.concatenate([
                np.vstack([np.bincount(rb.full_to_red[ell - 1], weights=out[ell - 1][:, b],
                                       minlength=rb.counts[ell - 1].size)
                           for b in range(stop - start)]).T / rb.counts[ell - 1][:, None]
                for ell in range(1, self.r + 1)
            ])
            t_mat[:, start:stop] = red
        return c, t_mat

    def _segments(self, red_block: np.ndarray):
        rb = self.reduced_basis()
        for ell in range(1, self.r + 1):
            yield red_block[rb.offsets[ell - 1]:rb.offsets[ell]]

    # ------------------------------------------------------------------
    def stationary(self, tol: float = 1e-12, max_iter: int = 200000) -> list[np.ndarray]:
        """Stationary stacked moments: fixed point m = a_r + A_r m.

        Orders 1 and 2 are solved directly; orders 3 and 4 directly in the
        reduced basis when small enough, by fixed-point iteration otherwise.
        """
        D = self.D
        a = self.chain.a
        A = self.chain.A
        rho = spectral_radius(A)
        if rho >= 1.0:
            raise ValueError(f"non-contractive transition: rho(A) = {rho:.4g}")
        m1 = np.linalg.solve(np.eye(D) - A, a)
        if self.r == 1:
            return [m1]
        rb = self.reduced_basis()
        if rb.size <= _REDUCED_DIRECT_LIMIT:
            c, t_mat = self.reduced_affine()
            red = np.linalg.solve(np.eye(rb.size) - t_mat, c)
            return rb.expand(red)
        # blockwise fixed point in reduced coordinates
        m = [m1] + [np.zeros(D**ell) for ell in range(2, self.r + 1)]
        for _ in range(max_iter):
            new = self.step(m)
            new[0] = m1
            delta = max(float(np.max(np.abs(n - o))) / (1.0 + float(np.max(np.abs(n))))
                        for n, o in zip(new, m))
            m = new
            if delta < tol:
                break
        else:
            raise RuntimeError("stationary moment iteration did not converge")
        return m


# ---------------------------------------------------------------------------
# public transition / moment operations
# ---------------------------------------------------------------------------

@dataclass
class TransitionOrderR:
    """Stacked order-r transition of a model at one parameter."""

    r: int
    a_r: np.ndarray
    map: MomentMap

    def apply(self, stacked: np.ndarray) -> np.ndarray:
        """a_r + A_r v for a flat stacked vector v."""
        m = self.map._split(np.asarray(stacked, dtype=float))
        return np.concatenate(self.map.step(m))

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        return self.map.dense_transition()

    def btilde(self) -> np.ndarray:
        """Companion form [[1, 0], [a_r, A_r]] (materialized; small dims only)."""
        a_r, A_r = self.dense()
        n = a_r.size
        out = np.zeros((n + 1, n + 1))
        out[0, 0] = 1.0
        out[1:, 0] = a_r
        out[1:, 1:] = A_r
        return out


def transition_order_r(model: ModelSpec, theta, r: int) -> TransitionOrderR:
    if r > 4:
        raise ValueError("orders above 4 are unsupported")
    chain = chain_of(model, theta)
    mm = MomentMap(chain, r)
    return TransitionOrderR(r=r, a_r=np.concatenate(mm.const_part()), map=mm)


def _as_stacked_init(model: ModelSpec, theta, r: int, x0=None) -> list[np.ndarray]:
    if x0 is not None:
        return DiracLaw(np.asarray(x0, dtype=float)).stacked_moments(r)
    return model.init_law(np.asarray(theta, dtype=float)).stacked_moments(r)


def moment_path(model: ModelSpec, theta, r: int, x0=None, n: int = 0) -> np.ndarray:
    """E[vec_r X(n)] from a start point (or the model's initial law), n steps ahead."""
    if n < 0:
        raise ValueError("n must be >= 0")
    chain = chain_of(model, theta)
    mm = MomentMap(chain, r)
    m = _as_stacked_init(model, theta, r, x0)
    for _ in range(n):
        m = mm.step(m)
    return np.concatenate(m)


def unconditional_moments(model: ModelSpec, theta, r: int, t: int) -> np.ndarray:
    """E[vec_r X(t)] under the model's initial law."""
    return moment_path(model, theta, r, x0=None, n=t)


def noise_cov(model: ModelSpec, theta, t: int, psd_tol: float = 1e-10) -> np.ndarray:
    """Unconditional noise covariance C(t) = Cov(N(t)), t >= 1."""
    if t < 1:
        raise ValueError("noise covariance is defined for t >= 1")
    chain = chain_of(model, theta)
    c = _noise_cov_from_moments(chain, MomentMap(chain, 2),
                                _as_stacked_init(model, theta, 2), steps=t - 1)
    w = np.linalg.eigvalsh(c)
    if w.min() < -psd_tol:
        raise ValueError(f"noise covariance not PSD at t={t}: min eigenvalue {w.min():.3g}")
    return c


def _noise_cov_from_moments(chain: Chain, mm: MomentMap, m_init, steps: int) -> np.ndarray:
    m = m_init
    for _ in range(steps):
        m = mm.step(m)
    q0, q1, q2 = (chain.noise.coeffs[2][s] for s in range(3))
    v = q0 + q1 @ m[0] + q2 @ m[1]
    c = unvec(v, chain.d, chain.d)
    return 0.5 * (c + c.T)


def stationary_moments(model: ModelSpec, theta, r: int) -> np.ndarray:
    """Stationary E[vec_r X]; order-1 block is (I-A)^{-1} a."""
    chain = chain_of(model, theta)
    return np.concatenate(MomentMap(chain, r).stationary())


# ---------------------------------------------------------------------------
# parameter jets (finite differences with optional analytic supply)
# ---------------------------------------------------------------------------

def param_jet(fn, theta, order: int = 1, bounds: ParamSpace | None = None):
    """Central finite-difference derivative tensors of fn(theta).

    Returns (first,) for order 1 and (first, second) for order 2, with
    first[j] = d fn / d theta_j and second[i, j] the mixed second derivative.
    Steps: h1 = eps^(1/3) max(1,|theta_j|), h2 = eps^(1/4) max(1,|theta_j|).
    One-sided differences are used near the box boundary (flagged).
    """
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    f0 = np.asarray(fn(theta), dtype=float)
    h1 = _MACHEPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(theta))
    h2 = _MACHEPS ** 0.25 * np.maximum(1.0, np.abs(theta))
    one_sided = np.zeros(k, dtype=bool)

    def shifted(vec_shift):
        return np.asarray(fn(theta + vec_shift), dtype=float)

    first = np.empty((k,) + f0.shape)
    for j in range(k):
        h = h1[j]
        e = np.zeros(k)
        e[j] = h
        if bounds is not None and not (bounds.contains(theta + e) and bounds.contains(theta - e)):
            one_sided[j] = True
            if bounds.contains(theta + e):
                first[j] = (shifted(e) - f0) / h
            else:
                first[j] = (f0 - shifted(-e)) / h
        else:
            first[j] = (shifted(e) - shifted(-e)) / (2 * h)
    if order == 1:
        return first, one_sided

    second = np.empty((k, k) + f0.shape)
    cache = {}

    def ev(shift):
        key = tuple(np.round(shift / _MACHEPS ** 0.5).astype(np.int64))
        if key not in cache:
            cache[key] = shifted(shift)
        return cache[key]

    for i in range(k):
        hi = h2[i]
        ei = np.zeros(k)
        ei[i] = hi
        if bounds is not None and not (bounds.contains(theta + 2 * ei) and bounds.contains(theta - 2 * ei)):
            one_sided[i] = True
        second[i, i] = (ev(ei) - 2 * f0 + ev(-ei)) / hi**2
        for j in range(i + 1, k):
            hj = h2[j]
            ej = np.zeros(k)
            ej[j] = hj
            val = (ev(ei + ej) - ev(ei - ej) - ev(-ei + ej) + ev(-ei - ej)) / (4 * hi * hj)
            second[i, j] = val
            second[j, i] = val
    return first, second, one_sided


# ---------------------------------------------------------------------------
# per-(theta, T) coefficient context shared by filter / score / Fisher passes
# ---------------------------------------------------------------------------

class ModelAtTheta:
    """Coefficients of one model at one parameter, with derivative caches.

    The time-varying noise covariances C(1..T) and their finite-difference
    parameter derivatives are computed once (to their geometric stabilization
    point) and shared by the filter, score, and Fisher passes.
    """

    #: relative stabilization threshold of the C(t) path
    _C_TOL = 1e-14

    def __init__(self, model: ModelSpec, theta, with_derivatives: bool = True,
                 second_order: bool = True):
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        self.chain = chain_of(model, theta)
        self.a = self.chain.a
        self.A = self.chain.A
        self.H = model.observation()
        self.d = model.d
        self.k = model.k
        law = model.init_law(self.theta)
        self.init_mean = law.mean()
        self.init_cov = law.cov()
        self._c_list: list[np.ndarray] | None = None
        self._want_deriv = with_derivatives
        self._want_second = second_order
        self._deriv_ready = False
        self._second_ready = False
        self._c_inf: np.ndarray | None = None
        self._dc_inf: np.ndarray | None = None
        self._d2c_inf: np.ndarray | None = None
        self.fd_flags = np.zeros(self.k, dtype=bool)

    # -- C(t) path ----------------------------------------------------------
    def _build_c_path(self) -> list[np.ndarray]:
        if self._c_list is None:
            self._c_list = _c_path(self.model, self.theta, self._C_TOL)
        return self._c_list

    def C(self, t: int) -> np.ndarray:
        """C(t) for t >= 1; the stabilized tail reuses the last stored matrix."""
        path = self._build_c_path()
        return path[min(t, len(path)) - 1]

    @property
    def C_inf(self) -> np.ndarray:
        if self._c_inf is None:
            self._c_inf = _c_limit(self.model, self.theta)
        return self._c_inf

    # -- parameter derivatives ---------------------------------------------
    def _ensure_derivatives(self):
        if self._deriv_ready:
            return
        model, theta = self.model, self.theta
        da = model.da(theta)
        dA = model.dA(theta)
        if da is None or dA is None:
            first_a, fl1 = param_jet(lambda th: model.a(th), theta, 1, model.theta_space)
            first_A, fl2 = param_jet(lambda th: model.A(th), theta, 1, model.theta_space)
            self.da = first_a if da is None else np.asarray(da, dtype=float)
            self.dA = first_A if dA is None else np.asarray(dA, dtype=float)
            self.fd_flags |= fl1 | fl2
        else:
            self.da = np.asarray(da, dtype=float)
            self.dA = np.asarray(dA, dtype=float)
        law_mean = lambda th: model.init_law(th).mean()
        law_cov = lambda th: model.init_law(th).cov()
        self.dinit_mean, _ = param_jet(law_mean, theta, 1, model.theta_space)
        self.dinit_cov, _ = param_jet(law_cov, theta, 1, model.theta_space)
        self._deriv_ready = True

    def _ensure_dc_path(self):
        if not hasattr(self, "dC_path"):
            cpath = lambda th: np.stack(_c_path(self.model, th, self._C_TOL,
                                                length=len(self._build_c_path())))
            self.dC_path, flc = param_jet(cpath, self.theta, 1, self.model.theta_space)
            self.fd_flags |= flc

    def _ensure_second(self):
        if self._second_ready:
            return
        self._ensure_derivatives()
        model, theta = self.model, self.theta
        d2a = model.d2a(theta)
        d2A = model.d2A(theta)
        if d2a is None or d2A is None:
            _, second_a, _ = param_jet(lambda th: model.a(th), theta, 2, model.theta_space)
            _, second_A, _ = param_jet(lambda th: model.A(th), theta, 2, model.theta_space)
            self.d2a = second_a if d2a is None else np.asarray(d2a, dtype=float)
            self.d2A = second_A if d2A is None else np.asarray(d2A, dtype=float)
        else:
            self.d2a = np.asarray(d2a, dtype=float)
            self.d2A = np.asarray(d2A, dtype=float)
        _, self.d2init_mean, _ = param_jet(lambda th: model.init_law(th).mean(),
                                           theta, 2, model.theta_space)
        _, self.d2init_cov, _ = param_jet(lambda th: model.init_law(th).cov(),
                                          theta, 2, model.theta_space)
        self._second_ready = True

    def _ensure_d2c_path(self):
        if not hasattr(self, "d2C_path"):
            cpath = lambda th: np.stack(_c_path(self.model, th, self._C_TOL,
                                                length=len(self._build_c_path())))
            _, self.d2C_path, _ = param_jet(cpath, self.theta, 2, self.model.theta_space)

    def dC(self, t: int) -> np.ndarray:
        """(k, d, d) first derivatives of C(t)."""
        self._ensure_dc_path()
        return self.dC_path[:, min(t, self.dC_path.shape[1]) - 1]

    def d2C(self, t: int) -> np.ndarray:
        self._ensure_d2c_path()
        return self.d2C_path[:, :, min(t, self.d2C_path.shape[2]) - 1]

    @property
    def dC_inf(self) -> np.ndarray:
        if self._dc_inf is None:
            self._dc_inf, flc = param_jet(lambda th: _c_limit(self.model, th),
                                          self.theta, 1, self.model.theta_space)
            self.fd_flags |= flc
        return self._dc_inf

    @property
    def d2C_inf(self) -> np.ndarray:
        if self._d2c_inf is None:
            _, self._d2c_inf, _ = param_jet(lambda th: _c_limit(self.model, th),
                                            self.theta, 2, self.model.theta_space)
        return self._d2c_inf


def _c_limit(model: ModelSpec, theta) -> np.ndarray:
    """Limiting noise covariance C = lim C(t) via stationary order-2 moments."""
    chain = chain_of(model, theta)
    mm = MomentMap(chain, 2)
    return _noise_cov_from_moments(chain, mm, mm.stationary(), steps=0)


def _c_path(model: ModelSpec, theta, tol: float, length: int | None = None,
            max_len: int = 2_000_000) -> list[np.ndarray]:
    """C(1), C(2), ... until stabilization (or exactly ``length`` entries)."""
    chain = chain_of(model, theta)
    mm = MomentMap(chain, 2)
    m = model.init_law(np.asarray(theta, dtype=float)).stacked_moments(2)
    out = []
    t = 0
    while True:
        t += 1
        q0, q1, q2 = (chain.noise.coeffs[2][s] for s in range(3))
        v = q0 + q1 @ m[0] + q2 @ m[1]
        c = unvec(v, chain.d, chain.d)
        out.append(0.5 * (c + c.T))
        if length is not None:
            if len(out) == length:
                return out
        m_next = mm.step(m)
        delta = max(float(np.max(np.abs(a - b))) / (1.0 + float(np.max(np.abs(a))))
                    for a, b in zip(m_next, m))
        m = m_next
        if length is None and (delta < tol or t >= max_len):
            return out


# ---------------------------------------------------------------------------
# model diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ModelDiagnostics:
    rho_A: float
    rho_order2: float
    rho_order4: float | None
    c_pd_margins: list[float]
    c_inf_pd_margin: float
    derivative_magnitude: float
    contractive: bool
    c_positive_definite: bool
    notes: list[str] = field(default_factory=list)


def validate_model(model: ModelSpec, theta, horizon: int = 10) -> ModelDiagnostics:
    """Runtime diagnostics mirroring the model assumptions (never raises)."""
    theta = np.asarray(theta, dtype=float)
    notes: list[str] = []
    chain = chain_of(model, theta)
    rho1 = spectral_radius(chain.A)
    try:
        _, a2 = MomentMap(chain, 2).dense_transition()
        rho2 = spectral_radius(a2)
    except Exception as exc:  # pragma: no cover - diagnostics only
        rho2 = float("nan")
        notes.append(f"order-2 transition unavailable: {exc}")
    rho4 = None
    if model.max_noise_order >= 4:
        try:
            mm4 = MomentMap(chain, 4)
            if stacked_len(chain.d, 4) <= 20000:
                _, a4 = mm4.dense_transition()
                rho4 = spectral_radius(a4)
            else:
                _, t4 = mm4.reduced_affine()
                rho4 = spectral_radius(t4)
        except Exception as exc:  # pragma: no cover
            notes.append(f"order-4 transition unavailable: {exc}")
    margins = []
    c_ok = True
    for t in range(1, horizon + 1):
        try:
            c = noise_cov(model, theta, t, psd_tol=np.inf)
        except ValueError as exc:
            notes.append(str(exc))
            c_ok = False
            break
        margin = float(np.linalg.eigvalsh(c).min())
        margins.append(margin)
        if margin < -1e-10:
            c_ok = False
    try:
        mm2 = MomentMap(chain, 2)
        m_stat = mm2.stationary()
        c_inf = _noise_cov_from_moments(chain, mm2, m_stat, steps=0)
        c_inf_margin = float(np.linalg.eigvalsh(c_inf).min())
        if c_inf_margin < -1e-10:
            c_ok = False
    except Exception as exc:
        c_inf_margin = float("nan")
        notes.append(f"limit covariance unavailable: {exc}")
        c_ok = False
    try:
        first, _ = param_jet(lambda th: np.concatenate([model.a(th), model.A(th).ravel()]),
                             theta, 1, model.theta_space)
        deriv_mag = float(np.max(np.abs(first)))
        if not np.all(np.isfinite(first)):
            notes.append("non-finite parameter derivatives")
    except Exception as exc:
        deriv_mag = float("nan")
        notes.append(f"derivative check failed: {exc}")
    contractive = rho1 < 1.0 and (not np.isfinite(rho2) or rho2 < 1.0) \
        and (rho4 is None or rho4 < 1.0)
    if not contractive:
        notes.append("non-contractive transition")
    return ModelDiagnostics(
        rho_A=rho1, rho_order2=rho2, rho_order4=rho4,
        c_pd_margins=margins, c_inf_pd_margin=c_inf_margin,
        derivative_magnitude=deriv_mag,
        contractive=contractive, c_positive_definite=c_ok, notes=notes,
    )
