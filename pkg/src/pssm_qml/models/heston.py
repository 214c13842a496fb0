"""Heston stochastic volatility as a polynomial state space model.

State X = (v, dY, dY^2) sampled on a fixed grid, with the log-spot increments
dY observable and the variance v latent; theta = (kappa, m, sigma, rho).
Conditional moments up to order 4 come from the exact moment formula of the
bivariate affine process (v, Y): the generator acts degree-non-increasingly on
monomials v^i y^j, so one matrix exponential of its coefficient matrix yields
every conditional moment polynomial at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..model_core import DiracLaw, ModelSpec, ParamSpace
from ..tensor_linalg import expm

__all__ = ["HestonModel", "heston_model", "heston_simulate", "AffineGenerator"]

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

#: coefficients above the PSSM degree bound must vanish up to this tolerance
_DEGREE_TOL = 1e-9


# ---------------------------------------------------------------------------
# affine moment engine on bivariate monomials
# ---------------------------------------------------------------------------

def _basis(max_degree: int) -> list[tuple[int, int]]:
    return [(i, j) for s in range(max_degree + 1) for i in range(s, -1, -1)
            for j in [s - i]]


@dataclass
class AffineGenerator:
    """Generator action of (v, y) on monomials v^i y^j, degree <= max_degree.

    dv = kappa (m - v) dt + sigma sqrt(v) dW2,  dy = sqrt(v) dW1,
    d<W1, W2> = rho dt.
    """

    kappa: float
    m: float
    sigma: float
    rho: float
    max_degree: int

    def matrix(self) -> np.ndarray:
        basis = _basis(self.max_degree)
        index = {b: n for n, b in enumerate(basis)}
        g = np.zeros((len(basis), len(basis)))

        def add(target, source, coef):
            if coef and target in index:
                g[index[target], index[source]] += coef

        for (i, j) in basis:
            add((i - 1, j), (i, j), self.kappa * self.m * i
                + 0.5 * self.sigma**2 * i * (i - 1))
            add((i, j), (i, j), -self.kappa * i)
            add((i, j - 1), (i, j), self.sigma * self.rho * i * j)
            add((i + 1, j - 2), (i, j), 0.5 * j * (j - 1))
        return g

    def conditional_moment_table(self, dt: float) -> dict[tuple[int, int], np.ndarray]:
        """E[v(dt)^i y(dt)^j | v(0)=v0, y(0)=0] as v0-coefficient vectors.

        Entry (i, j) maps to c with E[...] = sum_p c[p] v0^p.
        """
        basis = _basis(self.max_degree)
        trans = expm(self.matrix() * dt)
        out = {}
        for n, (i, j) in enumerate(basis):
            c = np.zeros(self.max_degree + 1)
            for p_idx, (p, q) in enumerate(basis):
                if q == 0:
                    c[p] += trans[p_idx, n]
            out[(i, j)] = c
        return out


# ---------------------------------------------------------------------------
# conditional moments of the state vector and the induced noise moments
# ---------------------------------------------------------------------------

def _vpower_to_multi(p: int, v_powers: list[tuple[int, int]]) -> list[int]:
    """Express v0^p as a product of state components (greedy in v-power)."""
    comps = sorted(v_powers, key=lambda ip: -ip[1][0])  # by descending v power
    remaining = p
    out: list[int] = []
    for comp_idx, (pv, _) in comps:
        while remaining >= pv:
            out.append(comp_idx)
            remaining -= pv
    if remaining:
        raise ValueError(f"cannot express v^{p} with available component powers")
    return out


class _ConditionalMoments:
    """Dense coefficient matrices B_j[s] of E[X^{(x)j} | X(t-1)=x], j <= 4."""

    def __init__(self, components: list[tuple[int, int]], table, d: int):
        self.components = components
        self.table = table
        self.d = d
        self.v_powers = [(idx, c) for idx, c in enumerate(components) if c[1] == 0]

    def _column(self, p: int, s_arrays: dict[int, np.ndarray], row: int):
        if p == 0:
            s_arrays.setdefault(0, np.zeros((self.d_rows, 1)))
            s_arrays[0][row, 0] += self._coef
            return
        multi = _vpower_to_multi(p, self.v_powers)
        s = len(multi)
        col = 0
        for c in multi:
            col = col * self.d + c
        s_arrays.setdefault(s, np.zeros((self.d_rows, self.d**s)))
        s_arrays[s][row, col] += self._coef

    def block(self, j: int) -> list[np.ndarray]:
        d = self.d
        self.d_rows = d**j
        out: dict[int, np.ndarray] = {}
        for row, multi in enumerate(itertools.product(range(d), repeat=j)):
            iv = sum(self.components[c][0] for c in multi)
            jy = sum(self.components[c][1] for c in multi)
            coefs = self.table[(iv, jy)]
            for p, cf in enumerate(coefs):
                if cf == 0.0:
                    continue
                # PSSM degree bound: coefficients need component order <= j
                order = _order_of_vpower(p, self.v_powers)
                if order > j:
                    if abs(cf) > _DEGREE_TOL:
                        raise ValueError(
                            f"degree bound violated: v^{p} (order {order}) in E[X^{multi}]")
                    continue
                self._coef = cf
                self._column(p, out, row)
        return [out.get(s, np.zeros((d**j, d**s))) for s in range(j + 1)]


def _order_of_vpower(p: int, v_powers) -> int:
    if p == 0:
        return 0
    return len(_vpower_to_multi(p, v_powers))


def noise_from_conditional(a: np.ndarray, A: np.ndarray,
                           cond: dict[int, list[np.ndarray]], j: int) -> list[np.ndarray]:
    """Coefficients of E[N^{(x)j} | x] from those of E[X^{(x)p} | x].

    N = X' - (a + A x); expand (X' - b)^{(x)j} over position subsets, keeping
    Kronecker slots in exact position order.
    """
    d = a.size
    out = [np.zeros((d**j, d**s)) for s in range(j + 1)]
    for tags in itertools.product("XO", repeat=j):  # X': group, O: -(a + Ax)
        xpos = [q for q, t in enumerate(tags) if t == "X"]
        opos = [q for q, t in enumerate(tags) if t == "O"]
        p = len(xpos)
        group = cond[p] if p else None
        for det_choice in itertools.product("aA", repeat=len(opos)):
            n_ax = det_choice.count("A")
            s_group_range = range(p + 1) if p else [0]
            for sg in s_group_range:
                if p and group[sg].size and not np.any(group[sg]):
                    continue
                s_tot = n_ax + sg
                row = {q: _LETTERS[q] for q in range(j)}
                cols = _LETTERS[j:j + s_tot]
                operands, lhs = [], []
                ci = 0
                for q, ch in zip(opos, det_choice):
                    if ch == "a":
                        operands.append(-a)
                        lhs.append(row[q])
                    else:
                        operands.append(-A)
                        lhs.append(row[q] + cols[ci])
                        ci += 1
                if p:
                    operands.append(group[sg].reshape((d,) * p + (d,) * sg))
                    lhs.append("".join(row[q] for q in xpos) + cols[ci:ci + sg])
                out_sub = "".join(row[q] for q in range(j)) + cols
                val = np.einsum(",".join(lhs) + "->" + out_sub, *operands)
                out[s_tot] += val.reshape(d**j, d**s_tot)
    return out


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

_DEFAULT_COMPONENTS = [(1, 0), (0, 1), (0, 2)]
_DEFAULT_X0 = 0.09  # v(0) = 0.3^2, returns start at zero


class HestonModel(ModelSpec):
    """Polynomial state space form of the Heston model (mu = 0, delta = 1/2).

    ``components`` lists the state coordinates as (v-power, y-power) pairs of
    the sampled bivariate process; the default (v, dY, dY^2) has the variance
    latent.  The small-time-scale variants of the paper's remarks are obtained
    by passing dt < 1 and, optionally, the enlarged component set.
    """

    name = "heston"
    max_noise_order = 4

    def __init__(self, dt: float = 1.0, components=None, m_unobs: int = 1,
                 v0: float = _DEFAULT_X0):
        self.dt = float(dt)
        self.components = [tuple(c) for c in (components or _DEFAULT_COMPONENTS)]
        self.d = len(self.components)
        self.m_unobs = m_unobs
        self.v0 = float(v0)
        deg = 4 * max(i + j for i, j in self.components)
        self._max_degree = deg
        self.theta_space = ParamSpace(
            np.array([1e-4, 1e-8, 1e-4, -1.0]),
            np.array([10.0, 1.0, 1.0, 1.0]),
            ("kappa", "m", "sigma", "rho"),
        )
        self._cache: dict[tuple, dict] = {}

    # -- closed-form transition pair (matches the affine engine's order-1 rows)
    def a(self, theta):
        if self.components != _DEFAULT_COMPONENTS:
            return self._tables(theta)["B1"][0]
        kappa, m, _, _ = np.asarray(theta, dtype=float)
        dt = self.dt
        e = np.exp(-kappa * dt)
        return m * np.array([1.0 - e, 0.0, dt - (1.0 - e) / kappa])

    def A(self, theta):
        if self.components != _DEFAULT_COMPONENTS:
            b1 = self._tables(theta)["B1"][1]
            return b1
        kappa, _, _, _ = np.asarray(theta, dtype=float)
        dt = self.dt
        e = np.exp(-kappa * dt)
        out = np.zeros((3, 3))
        out[0, 0] = e
        out[2, 0] = (1.0 - e) / kappa
        return out

    def da(self, theta):
        if self.components != _DEFAULT_COMPONENTS:
            return None
        kappa, m, _, _ = np.asarray(theta, dtype=float)
        dt = self.dt
        e = np.exp(-kappa * dt)
        out = np.zeros((4, 3))
        out[0] = m * np.array([dt * e, 0.0, (1.0 - e) / kappa**2 - dt * e / kappa])
        out[1] = np.array([1.0 - e, 0.0, dt - (1.0 - e) / kappa])
        return out

    def dA(self, theta):
        if self.components != _DEFAULT_COMPONENTS:
            return None
        kappa, _, _, _ = np.asarray(theta, dtype=float)
        dt = self.dt
        e = np.exp(-kappa * dt)
        out = np.zeros((4, 3, 3))
        out[0, 0, 0] = -dt * e
        out[0, 2, 0] = (e - 1.0) / kappa**2 + dt * e / kappa
        return out

    # -- affine engine ------------------------------------------------------
    def _tables(self, theta) -> dict:
        theta = np.asarray(theta, dtype=float)
        key = tuple(np.round(theta, 14))
        if key not in self._cache:
            kappa, m, sigma, rho = theta
            gen = AffineGenerator(kappa, m, sigma, rho, self._max_degree)
            table = gen.conditional_moment_table(self.dt)
            cm = _ConditionalMoments(self.components, table, self.d)
            cond = {j: cm.block(j) for j in range(1, 5)}
            a = cond[1][0].reshape(-1)
            A = cond[1][1]
            noise = {j: noise_from_conditional(a, A, cond, j) for j in range(2, 5)}
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = {"B1": (a, A), "cond": cond, "noise": noise}
        return self._cache[key]

    def conditional_moments(self, theta, j: int) -> list[np.ndarray]:
        """Coefficients of E[X(t)^{(x)j} | X(t-1)=x]."""
        return self._tables(theta)["cond"][j]

    def noise_moments(self, theta, j: int):
        return self._tables(theta)["noise"][j]

    def init_law(self, theta):
        x0 = [self.v0**pv if py == 0 else 0.0 for pv, py in self.components]
        return DiracLaw(np.array(x0))


def heston_model(dt: float = 1.0, isolate: str | None = None,
                 theta=None, **kwargs) -> ModelSpec:
    """Full 4-parameter Heston PSSM, or an isolated single-parameter variant.

    ``isolate`` names one of kappa/m/sigma/rho; the remaining components are
    pinned at ``theta`` (default: the reference point (1, 0.16, 0.3, -0.5)).
    """
    from .isolated import IsolatedModel

    base = HestonModel(dt=dt, **kwargs)
    if isolate is None:
        return base
    names = base.theta_space.names
    if isolate not in names:
        raise ValueError(f"unknown parameter {isolate!r}")
    theta = np.asarray(theta if theta is not None else [1.0, 0.16, 0.3, -0.5], dtype=float)
    return IsolatedModel(base, theta, [names.index(isolate)])


# ---------------------------------------------------------------------------
# simulator (Euler-Maruyama with the absorption scheme)
# ---------------------------------------------------------------------------

def heston_simulate(theta, T: int, dt: float = 1.0, inner_dt: float = 1.0 / 250.0,
                    seed=None, n_paths: int = 1, v0: float = _DEFAULT_X0,
                    components=None, rng=None):
    """Simulate the Heston PSSM state at observation times 1..T.

    Euler-Maruyama on (v, Y) with the variance clamped at zero after each
    substep (absorption scheme); correlated Brownian increments.  Returns an
    array of shape (n_paths, T, d) (squeezed to (T, d) for one path).
    """
    kappa, m, sigma, rho = np.asarray(theta, dtype=float)
    comps = [tuple(c) for c in (components or _DEFAULT_COMPONENTS)]
    if rng is None:
        rng = np.random.default_rng(np.random.PCG64(seed))
    n_inner = int(round(dt / inner_dt))
    h = dt / n_inner
    sq_h = np.sqrt(h)
    crho = np.sqrt(1.0 - rho * rho)
    v = np.full(n_paths, v0, dtype=float)
    out = np.empty((n_paths, T, len(comps)))
    for t in range(T):
        dy = np.zeros(n_paths)
        for _ in range(n_inner):
            z = rng.standard_normal((2, n_paths))
            dw1 = sq_h * z[0]
            dw2 = sq_h * (rho * z[0] + crho * z[1])
            sqv = np.sqrt(v)
            dy += sqv * dw1
            v = np.maximum(v + kappa * (m - v) * h + sigma * sqv * dw2, 0.0)
        for ci, (pv, py) in enumerate(comps):
            out[:, t, ci] = v**pv * dy**py if py else v**pv
    return out[0] if n_paths == 1 else out
