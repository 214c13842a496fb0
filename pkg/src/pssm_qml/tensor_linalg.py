"""Dense Kronecker-tensor and linear-algebra kernels.

Everything here operates on plain numpy arrays.  Dimensions in this package
stay small (base models d <= 5, augmented chains d <= 70), so dense storage
is used throughout; only repeated Kronecker powers of order >= 3 are applied
structurally instead of being materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "BlockPartition",
    "KronOperator",
    "kron",
    "kron_sum",
    "vec",
    "unvec",
    "stacked_kron",
    "stacked_len",
    "tracy_singh",
    "expm",
    "spectral_radius",
    "solve_stein",
    "sym_solve",
    "sym_logdet",
    "kron_apply",
    "mixed_kron_apply",
]

#: direct vec-solve limit for the Stein equation: above this squared dimension
#: the solver switches to fixed-point iteration.
_STEIN_DIRECT_LIMIT = 4096

#: relative rank tolerance of the pseudoinverse fallback in ``sym_solve``.
_PINV_RTOL = 1e-12


@dataclass(frozen=True)
class BlockPartition:
    """Submatrix dimensions of a partitioned matrix (row_block x col_block)."""

    row_block: int
    col_block: int


@dataclass(frozen=True)
class KronOperator:
    """The operator A^{tensor j} applied structurally (never materialized for j >= 3)."""

    factor: np.ndarray
    power: int

    def __post_init__(self):
        a = np.asarray(self.factor)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("KronOperator factor must be square")
        if self.power < 1:
            raise ValueError("KronOperator power must be >= 1")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; vectors are treated as columns."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def kron_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker sum A (+) B with expm(A (+) B) == expm(A) tensor expm(B)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise ValueError("kron_sum requires square matrices")
    return np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b)


def vec(m: np.ndarray) -> np.ndarray:
    """Stack the columns of ``m`` into one vector."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec`."""
    if cols is None:
        cols = v.size // rows
    return np.asarray(v, dtype=float).reshape(rows, cols, order="F")


def stacked_len(d: int, r: int) -> int:
    """Length of the stacked Kronecker vector (x, x@x, ..., x^{tensor r})."""
    if r < 1:
        raise ValueError("stacked Kronecker order must be >= 1")
    return sum(d**j for j in range(1, r + 1))


def stacked_kron(x: np.ndarray, r: int) -> np.ndarray:
    """Concatenation (x, x tensor x, ..., x^{tensor r})."""
    if r < 1:
        raise ValueError("stacked Kronecker order must be >= 1")
    x = np.asarray(x, dtype=float).reshape(-1)
    parts = [x]
    for _ in range(r - 1):
        parts.append(np.kron(parts[-1], x))
    return np.concatenate(parts)


def tracy_singh(
    a: np.ndarray,
    pa: BlockPartition,
    b: np.ndarray,
    pb: BlockPartition,
) -> np.ndarray:
    """Tracy-Singh product: the (k,l)-subblock of the (i,j)-subblock is A_ij (x) B_kl."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] % pa.row_block or a.shape[1] % pa.col_block:
        raise ValueError("partition does not divide the dimensions of A")
    if b.shape[0] % pb.row_block or b.shape[1] % pb.col_block:
        raise ValueError("partition does not divide the dimensions of B")
    ni, nj = a.shape[0] // pa.row_block, a.shape[1] // pa.col_block
    nk, nl = b.shape[0] // pb.row_block, b.shape[1] // pb.col_block
    ablk = [
        [a[i * pa.row_block:(i + 1) * pa.row_block, j * pa.col_block:(j + 1) * pa.col_block]
         for j in range(nj)]
        for i in range(ni)
    ]
    bblk = [
        [b[k * pb.row_block:(k + 1) * pb.row_block, l * pb.col_block:(l + 1) * pb.col_block]
         for l in range(nl)]
        for k in range(nk)
    ]
    rows = []
    for i in range(ni):
        for k in range(nk):
            rows.append([np.kron(ablk[i][j], bblk[k][l]) for j in range(nj) for l in range(nl)])
    return np.block(rows)


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring with Pade approximants)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError("expm requires a square matrix")
    return scipy.linalg.expm(a)


def spectral_radius(a: np.ndarray) -> float:
    """Largest eigenvalue modulus."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError("spectral radius requires a square matrix")
    if a.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def solve_stein(a: np.ndarray, c: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Unique solution of the Stein equation X = A X A^T + C for rho(A) < 1.

    Direct vec-solve (I - A tensor A) vec(X) = vec(C) in small dimensions,
    fixed-point iteration otherwise.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    d = a.shape[0]
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise ValueError(f"Stein equation is non-contractive: rho(A) = {rho:.6g} >= 1")
    if d * d <= _STEIN_DIRECT_LIMIT:
        x = np.linalg.solve(np.eye(d * d) - np.kron(a, a), vec(c)).reshape(d, d, order="F")
    else:
        x = c.copy()
        max_iter = max(64, int(10 * np.log(1e-14) / np.log(max(rho, 1e-6))))
        for _ in range(max_iter):
            x_new = a @ x @ a.T + c
            if np.linalg.norm(x_new - x) < tol * (1.0 + np.linalg.norm(x_new)):
                x = x_new
                break
            x = x_new
    if np.allclose(c, c.T, atol=1e-12 * (1.0 + np.linalg.norm(c))):
        x = 0.5 * (x + x.T)
    return x


def sym_solve(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve A x = b for symmetric A.

    Cholesky when positive definite; otherwise an eigenvalue-based
    Moore-Penrose pseudoinverse with a degeneracy flag (second return value).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if not np.allclose(a, a.T, atol=1e-10 * (1.0 + np.linalg.norm(a))):
        raise ValueError("sym_solve requires a symmetric matrix")
    try:
        cho = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        # Cholesky succeeding is not enough: guard the smallest pivot.
        piv = np.diag(cho[0]) ** 2
        if np.min(piv) >= _PINV_RTOL * max(np.linalg.norm(a), 1e-300):
            return scipy.linalg.cho_solve(cho, b, check_finite=False), False
    except scipy.linalg.LinAlgError:
        pass
    w, q = np.linalg.eigh(a)
    cut = _PINV_RTOL * max(np.max(np.abs(w)), 1e-300)
    inv_w = np.where(np.abs(w) > cut, 1.0 / np.where(np.abs(w) > cut, w, 1.0), 0.0)
    return q @ (inv_w[:, None] * (q.T @ b)) if b.ndim > 1 else q @ (inv_w * (q.T @ b)), True


def sym_logdet(a: np.ndarray) -> tuple[float, bool]:
    """log|det A| for symmetric A; flags degeneracy (near-zero eigenvalues skipped)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    w = np.linalg.eigvalsh(a)
    cut = _PINV_RTOL * max(np.max(np.abs(w), initial=0.0), 1e-300)
    degenerate = bool(np.any(np.abs(w) <= cut))
    w_kept = w[np.abs(w) > cut]
    if w_kept.size == 0:
        return -np.inf, True
    return float(np.sum(np.log(np.abs(w_kept)))), degenerate


def kron_apply(op: KronOperator, v: np.ndarray) -> np.ndarray:
    """Apply A^{tensor j} to a vector without materializing the power.

    Cost O(j * d^{j+1}); supports an extra trailing batch axis on ``v``.
    """
    a = np.asarray(op.factor, dtype=float)
    d, j = a.shape[0], op.power
    v = np.asarray(v, dtype=float)
    if v.shape[0] != d**j:
        raise ValueError(f"vector length {v.shape[0]} != {d}^{j}")
    batch = v.shape[1:]
    w = v.reshape((d,) * j + batch)
    for axis in range(j):
        w = np.tensordot(a, w, axes=([1], [axis]))
        w = np.moveaxis(w, 0, axis)
    return w.reshape((d**j,) + batch)


def mixed_kron_apply(factors: list[np.ndarray], v: np.ndarray) -> np.ndarray:
    """Apply M_1 tensor M_2 tensor ... tensor M_n to a vector factorwise.

    Factors may be rectangular (including (d,1) columns); the input length must
    equal the product of the column counts.
    """
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in factors]
    cols = [m.shape[1] for m in mats]
    v = np.asarray(v, dtype=float)
    if v.shape[0] != int(np.prod(cols)):
        raise ValueError("vector length does not match factor columns")
    w = v.reshape(cols)
    for axis, m in enumerate(mats):
        w = np.tensordot(m, w, axes=([1], [axis]))
        w = np.moveaxis(w, 0, axis)
    return w.reshape(-1)
