import numpy as np
import pytest

from pssm_qml.tensor_linalg import (
    BlockPartition,
    KronOperator,
    expm,
    kron,
    kron_apply,
    kron_sum,
    mixed_kron_apply,
    solve_stein,
    spectral_radius,
    stacked_kron,
    stacked_len,
    sym_logdet,
    sym_solve,
    tracy_singh,
    vec,
)

RNG = np.random.default_rng(20240817)


def test_kron_identity():
    assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_vec_outer_identity():
    x = np.array([1.0, 2.0])
    y = np.array([3.0, 4.0])
    assert np.array_equal(kron(y, x), np.array([3.0, 6.0, 4.0, 8.0]))
    assert np.allclose(vec(np.outer(x, y)), kron(y, x))


def test_kron_hand_expanded():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = np.array([
        [0, 1, 0, 2],
        [1, 0, 2, 0],
        [0, 3, 0, 4],
        [3, 0, 4, 0],
    ], dtype=float)
    assert np.array_equal(kron(a, b), expected)


def test_kron_mixed_product_property():
    for _ in range(5):
        a, b, c, d = (RNG.standard_normal((2, 2)) for _ in range(4))
        lhs = kron(a, b) @ kron(c, d)
        rhs = kron(a @ c, b @ d)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_kron_spectral_norm_multiplicative():
    a = RNG.standard_normal((3, 3))
    b = RNG.standard_normal((2, 2))
    lhs = np.linalg.norm(kron(a, b), 2)
    rhs = np.linalg.norm(a, 2) * np.linalg.norm(b, 2)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, rhs)


def test_kron_sum_scalar():
    assert np.allclose(kron_sum(np.array([[2.0]]), np.array([[3.0]])), [[5.0]])


def test_kron_sum_zero():
    assert np.array_equal(kron_sum(np.zeros((2, 2)), np.zeros((2, 2))), np.zeros((4, 4)))


def test_kron_sum_expm_identity():
    a = RNG.standard_normal((2, 2))
    b = RNG.standard_normal((2, 2))
    assert np.allclose(expm(kron_sum(a, b)), kron(expm(a), expm(b)), atol=1e-10)


def test_vec_definition():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(vec(m), [1.0, 3.0, 2.0, 4.0])
    assert np.array_equal(vec(np.eye(2)), [1.0, 0.0, 0.0, 1.0])


def test_vec_kron_identity():
    for _ in range(5):
        a, b, c = (RNG.standard_normal((2, 2)) for _ in range(3))
        assert np.allclose(kron(a, b) @ vec(c), vec(b @ c @ a.T), atol=1e-12)


def test_stacked_kron_scalar_powers():
    assert np.array_equal(stacked_kron(np.array([2.0]), 3), [2.0, 4.0, 8.0])


def test_stacked_kron_hand():
    assert np.array_equal(stacked_kron(np.array([1.0, 0.0]), 2),
                          [1.0, 0.0, 1.0, 0.0, 0.0, 0.0])


def test_stacked_len():
    assert stacked_len(3, 4) == 3 + 9 + 27 + 81
    with pytest.raises(ValueError):
        stacked_kron(np.ones(2), 0)


def test_tracy_singh_hand_expanded():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    got = tracy_singh(a, BlockPartition(1, 1), b, BlockPartition(1, 1))
    expected = np.array([
        [5, 6, 10, 12],
        [7, 8, 14, 16],
        [15, 18, 20, 24],
        [21, 24, 28, 32],
    ], dtype=float)
    assert np.array_equal(got, expected)


def test_tracy_singh_trivial_partition_is_kron():
    a = RNG.standard_normal((2, 3))
    b = RNG.standard_normal((3, 2))
    got = tracy_singh(a, BlockPartition(2, 3), b, BlockPartition(3, 2))
    assert np.array_equal(got, kron(a, b))


def test_tracy_singh_block_layout_random():
    a = RNG.standard_normal((4, 4))
    b = RNG.standard_normal((4, 4))
    got = tracy_singh(a, BlockPartition(2, 2), b, BlockPartition(2, 2))
    # block ((i,k),(j,l)) equals A_ij (x) B_kl
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    aij = a[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                    bkl = b[2 * k:2 * k + 2, 2 * l:2 * l + 2]
                    blk = got[8 * i + 4 * k:8 * i + 4 * k + 4,
                              8 * j + 4 * l:8 * j + 4 * l + 4]
                    assert np.allclose(blk, kron(aij, bkl))


def test_tracy_singh_partition_mismatch():
    with pytest.raises(ValueError):
        tracy_singh(np.eye(3), BlockPartition(2, 2), np.eye(2), BlockPartition(1, 1))


def test_expm_zero_and_diagonal():
    assert np.allclose(expm(np.zeros((3, 3))), np.eye(3))
    got = expm(np.diag([1.0, -1.0]))
    assert np.allclose(got, np.diag([np.e, 1.0 / np.e]), rtol=1e-12)


def test_expm_triangular_closed_form():
    q = np.array([[1.0, 0.0], [-0.5, 0.5]])
    got = expm(-q)
    kappa, lam = 0.5, 1.0
    expected = np.array([
        [np.exp(-1.0), 0.0],
        [kappa * (np.exp(-kappa) - np.exp(-lam)) / (lam - kappa), np.exp(-0.5)],
    ])
    assert np.allclose(got, expected, atol=1e-6)
    assert abs(got[1, 0] - 0.238651) < 1e-6


def test_expm_nonsquare_raises():
    with pytest.raises(ValueError):
        expm(np.ones((2, 3)))


def test_solve_stein_scalar():
    assert np.allclose(solve_stein(np.array([[0.5]]), np.array([[1.0]])), [[4.0 / 3.0]])


def test_solve_stein_a_zero():
    c = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(solve_stein(np.zeros((2, 2)), c), c)


def test_solve_stein_residual_and_psd():
    for _ in range(5):
        a = RNG.standard_normal((3, 3))
        a *= 0.9 / max(spectral_radius(a), 1e-9)
        b = RNG.standard_normal((3, 3))
        c = b @ b.T
        x = solve_stein(a, c)
        assert np.linalg.norm(x - a @ x @ a.T - c) <= 1e-10 * (1 + np.linalg.norm(x))
        assert np.allclose(x, x.T)
        assert np.linalg.eigvalsh(x).min() >= -1e-10


def test_solve_stein_noncontractive():
    with pytest.raises(ValueError, match="non-contractive"):
        solve_stein(np.eye(2), np.eye(2))


def test_spectral_radius_basics():
    assert spectral_radius(np.diag([0.5, 0.3])) == pytest.approx(0.5)
    assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.0)


def test_spectral_radius_kron_square():
    a = RNG.standard_normal((3, 3))
    assert spectral_radius(kron(a, a)) == pytest.approx(spectral_radius(a) ** 2, rel=1e-8)


def test_sym_solve_identity_and_logdet():
    b = RNG.standard_normal(3)
    x, flag = sym_solve(np.eye(3), b)
    assert not flag and np.allclose(x, b)
    ld, dflag = sym_logdet(np.eye(3))
    assert ld == pytest.approx(0.0) and not dflag
    ld2, _ = sym_logdet(np.diag([2.0, 3.0]))
    assert ld2 == pytest.approx(np.log(6.0))


def test_sym_solve_pseudoinverse_path():
    a = np.diag([1.0, 0.0])
    x, flag = sym_solve(a, np.array([1.0, 1.0]))
    assert flag
    assert np.allclose(x, [1.0, 0.0])


def test_sym_solve_requires_symmetry():
    with pytest.raises(ValueError):
        sym_solve(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))


def test_kron_apply_matches_materialized():
    a = RNG.standard_normal((2, 2))
    v = RNG.standard_normal(4)
    got = kron_apply(KronOperator(a, 2), v)
    assert np.allclose(got, kron(a, a) @ v, atol=1e-12)


def test_kron_apply_order1_and_identity():
    a = RNG.standard_normal((3, 3))
    v = RNG.standard_normal(3)
    assert np.allclose(kron_apply(KronOperator(a, 1), v), a @ v)
    v4 = RNG.standard_normal(81)
    assert np.allclose(kron_apply(KronOperator(np.eye(3), 4), v4), v4)


def test_kron_apply_all_small_orders():
    for d in (2, 3):
        for j in (1, 2, 3):
            a = RNG.standard_normal((d, d))
            v = RNG.standard_normal(d**j)
            dense = a.copy()
            for _ in range(j - 1):
                dense = np.kron(dense, a)
            assert np.allclose(kron_apply(KronOperator(a, j), v), dense @ v, atol=1e-12)


def test_kron_apply_length_mismatch():
    with pytest.raises(ValueError):
        kron_apply(KronOperator(np.eye(2), 2), np.ones(5))


def test_mixed_kron_apply():
    a = RNG.standard_normal((2, 3))
    b = RNG.standard_normal((4, 1))
    c = RNG.standard_normal((2, 2))
    v = RNG.standard_normal(3 * 1 * 2)
    dense = np.kron(np.kron(a, b), c)
    assert np.allclose(mixed_kron_apply([a, b, c], v), dense @ v, atol=1e-12)
