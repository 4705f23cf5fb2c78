import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ddinfo import qmi
from ddinfo.errors import (InvalidInputError, NotAnEllipsoidError, NotPSDError,
                           PreconditionError, ShapeMismatchError)
from ddinfo.qmi import PartitionedSymmetric
from ddinfo.tolerances import get_tolerances, tolerances

from _gen import rand_gram, rand_kernel_compatible, rand_pi

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def D(*v):
    return np.diag(np.asarray(v, dtype=float))


# ---------------------------------------------------------------- PSD tests

def test_psd_check_identity():
    ok, lam = qmi.psd_check(np.eye(3))
    assert ok and lam == pytest.approx(1.0)


def test_psd_check_strict_zero_eigenvalue():
    ok, lam = qmi.psd_check(D(1, 0), strict=True)
    assert not ok and lam == pytest.approx(0.0)
    assert qmi.psd_check(D(1, 0))[0]


def test_psd_check_gram(rng):
    for _ in range(20):
        A = rng.standard_normal((5, 3))
        assert qmi.psd_check(A.T @ A)[0]


def test_psd_check_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        qmi.psd_check(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        qmi.psd_check(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_psd_tolerance_is_relative():
    A = D(1e6, -1e-4)
    assert qmi.is_psd(A)            # -1e-4 is inside 1e-9 * 1e6
    assert not qmi.is_psd(D(1.0, -1e-4))


@given(hnp.arrays(float, (4, 3), elements=finite))
def test_gram_matrices_are_psd(A):
    assert qmi.is_psd(A.T @ A)


# ---------------------------------------------------------- pseudo-inverse

def test_pseudo_inverse_diagonal():
    np.testing.assert_allclose(qmi.pseudo_inverse(D(2, 0)), D(0.5, 0))
    np.testing.assert_allclose(qmi.pseudo_inverse(np.eye(3)), np.eye(3))


def test_pseudo_inverse_penrose(rng):
    for _ in range(20):
        A = rng.standard_normal((4, 6))
        Ap = qmi.pseudo_inverse(A)
        assert np.linalg.norm(A @ Ap @ A - A) <= 1e-10 * np.linalg.norm(A)
        assert np.linalg.norm(Ap @ A @ Ap - Ap) <= 1e-10 * np.linalg.norm(Ap)
        np.testing.assert_allclose(A @ Ap, (A @ Ap).T, atol=1e-12)


def test_pseudo_inverse_rank_deficient(rng):
    A = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 5))
    np.testing.assert_allclose(qmi.pseudo_inverse(A), np.linalg.pinv(A),
                               atol=1e-10)
    assert qmi.numerical_rank(A) == 2


# ------------------------------------------------------------ Schur complement

def test_schur_complement_examples():
    assert qmi.schur_complement(PartitionedSymmetric(D(2, -1), 1, 1))[0, 0] == \
        pytest.approx(2.0)
    N = PartitionedSymmetric([[5, 2], [2, -1]], 1, 1)
    assert qmi.schur_complement(N)[0, 0] == pytest.approx(9.0)


def test_schur_complement_singular_n22_svd_oracle(rng):
    for _ in range(10):
        N = rand_kernel_compatible(rng, 2, 3, rank22=2)
        U, s, Vt = np.linalg.svd(N.n22)
        inv = np.where(s > 1e-10 * s[0], 1.0 / np.where(s > 0, s, 1), 0.0)
        pinv = (Vt.T * inv) @ U.T
        expect = N.n11 - N.n12 @ pinv @ N.n21
        got = qmi.schur_complement(N)
        assert np.linalg.norm(got - expect) <= 1e-10 * max(1, np.linalg.norm(expect))


# ------------------------------------------------------------ kernel inclusion

def test_kernel_inclusion_fails_with_witness():
    ok, w = qmi.kernel_inclusion(D(-1, 0), [[0.0, 1.0]])
    assert not ok
    np.testing.assert_allclose(np.abs(w), [0, 1], atol=1e-12)


def test_kernel_inclusion_invertible(rng):
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert qmi.kernel_inclusion(A, rng.standard_normal((2, 3)))[0]


def test_kernel_inclusion_factored(rng):
    for _ in range(10):
        A = rng.standard_normal((2, 4))
        C = rng.standard_normal((3, 2))
        assert qmi.kernel_inclusion(A, C @ A)[0]


def test_kernel_inclusion_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        qmi.kernel_inclusion(np.eye(2), np.eye(3))


# ------------------------------------------------------------ ellipsoid tests

def test_is_matrix_ellipsoid_examples():
    assert qmi.is_matrix_ellipsoid(PartitionedSymmetric(D(1, 1, -1), 2, 1))
    v = qmi.is_matrix_ellipsoid(PartitionedSymmetric(D(1, 1), 1, 1))
    assert not v and v.failed_condition == qmi.N22_NOT_NSD
    N = PartitionedSymmetric.from_blocks([[1.0]], [[0.0, 1.0]], D(-1, 0))
    v = qmi.is_matrix_ellipsoid(N)
    assert not v and v.failed_condition == qmi.KERNEL_INCLUSION


def test_is_matrix_ellipsoid_schur_failure():
    v = qmi.is_matrix_ellipsoid(PartitionedSymmetric(D(-1, -1), 1, 1))
    assert v.failed_condition == qmi.SCHUR_NOT_PSD


def test_random_pi_members_pass(rng):
    for _ in range(20):
        assert qmi.is_matrix_ellipsoid(rand_pi(rng, 2, 3, rank22=2))


def test_psd_factor_examples(rng):
    np.testing.assert_allclose(qmi.psd_factor(D(4, 9)), D(2, 3))
    np.testing.assert_allclose(qmi.psd_factor(np.zeros((2, 2))), np.zeros((2, 2)))
    for _ in range(10):
        A = rand_gram(rng, 5, 3)
        F = qmi.psd_factor(A)
        assert np.linalg.norm(F.T @ F - A) <= 1e-10 * np.linalg.norm(A)
    with pytest.raises(NotPSDError):
        qmi.psd_factor(D(1, -1))


def test_psd_factor_keeps_numerical_rank(rng):
    # roundoff eigenvalues must not become 1e-8 singular values of F
    for _ in range(20):
        A = rand_gram(rng, 4, 1)
        F = qmi.psd_factor(A)
        assert qmi.numerical_rank(F) == 1
        assert np.linalg.norm(qmi.pseudo_inverse(F), 2) < 1e4


def test_ellipsoid_form_examples():
    f = qmi.ellipsoid_form(PartitionedSymmetric(D(4, -9), 1, 1))
    assert (f.Q[0, 0], f.R[0, 0], f.Zc[0, 0]) == pytest.approx((2, 3, 0))
    N = PartitionedSymmetric([[3, 1], [1, -1]], 1, 1)
    f = qmi.ellipsoid_form(N)
    assert qmi.schur_complement(N)[0, 0] == pytest.approx(4)
    assert (f.Q[0, 0], f.R[0, 0], f.Zc[0, 0]) == pytest.approx((2, 1, 1))


def test_ellipsoid_form_dual_evaluation(rng):
    for _ in range(5):
        N = rand_pi(rng, 3, 2)
        f = qmi.ellipsoid_form(N)
        for _ in range(100):
            Z = rng.standard_normal((2, 3))
            a, b = qmi.qmi_eval(Z, N), qmi.ellipsoid_eval(Z, f)
            assert np.linalg.norm(a - b) <= 1e-9 * max(1, np.linalg.norm(a))


def test_ellipsoid_form_rejects_non_ellipsoid():
    with pytest.raises(NotAnEllipsoidError):
        qmi.ellipsoid_form(PartitionedSymmetric(D(1, 1), 1, 1))


# ---------------------------------------------------------------- QMI values

def test_qmi_eval_examples():
    N = PartitionedSymmetric(D(1, -1), 1, 1)
    assert qmi.qmi_eval([[0.0]], N)[0, 0] == pytest.approx(1)
    assert qmi.qmi_eval([[2.0]], N)[0, 0] == pytest.approx(-3)
    with pytest.raises(ShapeMismatchError):
        qmi.qmi_eval(np.zeros((2, 1)), N)


def test_qmi_eval_expansion(rng):
    for _ in range(10):
        N = rand_kernel_compatible(rng, 2, 3, rank22=2)
        for _ in range(10):
            Z = rng.standard_normal((3, 2))
            a, b = qmi.qmi_eval(Z, N), qmi.expansion_eval(Z, N)
            assert np.linalg.norm(a - b) <= 1e-9 * max(1, np.linalg.norm(a))


def test_qmi_eval_batch_matches(rng):
    N = rand_kernel_compatible(rng, 2, 3)
    Zs = rng.standard_normal((7, 3, 2))
    batch = qmi.qmi_eval_batch(Zs, N)
    for Z, v in zip(Zs, batch):
        np.testing.assert_allclose(v, qmi.qmi_eval(Z, N), atol=1e-12)


def test_qmi_membership_examples():
    N = PartitionedSymmetric(D(1, -1), 1, 1)
    assert qmi.qmi_membership([[0.5]], N)
    assert qmi.qmi_eval([[0.5]], N)[0, 0] == pytest.approx(0.75)
    assert not qmi.qmi_membership([[2.0]], N)


def test_membership_at_center_of_flat_ellipsoid(rng):
    N = rand_pi(rng, 2, 2, schur_rank=0)
    f = qmi.ellipsoid_form(N)
    assert qmi.qmi_membership(f.Zc, N)
    assert np.abs(qmi.qmi_eval(f.Zc, N)).max() < 1e-9


def test_decomposition_factors(rng):
    N = rand_kernel_compatible(rng, 3, 2, rank22=1)
    T, Dm = qmi.decomposition_factors(N)
    np.testing.assert_allclose(T @ Dm @ T.T, N.data, atol=1e-9)


# --------------------------------------------------------------- contraction

def test_contraction_factor_examples(rng):
    np.testing.assert_allclose(qmi.contraction_factor(np.eye(3), 0.5 * np.eye(3)),
                               0.5 * np.eye(3))
    A = rng.standard_normal((3, 5))
    M = qmi.contraction_factor(A, A)
    np.testing.assert_allclose(M, A @ np.linalg.pinv(A), atol=1e-10)


def test_contraction_factor_random(rng):
    for _ in range(20):
        A = rng.standard_normal((4, 6))
        C = rng.standard_normal((3, 4))
        C /= max(1.0, np.linalg.norm(C, 2))
        B = C @ A
        M = qmi.contraction_factor(A, B)
        assert np.linalg.norm(M @ A - B) <= 1e-9 * max(1, np.linalg.norm(B))
        assert np.linalg.eigvalsh(np.eye(4) - M.T @ M)[0] >= -1e-9


def test_contraction_factor_precondition():
    with pytest.raises(PreconditionError):
        qmi.contraction_factor(np.eye(2), 2 * np.eye(2))


def test_pinv_contraction_check(rng):
    assert qmi.pinv_contraction_check(np.eye(3))
    assert qmi.pinv_contraction_check(np.zeros((3, 3)))
    for _ in range(50):
        k, l = rng.integers(1, 6, size=2)
        assert qmi.pinv_contraction_check(rng.standard_normal((k, l)))


# ---------------------------------------------------------------- containers

@given(hnp.arrays(float, (3, 3), elements=finite))
def test_partitioned_symmetric_symmetrizes(A):
    N = PartitionedSymmetric(A, 1, 2)
    np.testing.assert_array_equal(N.data, N.data.T)
    assert not N.data.flags.writeable


def test_partitioned_symmetric_validation():
    with pytest.raises(ShapeMismatchError):
        PartitionedSymmetric(np.eye(3), 1, 1)
    with pytest.raises(InvalidInputError):
        PartitionedSymmetric(np.eye(2), 0, 2)


def test_tolerance_override_scoped():
    base = get_tolerances().strict
    with tolerances(strict=1e-3):
        assert get_tolerances().strict == 1e-3
        assert not qmi.is_psd(D(1, 1e-4), strict=True)
    assert get_tolerances().strict == base
    with pytest.raises(KeyError):
        with tolerances(bogus=1.0):
            pass
