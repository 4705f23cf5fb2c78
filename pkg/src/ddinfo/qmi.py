"""Linear algebra for quadratic matrix inequalities (QMIs).

A QMI in the unknown ``Z`` (shape ``r x q``) reads::

    [I_q; Z]^T N [I_q; Z] >= 0

with ``N`` a symmetric ``(q + r) x (q + r)`` matrix split into blocks
``N11 (q x q)``, ``N12 (q x r)`` and ``N22 (r x r)``. The solution set is a
*matrix ellipsoid* when ``N22 <= 0``, ``ker N22 ⊆ ker N12`` and the
generalized Schur complement ``N | N22 = N11 - N12 N22^+ N21`` is PSD.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (InvalidInputError, NotAnEllipsoidError, NotPSDError,
                     NumericalError, PreconditionError, ShapeMismatchError)
from .tolerances import get_tolerances

N22_NOT_NSD = "n22-not-psd-negative"
KERNEL_INCLUSION = "kernel-inclusion"
SCHUR_NOT_PSD = "schur-not-psd"
NONE = "none"


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D array, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def _as_square(A, name="A"):
    A = _as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {A.shape}")
    return A


def sym(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def _freeze(A):
    A = np.array(A, dtype=float)
    A.setflags(write=False)
    return A


@dataclass(frozen=True, eq=False)
class PartitionedSymmetric:
    """Symmetric matrix of order ``q + r`` with a declared 2x2 block split.

    The data is symmetrized on construction and stored read-only.
    """
    data: np.ndarray
    q: int
    r: int

    def __post_init__(self):
        data = _as_square(self.data, "data")
        q, r = int(self.q), int(self.r)
        if q < 1 or r < 1:
            raise InvalidInputError(f"block sizes must be >= 1, got q={q}, r={r}")
        if q + r != data.shape[0]:
            raise ShapeMismatchError(
                f"q + r = {q + r} does not match matrix order {data.shape[0]}")
        object.__setattr__(self, "data", _freeze(sym(data)))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_blocks(cls, N11, N12, N22):
        N11, N12, N22 = (np.atleast_2d(np.asarray(X, dtype=float))
                         for X in (N11, N12, N22))
        return cls(np.block([[N11, N12], [N12.T, N22]]), N11.shape[0],
                   N22.shape[0])

    @property
    def order(self):
        return self.q + self.r

    @property
    def n11(self):
        return self.data[:self.q, :self.q]

    @property
    def n12(self):
        return self.data[:self.q, self.q:]

    @property
    def n21(self):
        return self.data[self.q:, :self.q]

    @property
    def n22(self):
        return self.data[self.q:, self.q:]

    def scaled(self, c):
        return PartitionedSymmetric(c * self.data, self.q, self.r)

    def __repr__(self):
        return f"PartitionedSymmetric(q={self.q}, r={self.r}, data=\n{self.data!r})"


@dataclass(frozen=True, eq=False)
class EllipsoidForm:
    """Factors of ``Q^T Q - (Z - Zc)^T R^T R (Z - Zc) >= 0``."""
    Q: np.ndarray
    R: np.ndarray
    Zc: np.ndarray


@dataclass(frozen=True, eq=False)
class EllipsoidVerdict:
    is_ellipsoid: bool
    failed_condition: str
    witness: np.ndarray

    def __bool__(self):
        return self.is_ellipsoid


def _psd_threshold(A, strict):
    tol = get_tolerances()
    norm = np.linalg.norm(A, 2) if A.size else 0.0
    if strict:
        return tol.strict * max(1.0, norm)
    return -(tol.psd_abs + tol.psd_rel * norm)


def psd_check(A, strict=False):
    """Tolerance-aware test of ``A >= 0`` (or ``A > 0`` if `strict`).

    Returns
    -------
    (bool, float)
        The verdict and the minimum eigenvalue of the symmetrized matrix.
    """
    A = sym(_as_square(A))
    if A.size == 0:
        return True, np.inf
    lam_min = float(np.linalg.eigvalsh(A)[0])
    return lam_min >= _psd_threshold(A, strict), lam_min


def is_psd(A, strict=False):
    return psd_check(A, strict)[0]


def min_eig(A):
    A = sym(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(A)[0])


def pseudo_inverse(A, rank_tol=None):
    """Moore-Penrose pseudo-inverse with the package rank cutoff."""
    A = _as_matrix(A)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    if rank_tol is None:
        rank_tol = get_tolerances().rank
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = rank_tol * s[0] if s.size else 0.0
    keep = s > cutoff
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(A, rank_tol=None):
    A = _as_matrix(A)
    if A.size == 0:
        return 0
    if rank_tol is None:
        rank_tol = get_tolerances().rank
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rank_tol * s[0]))


def kernel_basis(A, rank_tol=None):
    """Orthonormal basis (as columns) of the numerical kernel of `A`."""
    A = _as_matrix(A)
    if A.shape[0] == 0 or not np.any(A):
        return np.eye(A.shape[1])
    if rank_tol is None:
        rank_tol = get_tolerances().rank
    return linalg.null_space(A, rcond=rank_tol)


def range_basis(A, rank_tol=None):
    A = _as_matrix(A)
    if A.size == 0 or not np.any(A):
        return np.zeros((A.shape[0], 0))
    if rank_tol is None:
        rank_tol = get_tolerances().rank
    return linalg.orth(A, rcond=rank_tol)


def schur_complement(N: PartitionedSymmetric):
    """Generalized Schur complement ``N11 - N12 N22^+ N21``."""
    return sym(N.n11 - N.n12 @ pseudo_inverse(N.n22) @ N.n21)


def kernel_inclusion(A, B):
    """Check ``ker A ⊆ ker B``.

    Returns ``(True, empty)`` on success, otherwise ``(False, v)`` with `v`
    the kernel vector of `A` that `B` maps furthest from zero.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(
            f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    V = kernel_basis(A)
    if V.shape[1] == 0 or B.shape[0] == 0:
        return True, np.zeros(0)
    images = B @ V
    norms = np.linalg.norm(images, axis=0)
    scale = max(1.0, np.linalg.norm(A, 2) if A.size else 0.0,
                np.linalg.norm(B, 2))
    if norms.max() <= get_tolerances().kernel * scale:
        return True, np.zeros(0)
    # the worst direction inside ker A, not just the worst basis column
    _, _, Vt = np.linalg.svd(images)
    return False, V @ Vt[0]


def is_matrix_ellipsoid(N: PartitionedSymmetric) -> EllipsoidVerdict:
    """Test the three ellipsoid conditions in order, reporting the first failure."""
    N22 = N.n22
    ok, _ = psd_check(-N22)
    if not ok:
        w, V = np.linalg.eigh(N22)
        return EllipsoidVerdict(False, N22_NOT_NSD, V[:, -1])
    ok, witness = kernel_inclusion(N22, N.n12)
    if not ok:
        return EllipsoidVerdict(False, KERNEL_INCLUSION, witness)
    S = schur_complement(N)
    ok, _ = psd_check(S)
    if not ok:
        w, V = np.linalg.eigh(S)
        return EllipsoidVerdict(False, SCHUR_NOT_PSD, V[:, 0])
    return EllipsoidVerdict(True, NONE, np.zeros(0))


def psd_factor(A):
    """Symmetric square root ``F`` with ``F^T F = A`` for PSD `A`.

    Eigenvalues that are negative but inside the PSD tolerance, or below the
    rank cutoff, are set to zero so that ``F`` has the numerical rank of `A`;
    anything more negative raises :class:`NotPSDError`.
    """
    A = sym(_as_square(A))
    if A.size == 0:
        return np.zeros_like(A)
    ok, lam_min = psd_check(A)
    if not ok:
        raise NotPSDError(f"matrix is not PSD (lambda_min = {lam_min:.3e})")
    w, V = np.linalg.eigh(A)
    w = np.where(w > get_tolerances().rank * max(w[-1], 0.0), w, 0.0)
    return sym((V * np.sqrt(w)) @ V.T)


def ellipsoid_form(N: PartitionedSymmetric) -> EllipsoidForm:
    verdict = is_matrix_ellipsoid(N)
    if not verdict:
        raise NotAnEllipsoidError(
            f"N is not a matrix ellipsoid ({verdict.failed_condition})")
    Q = psd_factor(schur_complement(N))
    R = psd_factor(-N.n22)
    Zc = -pseudo_inverse(N.n22) @ N.n21
    return EllipsoidForm(Q, R, Zc)


def ellipsoid_eval(Z, form: EllipsoidForm):
    D = np.asarray(Z, dtype=float) - form.Zc
    RD = form.R @ D
    return sym(form.Q.T @ form.Q - RD.T @ RD)


def _check_z(Z, N):
    Z = _as_matrix(Z, "Z")
    if Z.shape != (N.r, N.q):
        raise ShapeMismatchError(
            f"Z has shape {Z.shape}, expected ({N.r}, {N.q})")
    return Z


def qmi_eval(Z, N: PartitionedSymmetric):
    """Left-hand side ``[I; Z]^T N [I; Z]`` (a symmetric ``q x q`` matrix)."""
    Z = _check_z(Z, N)
    cross = N.n12 @ Z
    return sym(N.n11 + cross + cross.T + Z.T @ N.n22 @ Z)


def qmi_eval_batch(Zs, N: PartitionedSymmetric):
    """Vectorized :func:`qmi_eval` over a stack of shape ``(k, r, q)``."""
    Zs = np.asarray(Zs, dtype=float)
    cross = np.einsum("ij,kjl->kil", N.n12, Zs)
    quad = np.einsum("kji,jm,kml->kil", Zs, N.n22, Zs)
    out = N.n11 + cross + np.swapaxes(cross, 1, 2) + quad
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def qmi_membership(Z, N: PartitionedSymmetric):
    return psd_check(qmi_eval(Z, N))[0]


def decomposition_factors(N: PartitionedSymmetric):
    """Congruence factors ``(T, D)`` with ``N = T D T^T``.

    Valid when ``ker N22 ⊆ ker N12``; ``T = [[I, N12 N22^+], [0, I]]`` and
    ``D = blkdiag(N | N22, N22)``.
    """
    q, r = N.q, N.r
    T = np.block([[np.eye(q), N.n12 @ pseudo_inverse(N.n22)],
                  [np.zeros((r, q)), np.eye(r)]])
    D = linalg.block_diag(schur_complement(N), N.n22)
    return T, D


def expansion_eval(Z, N: PartitionedSymmetric):
    """``N|N22 + (Z + N22^+ N21)^T N22 (Z + N22^+ N21)``."""
    Z = _check_z(Z, N)
    Y = Z + pseudo_inverse(N.n22) @ N.n21
    return sym(schur_complement(N) + Y.T @ N.n22 @ Y)


def contraction_factor(A, B):
    """Return ``M = B A^+`` with ``B = M A`` and ``M^T M <= I``.

    Requires ``A^T A >= B^T B``, which forces ``ker A ⊆ ker B`` and makes
    this particular choice of `M` valid.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatchError(
            f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    ok, lam = psd_check(A.T @ A - B.T @ B)
    if not ok:
        raise PreconditionError(
            f"A^T A - B^T B is not PSD (lambda_min = {lam:.3e})")
    M = B @ pseudo_inverse(A)
    scale = max(1.0, np.linalg.norm(A, 2) * max(1.0, np.linalg.norm(B, 2)))
    if np.linalg.norm(M @ A - B) > 1e-8 * scale:
        raise NumericalError("contraction factor does not reproduce B = M A")
    if not is_psd(np.eye(M.shape[1]) - M.T @ M):
        raise NumericalError("contraction factor has norm above one")
    return M


def pinv_contraction_check(A):
    """``A^+ A <= I`` (the projector onto the row space is a contraction)."""
    A = _as_matrix(A)
    P = pseudo_inverse(A) @ A
    return is_psd(np.eye(A.shape[1]) - P)
