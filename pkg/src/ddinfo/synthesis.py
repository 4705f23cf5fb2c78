"""Controller synthesis from an admissible-set QMI and S-lemma certificates.

The informativity LMI in ``(P, L, beta)`` reads::

    [[P - beta I,  0,  0,   0],
     [0,          -P, -L^T, 0],
     [0,          -L,  0,   L],
     [0,           0,  L^T, P]]  -  blkdiag(N, 0)  >=  0

with block sizes ``(n, n, m, n)``. A feasible point gives the common
Lyapunov matrix ``P`` and the gain ``K = L P^{-1}`` for every system in the
admissible set.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import qmi, sdp
from .errors import (InvalidCertificateError, InvalidInputError, NotPSDError,
                     ShapeMismatchError, SolverError)
from .experiment import build_N
from .qmi import PartitionedSymmetric
from .tolerances import get_tolerances

log = logging.getLogger(__name__)

INFORMATIVE = "informative"
NOT_INFORMATIVE = "not-informative"
INCONCLUSIVE = "inconclusive"
FAILED = "failed"


@dataclass(frozen=True, eq=False)
class StabilizationCertificate:
    P: np.ndarray
    L: np.ndarray
    beta: float
    K: np.ndarray
    exact: bool = False
    margins: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def m(self):
        return self.L.shape[0]

    def to_dict(self):
        return {
            "P": self.P.tolist(), "L": self.L.tolist(), "beta": float(self.beta),
            "K": self.K.tolist(), "exact": bool(self.exact),
            "margins": {k: float(v) for k, v in self.margins.items()},
        }

    @classmethod
    def from_dict(cls, d):
        P = np.atleast_2d(np.asarray(d["P"], dtype=float))
        L = np.asarray(d["L"], dtype=float).reshape(-1, P.shape[0])
        if "K" in d:
            K = np.asarray(d["K"], dtype=float).reshape(L.shape)
        else:
            K = gain_from(P, L)
        return cls(P, L, float(d["beta"]), K, bool(d.get("exact", False)),
                   dict(d.get("margins", {})))


@dataclass(frozen=True)
class SLemmaCertificate:
    alpha: float
    beta: float


def gain_from(P, L):
    """``K`` with ``K P = L``, via a linear solve rather than ``inv(P)``."""
    if L.shape[0] == 0:
        return np.zeros_like(L)
    return np.linalg.solve(P.T, L.T).T


def build_M(P, K) -> PartitionedSymmetric:
    """``blkdiag(P, -[I; K] P [I; K]^T)``, the Lyapunov inequality as a QMI."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    K = np.asarray(K, dtype=float).reshape(-1, n)
    ok, lam = qmi.psd_check(P, strict=True)
    if not ok:
        raise NotPSDError(f"P must be positive definite (lambda_min = {lam:.3e})")
    IK = np.vstack([np.eye(n), K])
    return PartitionedSymmetric(linalg.block_diag(P, -IK @ P @ IK.T), n,
                                n + K.shape[0])


def _check_partition(N: PartitionedSymmetric, n, m):
    if m < 1:
        raise InvalidInputError("synthesis needs at least one input (m >= 1)")
    if (N.q, N.r) != (n, n + m):
        raise ShapeMismatchError(
            f"N has partition ({N.q}, {N.r}), expected ({n}, {n + m})")


def informativity_blocks(N: PartitionedSymmetric, n, m):
    """Constant part and variable blocks of the informativity LMI."""
    _check_partition(N, n, m)
    sizes = (n, n, m, n)
    constant = -linalg.block_diag(N.data, np.zeros((n, n)))
    T = sdp.Term
    blocks = [
        sdp.Block(0, 0, (T("P"), T("beta", left=np.eye(n), coeff=-1.0))),
        sdp.Block(1, 1, (T("P", coeff=-1.0),)),
        sdp.Block(1, 2, (T("L", transpose=True, coeff=-1.0),)),
        sdp.Block(2, 3, (T("L"),)),
        sdp.Block(3, 3, (T("P"),)),
    ]
    return sizes, constant, blocks


def assemble_informativity_lmi(N: PartitionedSymmetric, n, m, eps_P=None,
                               eps_beta=None) -> sdp.SdpProblem:
    """SDP in ``P`` (n x n), ``L`` (m x n) and ``beta`` maximizing ``beta``.

    Strictness of ``P > 0`` and ``beta > 0`` is imposed through margins that
    default to ``margin * max(1, ||N||_2)``.
    """
    _check_partition(N, n, m)
    scale = max(1.0, np.linalg.norm(N.data, 2))
    margin = get_tolerances().margin
    eps_P = margin * scale if eps_P is None else eps_P
    eps_beta = margin * scale if eps_beta is None else eps_beta
    sizes, constant, blocks = informativity_blocks(N, n, m)
    variables = (sdp.symmetric("P", n), sdp.rectangular("L", m, n),
                 sdp.scalar("beta"))
    constraints = (
        sdp.LmiConstraint("informativity", sizes, constant, tuple(blocks)),
        sdp.LmiConstraint("P_margin", (n,), -eps_P * np.eye(n),
                          (sdp.Block(0, 0, (sdp.Term("P"),)),)),
        sdp.LmiConstraint("beta_margin", (1,), -eps_beta * np.eye(1),
                          (sdp.Block(0, 0, (sdp.Term("beta"),)),)),
    )
    return sdp.SdpProblem(variables, constraints, objective="beta")


def informativity_matrix(N: PartitionedSymmetric, P, L, beta):
    """Dense left-hand side of the informativity LMI at ``(P, L, beta)``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    L = np.asarray(L, dtype=float).reshape(-1, n)
    m = L.shape[0]
    _check_partition(N, n, m)
    Z = np.zeros
    H = np.block([
        [P - beta * np.eye(n), Z((n, n)), Z((n, m)), Z((n, n))],
        [Z((n, n)), -P, -L.T, Z((n, n))],
        [Z((m, n)), -L, Z((m, m)), L],
        [Z((n, n)), Z((n, n)), L.T, P],
    ])
    return qmi.sym(H - linalg.block_diag(N.data, np.zeros((n, n))))


def _centering_problem(N, n, m, beta, eps_P):
    """Fix ``beta`` and push the LMI into its interior by a slack ``t``."""
    sizes, constant, blocks = informativity_blocks(N, n, m)
    constant = constant.copy()
    constant[:n, :n] -= beta * np.eye(n)
    blocks = [b for b in blocks if (b.row, b.col) != (0, 0)]
    blocks.append(sdp.Block(0, 0, (sdp.Term("P"),)))
    for i, k in enumerate(sizes):
        if k:
            blocks.append(sdp.Block(i, i, (sdp.Term("t", left=np.eye(k),
                                                    coeff=-1.0),)))
    variables = (sdp.symmetric("P", n), sdp.rectangular("L", m, n),
                 sdp.scalar("t"))
    constraints = (
        sdp.LmiConstraint("informativity", sizes, constant, tuple(blocks)),
        sdp.LmiConstraint("P_margin", (n,), -eps_P * np.eye(n),
                          (sdp.Block(0, 0, (sdp.Term("P"),)),)),
        sdp.LmiConstraint("t_cap", (1,), np.eye(1),
                          (sdp.Block(0, 0, (sdp.Term("t", coeff=-1.0),)),)),
    )
    return sdp.SdpProblem(variables, constraints, objective="t")


@dataclass(frozen=True, eq=False)
class CertificateReport:
    passed: bool
    lmi_margin: float
    P_min_eig: float
    beta: float
    kp_residual: float
    slemma_margin: float
    reasons: tuple = ()

    def to_dict(self):
        return {"passed": self.passed, "lmi_margin": self.lmi_margin,
                "P_min_eig": self.P_min_eig, "beta": self.beta,
                "kp_residual": self.kp_residual,
                "slemma_margin": self.slemma_margin,
                "reasons": list(self.reasons)}


def verify_certificate(cert: StabilizationCertificate,
                       N: PartitionedSymmetric) -> CertificateReport:
    """Replay the informativity LMI and the equivalent S-lemma certificate.

    The S-lemma check uses ``alpha = 1``, the same ``beta`` and
    ``M = build_M(P, K)``. Margins are judged against
    ``feasibility * max(1, ||N||_2)``.
    """
    tol = get_tolerances()
    scale = max(1.0, np.linalg.norm(N.data, 2))
    reasons = []
    lmi_margin = qmi.min_eig(informativity_matrix(N, cert.P, cert.L, cert.beta))
    if lmi_margin < -tol.feasibility * scale:
        reasons.append(f"informativity LMI violated (lambda_min = {lmi_margin:.3e})")
    p_ok, p_min = qmi.psd_check(cert.P, strict=True)
    if not p_ok:
        reasons.append(f"P is not positive definite (lambda_min = {p_min:.3e})")
    if not cert.beta > 0:
        reasons.append(f"beta = {cert.beta:.3e} is not positive")
    kp = np.linalg.norm(cert.K @ cert.P - cert.L)
    if kp > 1e-8 * max(1.0, np.linalg.norm(cert.L)):
        reasons.append(f"K P differs from L by {kp:.3e}")
    slemma_margin = -np.inf
    if p_ok:
        M = build_M(cert.P, cert.K)
        slemma_margin = slemma_margin_of(M, N, 1.0, cert.beta)
        if slemma_margin < -tol.feasibility * scale:
            reasons.append(
                f"S-lemma certificate violated (lambda_min = {slemma_margin:.3e})")
    return CertificateReport(not reasons, lmi_margin, p_min, float(cert.beta),
                             float(kp), float(slemma_margin), tuple(reasons))


@dataclass(frozen=True, eq=False)
class InformativityResult:
    status: str
    certificate: Optional[StabilizationCertificate]
    exact: bool
    beta_max: Optional[float] = None
    report: Optional[CertificateReport] = None
    solution: Optional[sdp.SdpSolution] = None
    message: str = ""

    @property
    def certified(self):
        """True for a not-informative verdict backed by the exact condition."""
        return self.status == NOT_INFORMATIVE and self.exact

    @property
    def label(self):
        if self.status == NOT_INFORMATIVE:
            return "certified not informative"
        if self.status == INCONCLUSIVE and self.solution is not None \
                and self.solution.status == sdp.INFEASIBLE:
            return "sufficient-condition infeasible"
        return self.status


def solve_informativity_N(N: PartitionedSymmetric, n, m, exact=False,
                          center=True, options=None) -> InformativityResult:
    """Solve the informativity LMI for a given admissible-set matrix ``N``.

    The problem is solved for ``N / s`` with ``s = max(1, ||N||_2)`` and the
    solution scaled back; the LMI is homogeneous in ``(P, L, beta, N)``.
    With `center`, a second solve fixes ``beta`` at half its maximum and
    maximizes the interior slack of the LMI.
    """
    _check_partition(N, n, m)
    s = max(1.0, np.linalg.norm(N.data, 2))
    Ns = N.scaled(1.0 / s)
    margin = get_tolerances().margin
    try:
        sol = sdp.solve(assemble_informativity_lmi(Ns, n, m, margin, margin),
                        options)
    except SolverError as exc:
        return InformativityResult(FAILED, None, exact, message=str(exc))
    if sol.status == sdp.INFEASIBLE:
        status = NOT_INFORMATIVE if exact else INCONCLUSIVE
        return InformativityResult(status, None, exact, solution=sol,
                                   message="informativity LMI is infeasible")
    if sol.status != sdp.FEASIBLE:
        status = INCONCLUSIVE if sol.status == sdp.INACCURATE else FAILED
        return InformativityResult(status, None, exact, solution=sol,
                                   message=f"backend status {sol.status}: "
                                   f"{sol.attempts}")
    P, L = sol.assignment["P"], sol.assignment["L"]
    beta_max = float(sol.objective_value)
    beta = beta_max
    if center:
        csol = sdp.solve(_centering_problem(Ns, n, m, 0.5 * beta_max, margin),
                         options)
        if csol.feasible and csol.objective_value > 0:
            P, L = csol.assignment["P"], csol.assignment["L"]
            beta = 0.5 * beta_max
    P, L, beta = qmi.sym(P) * s, L.reshape(m, n) * s, beta * s
    K = gain_from(P, L)
    cert = StabilizationCertificate(P, L, beta, K, exact)
    report = verify_certificate(cert, N)
    cert = StabilizationCertificate(P, L, beta, K, exact, {
        "lmi": report.lmi_margin, "P_min_eig": report.P_min_eig,
        "slemma": report.slemma_margin})
    if not report.passed:
        return InformativityResult(FAILED, cert, exact, beta_max * s, report,
                                   sol, "; ".join(report.reasons))
    return InformativityResult(INFORMATIVE, cert, exact, beta_max * s, report,
                               sol)


def solve_informativity(model, data, center=True, options=None):
    """Decide informativity for quadratic stabilization from noisy data.

    Infeasibility is a certified negative answer only when the model's
    admissible set equals its QMI outer description
    (``model.sets_coincide``); otherwise it is reported inconclusive.
    """
    N = build_N(model, data)
    return solve_informativity_N(N, data.n, data.m,
                                 exact=model.sets_coincide, center=center,
                                 options=options)


def _slemma_matrix(M, N, alpha, beta):
    D = M.data - alpha * N.data
    D = D.copy()
    D[:M.q, :M.q] -= beta * np.eye(M.q)
    return qmi.sym(D)


def slemma_margin_of(M: PartitionedSymmetric, N: PartitionedSymmetric, alpha,
                     beta):
    return qmi.min_eig(_slemma_matrix(M, N, alpha, beta))


def check_slemma_certificate(M: PartitionedSymmetric, N: PartitionedSymmetric,
                             alpha, beta):
    """``M - alpha N - blkdiag(beta I, 0) >= 0``; returns ``(valid, margin)``."""
    if (M.q, M.r) != (N.q, N.r):
        raise ShapeMismatchError("M and N must share order and partition")
    if alpha < 0 or not beta > 0:
        raise InvalidCertificateError(
            f"need alpha >= 0 and beta > 0, got alpha={alpha}, beta={beta}")
    return qmi.psd_check(_slemma_matrix(M, N, alpha, beta))


@dataclass(frozen=True, eq=False)
class SLemmaSearchResult:
    certificate: Optional[SLemmaCertificate]
    beta_max: Optional[float]
    preconditions: dict
    witness: Optional[np.ndarray]
    status: str

    @property
    def found(self):
        return self.certificate is not None

    @property
    def preconditions_hold(self):
        return all(self.preconditions.values())


def find_qmi_witness(N: PartitionedSymmetric, rng_seed=0, restarts=20):
    """Some ``Z`` with ``[I; Z]^T N [I; Z] >= 0``, or ``None``.

    When ``N22 <= 0`` this is the LMI
    ``[[N11 + N12 Z + Z^T N21, (R Z)^T], [R Z, I]] >= 0`` with
    ``R^T R = -N22``; otherwise a local search maximizes the smallest
    eigenvalue of the QMI from random starts.
    """
    if qmi.is_psd(-N.n22):
        R = qmi.psd_factor(-N.n22)
        q, r = N.q, N.r
        T = sdp.Term
        problem = sdp.SdpProblem(
            (sdp.rectangular("Z", r, q),),
            (sdp.LmiConstraint(
                "qmi", (q, r), linalg.block_diag(N.n11, np.eye(r)),
                (sdp.Block(0, 0, (T("Z", left=N.n12, coeff=2.0),)),
                 sdp.Block(1, 0, (T("Z", left=R),)))),))
        sol = sdp.solve(problem)
        if sol.status == sdp.INFEASIBLE:
            return None
        if sol.assignment:
            Z = sol.assignment["Z"].reshape(r, q)
            if qmi.qmi_membership(Z, N):
                return Z
        return None
    from scipy.optimize import minimize

    rng = np.random.default_rng(rng_seed)
    shape = (N.r, N.q)

    # capped so the search stops climbing once inside the set
    def neg_lam(z):
        return -min(qmi.min_eig(qmi.qmi_eval(z.reshape(shape), N)), 1.0)

    for _ in range(restarts):
        res = minimize(neg_lam, rng.standard_normal(N.r * N.q),
                       method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        Z = res.x.reshape(shape)
        if qmi.qmi_membership(Z, N):
            return Z
    return None


def slemma_preconditions(M: PartitionedSymmetric, N: PartitionedSymmetric,
                         witness=None):
    """Report the hypotheses of the extended S-lemma.

    Returns ``(flags, witness)`` where `flags` records nonemptiness of the
    QMI set of `N`, ``M22 <= 0`` and ``ker M22 ⊆ ker M12``.
    """
    if witness is not None and not qmi.qmi_membership(witness, N):
        witness = None
    if witness is None:
        witness = find_qmi_witness(N)
    flags = {
        "nonempty": witness is not None,
        "M22_nsd": bool(qmi.is_psd(-M.n22)),
        "kernel_inclusion": bool(qmi.kernel_inclusion(M.n22, M.n12)[0]),
    }
    return flags, witness


def search_slemma_certificate(M: PartitionedSymmetric, N: PartitionedSymmetric,
                              witness=None, beta_cap=10.0,
                              options=None) -> SLemmaSearchResult:
    """Maximize ``beta`` over ``alpha >= 0`` subject to the S-lemma LMI.

    ``M`` and ``N`` are normalized to unit spectral norm for the solve.
    A certificate is returned only if it passes
    :func:`check_slemma_certificate` with ``beta`` above the strict
    tolerance. `beta_cap` bounds the normalized objective.
    """
    if (M.q, M.r) != (N.q, N.r):
        raise ShapeMismatchError("M and N must share order and partition")
    flags, witness = slemma_preconditions(M, N, witness)
    if not all(flags.values()):
        log.info("S-lemma preconditions not met: %s", flags)
    sM = max(np.linalg.norm(M.data, 2), 1e-300)
    sN = max(np.linalg.norm(N.data, 2), 1e-300)
    order, q = M.order, M.q
    E11 = np.zeros((order, order))
    E11[:q, :q] = np.eye(q)
    T = sdp.Term
    problem = sdp.SdpProblem(
        (sdp.scalar("alpha"), sdp.scalar("beta")),
        (sdp.LmiConstraint("slemma", (order,), M.data / sM,
                           (sdp.Block(0, 0, (T("alpha", left=-N.data / sN),
                                             T("beta", left=-E11))),)),
         sdp.LmiConstraint("alpha_nonneg", (1,), np.zeros((1, 1)),
                           (sdp.Block(0, 0, (T("alpha"),)),)),
         sdp.LmiConstraint("beta_cap", (1,), beta_cap * np.eye(1),
                           (sdp.Block(0, 0, (T("beta", coeff=-1.0),)),))),
        objective="beta")
    sol = sdp.solve(problem, options)
    if not sol.assignment:
        return SLemmaSearchResult(None, None, flags, witness, sol.status)
    alpha = max(0.0, float(sol.assignment["alpha"][0, 0])) * sM / sN
    beta = float(sol.assignment["beta"][0, 0]) * sM
    thresh = get_tolerances().strict * max(1.0, np.linalg.norm(M.data, 2))
    if beta > thresh:
        # back off slightly into the interior before the exact replay
        for b in (beta, 0.999 * beta, 0.9 * beta, 0.5 * beta):
            if b <= thresh:
                break
            ok, _ = check_slemma_certificate(M, N, alpha, b)
            if ok:
                return SLemmaSearchResult(SLemmaCertificate(alpha, b), beta,
                                          flags, witness, sol.status)
    return SLemmaSearchResult(None, beta, flags, witness, sol.status)
