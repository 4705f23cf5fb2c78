"""Solver-free checks of admissible-set claims.

These routines sample systems from the admissible set and its QMI outer
description, rebuild data perturbations that explain a given system, replay
the weighted-projection reading of the noise estimate and hunt for
counterexamples to S-lemma implications. Everything here relies on dense
linear algebra only, except the optional membership sub-solve used to
double-check reconstruction failures.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize

from . import qmi, sdp
from .errors import (AssumptionViolatedError, PreconditionError,
                     SamplingExhaustedError)
from .experiment import build_N, noise_factors, sample_perturbation
from .qmi import PartitionedSymmetric
from .tolerances import get_tolerances

log = logging.getLogger(__name__)

FORWARD = "forward-construction"
ELLIPSOID = "ellipsoid-parametrization"
REJECTION = "rejection"

MAX_CONSECUTIVE_REJECTIONS = 100_000


def worker_count():
    """Thread cap for per-sample checks, from ``DDINFO_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DDINFO_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers=None):
    workers = workers or worker_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class SampledSystem:
    A: np.ndarray
    B: np.ndarray
    provenance: str

    @property
    def Z(self):
        """``[A B]^T``, the QMI unknown for the admissible-set matrix."""
        return np.hstack([self.A, self.B]).T


@dataclass(frozen=True, eq=False)
class MembershipWitness:
    Delta_hat: np.ndarray
    M1: Optional[np.ndarray]
    residual: float = 0.0
    qmi_margin: float = np.inf
    valid: bool = True


def _split(Z, n):
    A = Z[:n].T
    B = Z[n:].T
    return A, B


# ---------------------------------------------------------------- sampling

def _member_mask(Zs, N: PartitionedSymmetric):
    vals = qmi.qmi_eval_batch(Zs, N)
    lam = np.linalg.eigvalsh(vals)[:, 0]
    tol = get_tolerances()
    norms = np.linalg.norm(vals, ord=2, axis=(1, 2))
    return lam >= -(tol.psd_abs + tol.psd_rel * norms)


def sample_qmi(N: PartitionedSymmetric, count, rng, witness=None,
               free_scale=1.0):
    """Draw `count` members of the QMI set of `N` as ``r x q`` arrays.

    Returns ``(samples, provenance)``. For matrix ellipsoids the samples are
    ``Zc + R^+ U Q + (I - R^+ R) V`` with ``U`` a random contraction; the
    second term moves freely along ``ker N22``. Otherwise Gaussian
    perturbations of a known member are accepted or rejected, with a radius
    that grows after acceptances and shrinks after rejections.
    """
    if qmi.is_matrix_ellipsoid(N):
        form = qmi.ellipsoid_form(N)
        R_pinv = qmi.pseudo_inverse(form.R)
        free = np.eye(N.r) - R_pinv @ form.R
        has_free = np.linalg.norm(free) > 1e-12
        out = []
        for _ in range(count):
            G = rng.standard_normal((N.r, N.q))
            nrm = np.linalg.norm(G, 2)
            U = G / nrm * rng.uniform() if nrm > 0 else G
            Z = form.Zc + R_pinv @ U @ form.Q
            if has_free:
                Z = Z + free_scale * free @ rng.standard_normal((N.r, N.q))
            out.append(Z)
        return out, ELLIPSOID

    if witness is None:
        from .synthesis import find_qmi_witness
        witness = find_qmi_witness(N)
    if witness is None or not qmi.qmi_membership(witness, N):
        raise PreconditionError("rejection sampling needs a member of the set")
    witness = np.asarray(witness, dtype=float)
    radius = 0.1 * max(1.0, np.linalg.norm(witness))
    out, misses, batch = [], 0, 64
    while len(out) < count:
        Zs = witness + radius * rng.standard_normal((batch, N.r, N.q))
        ok = _member_mask(Zs, N)
        for Z, good in zip(Zs, ok):
            if good:
                out.append(Z)
                misses = 0
                if len(out) == count:
                    break
            else:
                misses += 1
                if misses >= MAX_CONSECUTIVE_REJECTIONS:
                    raise SamplingExhaustedError(
                        f"{misses} consecutive rejections at radius {radius:.3e}")
        rate = ok.mean()
        radius *= 1.5 if rate > 0.5 else (0.5 if rate < 0.1 else 1.0)
    return out, REJECTION


def sample_sigma_bar(N: PartitionedSymmetric, count, rng_seed=0, witness=None,
                     free_scale=1.0) -> List[SampledSystem]:
    """Sample ``(A, B)`` with ``[A B]^T`` in the QMI set of `N`."""
    rng = np.random.default_rng(rng_seed)
    if witness is not None and np.ndim(witness) == 2 \
            and np.shape(witness) != (N.r, N.q):
        witness = np.asarray(witness).T
    Zs, how = sample_qmi(N, count, rng, witness, free_scale)
    return [SampledSystem(*_split(Z, N.q), how) for Z in Zs]


# ------------------------------------------------------ forward construction

def _noise_margin(Delta_hat, Phi_hat):
    return qmi.min_eig(qmi.qmi_eval(Delta_hat.T, Phi_hat))


def _contraction_of(Delta_hat, factors):
    D = (Delta_hat - factors.center) @ factors.R
    return qmi.pseudo_inverse(factors.Q_hat) @ D


def _witness(Delta_hat, model, S, Xs, factors):
    resid = float(np.linalg.norm(S @ Xs - S @ model.E @ Delta_hat))
    margin = _noise_margin(Delta_hat, model.Phi_hat)
    val = qmi.qmi_eval(Delta_hat.T, model.Phi_hat)
    ok_qmi = qmi.is_psd(val)
    scale = max(1.0, np.linalg.norm(S, 2) * np.linalg.norm(Xs, 2))
    valid = resid <= 1e-8 * scale and ok_qmi
    return MembershipWitness(Delta_hat, _contraction_of(Delta_hat, factors),
                             resid, margin, bool(valid))


@dataclass
class ForwardSamples:
    samples: list = field(default_factory=list)
    attempts: int = 0
    inconsistent: int = 0
    outside: int = 0

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def forward_sample_sigma(model, data, count, rng_seed=0, max_attempts=None):
    """Admissible systems built from explicit feasible perturbations.

    Each draw takes a feasible ``Delta_hat``, fits ``[A B]`` to the
    perturbed data by least squares and then nudges ``Delta_hat`` by
    ``Q_hat (S E Q_hat)^+ r`` to cancel the fit residual ``r``. Only draws
    where the adjusted perturbation is exactly consistent and still
    satisfies the noise QMI are kept; the rest are counted in the result.
    """
    n = data.n
    rng = np.random.default_rng(rng_seed)
    factors = noise_factors(model.Phi_hat)
    Xs = data.stacked()
    max_attempts = max_attempts or 200 * count
    out = ForwardSamples()
    while len(out) < count and out.attempts < max_attempts:
        out.attempts += 1
        rho = rng.uniform(0.0, 1.0)
        Delta_hat, _ = sample_perturbation(model, rng, rho, factors=factors)
        D = Xs - model.E @ Delta_hat          # = [X+ - Dz; -(X- - Dx); -(U- - Du)]
        Zm = -D[n:]
        AB = np.linalg.lstsq(Zm.T, D[:n].T, rcond=None)[0].T
        S = np.hstack([np.eye(n), AB])
        SEQ = S @ model.E @ factors.Q_hat
        r = S @ D
        # the smallest correction in the noise geometry, as in the projection
        Delta_hat = Delta_hat + factors.Q_hat @ qmi.pseudo_inverse(SEQ) @ r
        w = _witness(Delta_hat, model, S, Xs, factors)
        if w.residual > 1e-8 * max(1.0, np.linalg.norm(S, 2) * np.linalg.norm(Xs, 2)):
            out.inconsistent += 1
            continue
        if not w.valid:
            out.outside += 1
            continue
        out.samples.append((SampledSystem(AB[:, :n], AB[:, n:], FORWARD), w))
    return out


# ------------------------------------------------------------ reconstruction

def reconstruct_perturbation(A, B, model, data, N=None):
    """Rebuild ``Delta_hat`` that explains ``(A, B)`` from the data.

    Applies when ``Phi_hat22 < 0`` or ``im E0 ⊆ im E``; returns ``None``
    otherwise. The returned witness carries the consistency residual
    ``||S X - S E Delta_hat||`` and the noise-QMI check in ``valid``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    N = build_N(model, data) if N is None else N
    Z = np.hstack([A, B]).T
    if not qmi.qmi_membership(Z, N):
        raise PreconditionError("(A, B) is not in the QMI outer set")
    diag = model.diagnostics
    if not (diag.phi22_negdef or diag.imE0_in_imE):
        return None
    f = noise_factors(model.Phi_hat)
    Q = model.E @ f.Q_hat
    Delta_c = model.E @ f.center
    S = np.hstack([np.eye(data.n), A, B])
    Xs = data.stacked()
    core = qmi.pseudo_inverse(S @ Q) @ S @ (Xs - Delta_c)
    if diag.phi22_negdef:
        Delta_hat = f.Q_hat @ core + f.center
    else:
        F, *_ = np.linalg.lstsq(model.E, model.E0, rcond=None)
        if np.linalg.norm(model.E @ F - model.E0) > 1e-8 * max(
                1.0, np.linalg.norm(model.E, 2)):
            raise PreconditionError("E F = E0 has no exact solution")
        RRp = f.R @ f.R_pinv
        Delta_hat = (f.Q_hat @ core @ RRp
                     + F @ S @ (Xs - Delta_c) @ (np.eye(model.T) - RRp)
                     + f.center)
    return _witness(Delta_hat, model, S, Xs, f)


def sigma_membership_sdp(A, B, model, data, options=None):
    """Decide by SDP whether some feasible ``Delta_hat`` explains ``(A, B)``.

    Returns ``True``/``False`` or ``None`` if the backend is inconclusive.
    The unknowns are ``Delta_hat = D0 + V H`` over ``ker(S E)``; the noise
    QMI becomes the Schur-complement LMI
    ``[[Phi11 + 2 sym(Delta_hat Phi21), Delta_hat R], [., I]] >= t I``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    S = np.hstack([np.eye(data.n), A, B])
    SE = S @ model.E
    rhs = S @ data.stacked()
    D0 = np.linalg.lstsq(SE, rhs, rcond=None)[0]
    if np.linalg.norm(SE @ D0 - rhs) > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        return False
    V = qmi.kernel_basis(SE)
    Phi = model.Phi_hat
    p, T = Phi.q, Phi.r
    R = qmi.psd_factor(-Phi.n22)
    const = np.block([[Phi.n11 + 2 * qmi.sym(D0 @ Phi.n21), D0 @ R],
                      [R.T @ D0.T, np.eye(T)]])
    Tm = sdp.Term
    eye = np.eye(p + T)
    blocks = [sdp.Block(0, 0, (Tm("t", left=eye, coeff=-1.0),))]
    variables = [sdp.scalar("t")]
    k = V.shape[1]
    if k:
        variables.append(sdp.rectangular("H", k, T))
        Lsel = np.vstack([V, np.zeros((T, k))])
        blocks.append(sdp.Block(0, 0, (
            Tm("H", left=2 * Lsel, right=np.hstack([Phi.n21, R])),)))
    problem = sdp.SdpProblem(
        tuple(variables),
        (sdp.LmiConstraint("noise_qmi", (p + T,), const, tuple(blocks)),
         sdp.LmiConstraint("t_cap", (1,), np.eye(1),
                           (sdp.Block(0, 0, (Tm("t", coeff=-1.0),)),))),
        objective="t")
    sol = sdp.solve(problem, options)
    if sol.status == sdp.INFEASIBLE:
        return False
    if not sol.assignment:
        return None
    t = float(sol.assignment["t"][0, 0])
    tol = get_tolerances().feasibility * max(1.0, np.linalg.norm(const, 2))
    if t >= -tol:
        return True
    return False if sol.feasible else None


@dataclass
class ProbeReport:
    count: int
    reconstructed: int
    fraction: float
    sets_coincide: bool
    failures: list = field(default_factory=list)
    confirmed_outside: int = 0
    worst_residual: float = 0.0
    seed: int = 0

    def to_dict(self):
        return {"count": self.count, "reconstructed": self.reconstructed,
                "fraction": self.fraction,
                "sets_coincide": self.sets_coincide,
                "confirmed_outside": self.confirmed_outside,
                "worst_residual": self.worst_residual, "seed": self.seed,
                "failures": self.failures}


def equality_probe(model, data, count=500, rng_seed=0, witness=None,
                            workers=None) -> ProbeReport:
    """Try to explain sampled outer-set members by feasible perturbations.

    Failures are re-checked with :func:`sigma_membership_sdp`; only those
    the SDP also rejects are counted in ``confirmed_outside``. This is
    evidence, not proof, that the admissible set is strictly smaller.
    """
    N = build_N(model, data)
    systems = sample_sigma_bar(N, count, rng_seed, witness)

    def attempt(item):
        idx, s = item
        try:
            w = reconstruct_perturbation(s.A, s.B, model, data, N)
        except PreconditionError as exc:
            return idx, None, str(exc)
        if w is None:
            return idx, None, "no reconstruction formula applies"
        if not w.valid:
            return idx, w, (f"residual {w.residual:.2e}, "
                            f"noise margin {w.qmi_margin:.2e}")
        return idx, w, None

    results = sorted(_map(attempt, list(enumerate(systems)), workers),
                     key=lambda t: t[0])
    ok = [w for _, w, err in results if err is None]
    failures, confirmed = [], 0
    for idx, w, err in results:
        if err is None:
            continue
        s = systems[idx]
        member = sigma_membership_sdp(s.A, s.B, model, data)
        if member is False:
            confirmed += 1
        failures.append({"index": idx, "reason": err,
                         "sdp_member": member,
                         "A": s.A.tolist(), "B": s.B.tolist()})
    worst = max((w.residual for w in ok), default=0.0)
    return ProbeReport(count, len(ok), len(ok) / max(count, 1),
                       model.sets_coincide, failures, confirmed, worst,
                       rng_seed)


# --------------------------------------------------------------- projection

@dataclass
class ProjectionReport:
    Delta_hat: np.ndarray
    residual: float
    distance: float
    best_candidate: float
    candidates: int
    passed: bool


def weighted_distance(Z1, Z2, Q_hat, R):
    """``||Q_hat^{-1} (Z1 - Z2) R||_2``."""
    return float(np.linalg.norm(np.linalg.solve(Q_hat, Z1 - Z2) @ R, 2))


def projection_replay(data, A, B, model, samples=100, rng_seed=0, tol=1e-6,
                      candidates=None):
    """Check that the noise estimate is the weighted projection onto ``S Z = 0``.

    Requires ``E = I``, a zero noise center and invertible ``Q_hat`` and
    ``R``. The estimate is ``Delta_hat = Q_hat (S Q_hat)^+ S X``; the
    report confirms ``S (X - Delta_hat) = 0`` and that no sampled point of
    ``{Z : S Z = 0}`` (or any supplied in `candidates`) is closer to ``X``
    in the weighted distance by more than `tol`.
    """
    E = model.E
    if E.shape[0] != E.shape[1] or not np.allclose(E, np.eye(E.shape[0])):
        raise AssumptionViolatedError("projection replay needs E = I")
    f = noise_factors(model.Phi_hat)
    if np.linalg.norm(f.center) > 1e-12 * max(1.0, np.linalg.norm(model.Phi_hat.data)):
        raise AssumptionViolatedError("projection replay needs a zero noise center")
    if qmi.numerical_rank(f.Q_hat) < f.Q_hat.shape[0] or f.R_singular:
        raise AssumptionViolatedError("projection replay needs invertible Q_hat and R")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    S = np.hstack([np.eye(data.n), A, B])
    Xs = data.stacked()
    Delta_hat = f.Q_hat @ qmi.pseudo_inverse(S @ f.Q_hat) @ S @ Xs
    Zstar = Xs - Delta_hat
    resid = float(np.linalg.norm(S @ Zstar))
    d_star = weighted_distance(Zstar, Xs, f.Q_hat, f.R)

    rng = np.random.default_rng(rng_seed)
    ker = np.eye(S.shape[1]) - qmi.pseudo_inverse(S) @ S
    pool = [] if candidates is None else list(candidates)
    for i in range(samples):
        scale = 10.0 ** rng.uniform(-4, 1) * max(1.0, np.linalg.norm(Xs))
        pool.append(Zstar + scale * ker @ rng.standard_normal(Xs.shape))
    best = min((weighted_distance(Z, Xs, f.Q_hat, f.R) for Z in pool),
               default=np.inf)
    scale = max(1.0, np.linalg.norm(Xs))
    passed = resid <= 1e-9 * scale * max(1.0, np.linalg.norm(S, 2)) \
        and d_star <= best + tol
    return ProjectionReport(Delta_hat, resid, d_star, best, len(pool),
                            bool(passed))


# ---------------------------------------------------------------- Lyapunov

def lyapunov_check(A, B, K, P):
    """Strict test of ``P - (A + B K) P (A + B K)^T > 0``; returns ``(ok, margin)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    K = np.asarray(K, dtype=float).reshape(B.shape[1], n)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not qmi.is_psd(P, strict=True):
        raise PreconditionError("P must be positive definite")
    Acl = A + B @ K
    return qmi.psd_check(P - Acl @ P @ Acl.T, strict=True)


@dataclass(frozen=True, eq=False)
class CommonLyapunovResult:
    beta: Optional[float]
    P: Optional[np.ndarray]
    K: Optional[np.ndarray]
    status: str

    @property
    def exists(self):
        return self.beta is not None and self.beta > get_tolerances().feasibility


def common_lyapunov_search(systems, options=None) -> CommonLyapunovResult:
    """Largest ``beta`` with ``P - (A_i + B_i K) P (.)^T >= beta I`` for all i.

    Solved in ``(P, L = K P, beta)`` with ``P <= I`` as normalization, so
    ``beta <= tol`` means no common quadratic Lyapunov pair exists.
    """
    A0 = np.atleast_2d(systems[0][0])
    n = A0.shape[0]
    m = np.asarray(systems[0][1]).reshape(n, -1).shape[1]
    Tm = sdp.Term
    constraints = []
    for i, (A, B) in enumerate(systems):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(n, m)
        constraints.append(sdp.LmiConstraint(
            f"lyapunov_{i}", (n, n), np.zeros((2 * n, 2 * n)),
            (sdp.Block(0, 0, (Tm("P"), Tm("beta", left=np.eye(n), coeff=-1.0))),
             sdp.Block(0, 1, (Tm("P", left=A), Tm("L", left=B))),
             sdp.Block(1, 1, (Tm("P"),)))))
    constraints.append(sdp.LmiConstraint(
        "P_norm", (n,), np.eye(n), (sdp.Block(0, 0, (Tm("P", coeff=-1.0),)),)))
    constraints.append(sdp.LmiConstraint(
        "P_psd", (n,), np.zeros((n, n)), (sdp.Block(0, 0, (Tm("P"),)),)))
    problem = sdp.SdpProblem(
        (sdp.symmetric("P", n), sdp.rectangular("L", m, n), sdp.scalar("beta")),
        tuple(constraints), objective="beta")
    sol = sdp.solve(problem, options)
    if not sol.assignment:
        return CommonLyapunovResult(None, None, None, sol.status)
    P, L = sol.assignment["P"], sol.assignment["L"].reshape(m, n)
    beta = float(sol.assignment["beta"][0, 0])
    K = None
    if qmi.is_psd(P, strict=True):
        K = np.linalg.solve(P.T, L.T).T
    return CommonLyapunovResult(beta, P, K, sol.status)


def incompatible_pair(systems, options=None):
    """First pair of systems admitting no common Lyapunov pair, or ``None``.

    Pairs are tried in order of decreasing input-matrix distance, which is
    where contradictory gain requirements are most likely.
    """
    k = len(systems)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    pairs.sort(key=lambda ij: -np.linalg.norm(
        np.asarray(systems[ij[0]][1]) - np.asarray(systems[ij[1]][1])))
    for i, j in pairs:
        res = common_lyapunov_search([systems[i], systems[j]], options)
        if res.beta is not None and not res.exists:
            return (i, j), res
    return None


# ------------------------------------------------------ S-lemma counterexample

@dataclass
class CounterexampleResult:
    Z: Optional[np.ndarray]
    lambda_M: Optional[float]
    evaluations: int
    exhausted: bool

    @property
    def found(self):
        return self.Z is not None


class _Budget(Exception):
    pass


class _Search:
    """Bookkeeping for the counterexample hunt: evaluation counting and the
    violation test ``Z`` in the set of `N` with ``lambda_min(M(Z)) <= tau/2``."""

    def __init__(self, M, N, budget):
        self.M, self.N = M, N
        self.budget = budget
        self.evals = 0
        self.best = None
        tol = get_tolerances()
        self.strict = tol.strict
        self.psd_abs, self.psd_rel = tol.psd_abs, tol.psd_rel

    def lam(self, Zs):
        self.evals += len(Zs)
        if self.evals > self.budget:
            raise _Budget
        vn = qmi.qmi_eval_batch(Zs, self.N)
        vm = qmi.qmi_eval_batch(Zs, self.M)
        ln = np.linalg.eigvalsh(vn)[:, 0]
        lm = np.linalg.eigvalsh(vm)[:, 0]
        nn = np.linalg.norm(vn, 2, axis=(1, 2))
        nm = np.linalg.norm(vm, 2, axis=(1, 2))
        member = ln >= -(self.psd_abs + self.psd_rel * nn)
        violate = member & (lm <= 0.5 * self.strict * np.maximum(1.0, nm))
        return ln, lm, member, violate

    def check(self, Zs):
        Zs = np.asarray(Zs, dtype=float)
        ln, lm, member, violate = self.lam(Zs)
        # confirm with the unbatched evaluation; boundary points can flip
        for i in np.flatnonzero(violate)[np.argsort(lm[violate])]:
            if self.confirm(Zs[i]):
                self.best = (Zs[i], float(lm[i]))
                return True
        return False

    def confirm(self, Z):
        if not qmi.qmi_membership(Z, self.N):
            return False
        vm = qmi.qmi_eval(Z, self.M)
        return qmi.min_eig(vm) <= 0.5 * self.strict * max(1.0, np.linalg.norm(vm, 2))


def _unit(v):
    v = np.asarray(v, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 1e-14 else None


def _dedupe(vectors):
    out = []
    for v in vectors:
        u = _unit(v)
        if u is None:
            continue
        if all(abs(abs(u @ w) - 1.0) > 1e-9 for w in out):
            out.append(u)
    return out


def _line_grid(box, step):
    fine = np.arange(-box, box + 0.5 * step, step)
    far = np.geomspace(box, 1e3 * box, 60)
    return np.concatenate([-far[::-1], fine, far])


def _refine_line(search, Z0, D, ts, ln, lm, member):
    """Polish along one line: bisect membership boundaries and minimize
    ``lambda_min(M)`` inside member intervals."""
    def at(t):
        return Z0 + t * D

    # boundary points of the member set between neighbouring grid nodes
    flips = np.flatnonzero(member[:-1] != member[1:])
    for k in flips:
        a, b = ts[k], ts[k + 1]
        inside_a = member[k]
        for _ in range(60):
            mid = 0.5 * (a + b)
            _, _, mem, _ = search.lam(at(mid)[None])
            if mem[0] == inside_a:
                a = mid
            else:
                b = mid
        if search.check(at(a)[None]):
            return True
    if member.any():
        idx = np.flatnonzero(member)
        k = idx[np.argmin(lm[idx])]
        lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]

        def f(t):
            ln_, lm_, mem, _ = search.lam(at(t)[None])
            return lm_[0] if mem[0] else lm_[0] + 1e3 * (1.0 - ln_[0])

        res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        if search.check(at(res.x)[None]):
            return True
    return False


def _scan_line(search, Z0, D, grid):
    Zs = Z0[None] + grid[:, None, None] * D[None]
    ln, lm, member, violate = search.lam(Zs)
    for i in np.flatnonzero(violate)[np.argsort(lm[violate])]:
        if search.confirm(Zs[i]):
            search.best = (Zs[i], float(lm[i]))
            return True
    return _refine_line(search, Z0, D, grid, ln, lm, member)


def _structured_directions(M, N, Z0, rng, n_random):
    r, q = N.r, N.q
    xs = []
    for S in (M.n22, N.n22):
        xs.extend(np.linalg.eigh(S)[1].T)
    xs.extend(qmi.kernel_basis(N.n22).T)
    xs.extend(np.eye(r))
    xs.extend(rng.standard_normal((n_random, r)))
    xs = _dedupe(xs)
    Omega = N.n12 + Z0.T @ N.n22
    Psi = (Z0 + qmi.pseudo_inverse(M.n22) @ M.n21).T @ M.n22
    w0 = np.linalg.eigh(qmi.qmi_eval(Z0, M))[1][:, 0]
    pairs = []
    for x in xs:
        ys = [Omega @ x, Psi @ x, N.n12 @ x, w0]
        ys.extend(np.eye(q))
        ys.extend(rng.standard_normal((2, q)))
        for y in _dedupe(ys):
            pairs.append(np.outer(x, y))
    return pairs


def _two_direction_curves(M, N, Z0):
    """Curves ``Z0 + x1 y1^T + x2 y2^T`` with ``y1 = a N12 x1`` and
    ``y2 = -(1/p) Omega x2 + b N12 x1``, ``a = -p b^2 / 2``."""
    curves = []
    K = qmi.kernel_basis(N.n22)
    w, V = np.linalg.eigh(M.n22)
    Omega = N.n12 + Z0.T @ N.n22
    for x1 in K.T:
        y = N.n12 @ x1
        if np.linalg.norm(y) < 1e-12:
            continue
        for lam, x2 in zip(w, V.T):
            p = float(x2 @ N.n22 @ x2)
            if lam >= 0 or p >= 0:
                continue

            def curve(b, x1=x1, x2=x2, y=y, p=p):
                a = max(0.0, -p * b * b / 2.0)
                y2 = -(Omega @ x2) / p + b * y
                return Z0 + np.outer(x1, a * y) + np.outer(x2, y2)
            curves.append(curve)
    return curves


def slemma_counterexample_search(M: PartitionedSymmetric,
                                 N: PartitionedSymmetric, Z0, budget=400_000,
                                 rng_seed=0, box=5.0, step=0.01, n_random=4,
                                 restarts=10) -> CounterexampleResult:
    """Look for ``Z`` in the QMI set of `N` where ``M(Z)`` is not positive
    definite.

    `Z0` must be a member of the set of `N`. The search scans lines
    ``Z0 + t x y^T`` along eigen- and kernel directions of ``M22`` and
    ``N22`` (with matching ``y`` such as ``Omega x``), the two-direction
    curves that arise for a kernel vector of ``N22`` not annihilated by
    ``N12``, the full coordinate grid ``[-box, box]`` for scalar unknowns,
    and local polishing from random restarts. A violation needs
    ``lambda_min(M(Z)) <= tau_strict / 2``.
    """
    Z0 = np.asarray(Z0, dtype=float).reshape(N.r, N.q)
    if not qmi.qmi_membership(Z0, N):
        raise PreconditionError("Z0 is not a member of the set of N")
    rng = np.random.default_rng(rng_seed)
    search = _Search(M, N, budget)

    def result(exhausted):
        Z, lam = search.best if search.best else (None, None)
        return CounterexampleResult(Z, lam, search.evals, exhausted)

    try:
        if search.check(Z0[None]):
            return result(False)
        grid = _line_grid(box, step)
        if N.r * N.q == 1:
            full = np.arange(-box, box + 0.5 * step, step)
            if _scan_line(search, np.zeros((1, 1)), np.ones((1, 1)), full):
                return result(False)
        for D in _structured_directions(M, N, Z0, rng, n_random):
            if _scan_line(search, Z0, D, grid):
                return result(False)
        for curve in _two_direction_curves(M, N, Z0):
            Zs = np.array([curve(b) for b in grid])
            if search.check(Zs):
                return result(False)
        shape = (N.r, N.q)

        def penalty(z):
            ln, lm, mem, _ = search.lam(z.reshape(shape)[None])
            return lm[0] + 1e3 * max(0.0, -ln[0])

        for _ in range(restarts):
            start = Z0 + rng.standard_normal(shape) * 10.0 ** rng.uniform(-1, 1)
            res = optimize.minimize(penalty, start.ravel(), method="Nelder-Mead",
                                    options={"maxiter": 2000, "xatol": 1e-10,
                                             "fatol": 1e-12})
            Z = res.x.reshape(shape)
            if search.check(Z[None]):
                return result(False)
            # the penalized optimum can sit just outside; pull back toward Z0
            D = Z - Z0
            if _scan_line(search, Z0, D, np.linspace(0.0, 1.0, 201)):
                return result(False)
    except _Budget:
        return result(True)
    return result(False)


# ------------------------------------------------------- end-to-end checks

@dataclass
class VerificationReport:
    passed: bool
    certificate: dict
    checks: dict
    seed: int
    samples: int
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {"passed": self.passed, "certificate": self.certificate,
                "checks": self.checks, "seed": self.seed,
                "samples": self.samples, "failures": self.failures}


def verify_pipeline(model, data, cert, samples=500, rng_seed=0,
                    workers=None) -> VerificationReport:
    """Replay a certificate against data: LMI, sampled systems, probe.

    Checks the certificate itself, the Lyapunov inequality on sampled
    members of the QMI outer set and on forward-constructed admissible
    systems, and, when the two sets provably coincide, that every outer
    sample is explained by a feasible perturbation.
    """
    from .synthesis import verify_certificate

    N = build_N(model, data)
    cert_report = verify_certificate(cert, N)
    checks, failures = {}, []
    checks["certificate"] = cert_report.passed
    if not cert_report.passed:
        failures.extend({"check": "certificate", "reason": r}
                        for r in cert_report.reasons)

    def lyap_all(name, systems):
        def one(item):
            idx, s = item
            ok, margin = lyapunov_check(s.A, s.B, cert.K, cert.P)
            return idx, ok, margin
        res = sorted(_map(one, list(enumerate(systems)), workers))
        bad = [(i, mg) for i, ok, mg in res if not ok]
        checks[name] = {"count": len(res), "failed": len(bad),
                        "worst_margin": min((mg for _, _, mg in res),
                                            default=np.inf)}
        failures.extend({"check": name, "index": i, "margin": mg}
                        for i, mg in bad[:20])
        return not bad

    ok = cert_report.passed
    p_ok = qmi.is_psd(cert.P, strict=True)
    if p_ok:
        try:
            bar = sample_sigma_bar(N, samples, rng_seed)
            ok &= lyap_all("sigma_bar_lyapunov", bar)
        except (PreconditionError, SamplingExhaustedError) as exc:
            checks["sigma_bar_lyapunov"] = {"error": str(exc)}
            failures.append({"check": "sigma_bar_lyapunov", "reason": str(exc)})
            ok = False
        fwd = forward_sample_sigma(model, data, samples, rng_seed + 1)
        ok &= lyap_all("sigma_lyapunov", [s for s, _ in fwd])
        checks["sigma_lyapunov"]["attempts"] = fwd.attempts
        bar_members = all(
            qmi.qmi_membership(s.Z, N) for s, _ in fwd)
        checks["sigma_in_sigma_bar"] = bool(bar_members)
        ok &= bar_members
    else:
        ok = False
    if model.sets_coincide:
        probe = equality_probe(model, data, min(samples, 500),
                                        rng_seed + 2, workers=workers)
        checks["equality_probe"] = {"fraction": probe.fraction,
                                    "worst_residual": probe.worst_residual}
        if probe.fraction < 1.0:
            ok = False
            failures.extend({"check": "equality_probe", **f}
                            for f in probe.failures[:20])
    return VerificationReport(bool(ok), cert_report.to_dict(), checks,
                              rng_seed, samples, failures)
