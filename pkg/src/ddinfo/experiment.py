"""Experiment data: generation, packaging and the admissible-set QMI matrix."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import qmi
from .errors import InvalidInputError, ShapeMismatchError, SingularRError
from .models import PerturbationModel, eiv_snr_assumption
from .qmi import PartitionedSymmetric


def _frozen(A):
    A = np.array(A, dtype=float)
    if A.ndim == 1 and A.size:
        A = A.reshape(1, -1)
    A.setflags(write=False)
    return A


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Shifted states ``X_plus``, states ``X_minus`` and inputs ``U_minus``.

    Columns index time ``t = 0 .. T-1`` (``X_plus`` holds ``x(1) .. x(T)``).
    """
    X_plus: np.ndarray
    X_minus: np.ndarray
    U_minus: np.ndarray

    def __post_init__(self):
        Xp, Xm = _frozen(self.X_plus), _frozen(self.X_minus)
        U = np.array(self.U_minus, dtype=float)
        if U.ndim == 1:
            U = U.reshape(1, -1) if U.size else U.reshape(0, Xm.shape[1])
        U.setflags(write=False)
        if Xp.shape != Xm.shape:
            raise ShapeMismatchError(
                f"X_plus {Xp.shape} and X_minus {Xm.shape} differ")
        if U.shape[1] != Xm.shape[1]:
            raise ShapeMismatchError("U_minus must have T columns")
        if Xm.shape[1] < 1:
            raise InvalidInputError("horizon T must be >= 1")
        for A in (Xp, Xm, U):
            if not np.all(np.isfinite(A)):
                raise InvalidInputError("data contains non-finite entries")
        object.__setattr__(self, "X_plus", Xp)
        object.__setattr__(self, "X_minus", Xm)
        object.__setattr__(self, "U_minus", U)

    @property
    def n(self):
        return self.X_minus.shape[0]

    @property
    def m(self):
        return self.U_minus.shape[0]

    @property
    def T(self):
        return self.X_minus.shape[1]

    @property
    def Z_minus(self):
        return np.vstack([self.X_minus, self.U_minus])

    def stacked(self):
        """``[X+; -X-; -U-]`` of shape ``(2n + m) x T``."""
        return np.vstack([self.X_plus, -self.X_minus, -self.U_minus])

    @classmethod
    def from_trajectory(cls, x, u):
        """Build from a state trajectory ``x`` (``n x (T+1)``) and inputs ``u`` (``m x T``)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u.reshape(1, -1)
        return cls(x[:, 1:], x[:, :-1], u[:, :x.shape[1] - 1])


@dataclass(frozen=True, eq=False)
class TrueSystem:
    A_s: np.ndarray
    B_s: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_s, dtype=float))
        B = np.asarray(self.B_s, dtype=float)
        if B.ndim < 2:
            B = (B.reshape(A.shape[0], -1) if B.size
                 else np.zeros((A.shape[0], 0)))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ShapeMismatchError(f"incompatible A {A.shape}, B {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidInputError("system matrices must be finite")
        object.__setattr__(self, "A_s", _frozen(A))
        object.__setattr__(self, "B_s", _frozen(B))

    @property
    def n(self):
        return self.A_s.shape[0]

    @property
    def m(self):
        return self.B_s.shape[1]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    Delta_hat: np.ndarray
    M1: np.ndarray
    x0: np.ndarray
    seed: Optional[int] = None


@dataclass(frozen=True, eq=False)
class NoiseFactors:
    """Parametrization ``(Delta_hat - Delta_hat_c) R = Q_hat M1`` of the noise QMI."""
    Q_hat: np.ndarray
    R: np.ndarray
    R_pinv: np.ndarray
    center: np.ndarray
    R_singular: bool


def noise_factors(Phi_hat: PartitionedSymmetric) -> NoiseFactors:
    Q_hat = qmi.psd_factor(qmi.schur_complement(Phi_hat))
    R = qmi.psd_factor(-Phi_hat.n22)
    center = -Phi_hat.n12 @ qmi.pseudo_inverse(Phi_hat.n22)
    R_pinv = qmi.pseudo_inverse(R)
    singular = qmi.numerical_rank(R) < R.shape[0]
    return NoiseFactors(Q_hat, R, R_pinv, center, singular)


def random_contraction(rng, shape, rho):
    """Gaussian matrix rescaled to spectral norm at most `rho`."""
    G = rng.standard_normal(shape)
    if G.size == 0:
        return G
    return G / max(1.0, np.linalg.norm(G, 2)) * rho


def sample_perturbation(model: PerturbationModel, rng, rho=0.9,
                        kernel_scale=1.0, M1=None, factors=None):
    """Draw ``Delta_hat`` satisfying the model QMI.

    Returns ``(Delta_hat, M1_eff)`` where ``M1_eff`` is the contraction that
    actually reproduces ``(Delta_hat - center) R = Q_hat M1_eff``. Directions
    in ``ker R`` are unconstrained by the QMI and receive an independent
    Gaussian component of size `kernel_scale`.
    """
    f = factors or noise_factors(model.Phi_hat)
    p, T = model.p, model.T
    if M1 is None:
        M1 = random_contraction(rng, (p, T), rho)
    else:
        M1 = np.asarray(M1, dtype=float)
        if M1.shape != (p, T):
            raise ShapeMismatchError(f"M1 must be {(p, T)}")
        if f.R_singular:
            leak = f.Q_hat @ M1 @ (np.eye(T) - f.R @ f.R_pinv)
            if np.linalg.norm(leak) > 1e-9 * max(1.0, np.linalg.norm(M1)):
                raise SingularRError(
                    "requested M1 is not reachable: Q_hat M1 leaves the row "
                    "space of the singular factor R")
    Delta_hat = f.center + f.Q_hat @ M1 @ f.R_pinv
    M1_eff = M1 @ f.R_pinv @ f.R
    if f.R_singular and kernel_scale:
        free = np.eye(T) - f.R @ f.R_pinv
        Delta_hat = Delta_hat + kernel_scale * rng.standard_normal((p, T)) @ free
    return Delta_hat, M1_eff


def uniform_input(low=-1.0, high=1.0):
    def policy(t, x, rng, m):
        return rng.uniform(low, high, size=m)
    return policy


def simulate(system: TrueSystem, model: PerturbationModel, T=None,
             input_policy: Optional[Callable] = None, rng_seed=0, rho=0.9,
             x0=None, kernel_scale=1.0, M1=None):
    """Generate data that obeys ``X+ - Dz = A_s (X- - Dx) + B_s (U- - Du)``.

    The perturbation ``Delta = [Dz; -Dx; -Du] = E Delta_hat`` is drawn first.
    The observed states then follow ``x(t+1) = A_s x(t) + B_s u(t) + w(t)``
    with ``w = Dz - A_s Dx - B_s Du``, so the shifted and unshifted state
    matrices come from one trajectory and the relation above holds exactly.

    `input_policy(t, x, rng, m)` returns ``u(t)``; the default draws i.i.d.
    uniform entries in ``[-1, 1]``.
    """
    n, m = system.n, system.m
    if (model.n, model.m) != (n, m):
        raise ShapeMismatchError(
            f"model dims (n={model.n}, m={model.m}) do not match system "
            f"(n={n}, m={m})")
    if T is None:
        T = model.T
    if T != model.T:
        raise ShapeMismatchError(f"T={T} does not match model horizon {model.T}")
    rng = np.random.default_rng(rng_seed)
    policy = input_policy or uniform_input()
    Delta_hat, M1_eff = sample_perturbation(model, rng, rho, kernel_scale, M1)
    Delta = model.E @ Delta_hat
    Dz, Dx, Du = Delta[:n], -Delta[n:2 * n], -Delta[2 * n:]
    W = Dz - system.A_s @ Dx - system.B_s @ Du

    x = np.zeros((n, T + 1))
    x[:, 0] = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    u = np.zeros((m, T))
    for t in range(T):
        u[:, t] = policy(t, x[:, t], rng, m)
        x[:, t + 1] = system.A_s @ x[:, t] + system.B_s @ u[:, t] + W[:, t]
    data = ExperimentData(x[:, 1:], x[:, :-1], u)
    truth = GroundTruth(Delta_hat, M1_eff, x[:, 0].copy(), rng_seed)
    return data, truth


def check_dims(model: PerturbationModel, data: ExperimentData):
    if (model.n, model.m, model.T) != (data.n, data.m, data.T):
        raise ShapeMismatchError(
            f"model (n={model.n}, m={model.m}, T={model.T}) does not match "
            f"data (n={data.n}, m={data.m}, T={data.T})")


def build_N(model: PerturbationModel, data: ExperimentData) -> PartitionedSymmetric:
    """``N = [E X] Phi_hat [E X]^T`` with partition ``(n, n + m)``."""
    check_dims(model, data)
    G = np.hstack([model.E, data.stacked()])
    return PartitionedSymmetric(G @ model.Phi_hat.data @ G.T, data.n,
                                data.n + data.m)


@dataclass(frozen=True)
class N22Report:
    lambda_max_n22: float
    is_ellipsoid: bool
    failed_condition: str
    snr_assumption: Optional[bool] = None
    snr_implies_negdef: Optional[bool] = None


def n22_sign_report(N: PartitionedSymmetric, model=None, data=None) -> N22Report:
    """Sign of ``N22`` and ellipsoid status of ``N``.

    For EIV models the large-SNR condition is evaluated as well; when it
    holds ``N22`` must be negative definite.
    """
    lam_max = float(np.linalg.eigvalsh(N.n22)[-1])
    verdict = qmi.is_matrix_ellipsoid(N)
    snr = implied = None
    if model is not None and data is not None and model.kind == "eiv":
        snr = bool(eiv_snr_assumption(data, model.source["Theta"]))
        implied = (not snr) or qmi.is_psd(-N.n22, strict=True)
    return N22Report(lam_max, verdict.is_ellipsoid, verdict.failed_condition,
                     snr, implied)
