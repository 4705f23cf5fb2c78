"""Data-perturbation noise models.

The observed stacked data ``X = [X+; -X-; -U-]`` differs from a noise-free
trajectory by ``Delta = E @ Delta_hat``, where ``Delta_hat`` (``p x T``)
satisfies the QMI ``[I_p; Delta_hat^T]^T Phi_hat [I_p; Delta_hat^T] >= 0``.
System noise (``E = [I_n; 0]``) and errors-in-variables (``E = I``) are the
two classical special cases.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from . import qmi
from .errors import (AssumptionViolatedError, InvalidModelError,
                     ShapeMismatchError)
from .qmi import PartitionedSymmetric

KINDS = ("system_noise", "eiv", "custom", "subspace_noise")


@dataclass(frozen=True)
class ModelDiagnostics:
    noise_ellipsoid_ok: bool
    phi22_negdef: bool
    imE0_in_imE: bool
    sets_coincide: bool
    failed_condition: str = qmi.NONE


@dataclass(frozen=True, eq=False)
class PerturbationModel:
    E: np.ndarray
    Phi_hat: PartitionedSymmetric
    n: int
    m: int
    kind: str = "custom"
    diagnostics: Optional[ModelDiagnostics] = None
    # raw inputs for kinds that are lifted or built from other parameters
    source: Optional[dict] = None

    @property
    def p(self):
        return self.E.shape[1]

    @property
    def T(self):
        return self.Phi_hat.r

    @property
    def E0(self):
        return np.vstack([np.eye(self.n), np.zeros((self.n + self.m, self.n))])

    @property
    def sets_coincide(self):
        return self.diagnostics.sets_coincide


def _e0(n, m):
    return np.vstack([np.eye(n), np.zeros((n + m, n))])


def diagnose(E, Phi_hat: PartitionedSymmetric, n, m) -> ModelDiagnostics:
    verdict = qmi.is_matrix_ellipsoid(Phi_hat)
    phi22_negdef = qmi.is_psd(-Phi_hat.n22, strict=True)
    rank_E = qmi.numerical_rank(E)
    im_ok = qmi.numerical_rank(np.hstack([E, _e0(n, m)])) == rank_E
    return ModelDiagnostics(
        noise_ellipsoid_ok=verdict.is_ellipsoid,
        phi22_negdef=bool(phi22_negdef),
        imE0_in_imE=bool(im_ok),
        sets_coincide=bool(phi22_negdef or im_ok),
        failed_condition=verdict.failed_condition,
    )


def _build(E, Phi_hat, n, m, kind, source=None):
    E = np.array(E, dtype=float)
    E.setflags(write=False)
    if E.ndim != 2 or E.shape[0] != 2 * n + m:
        raise ShapeMismatchError(
            f"E must have 2n+m = {2 * n + m} rows, got shape {E.shape}")
    if Phi_hat.q != E.shape[1]:
        raise ShapeMismatchError(
            f"Phi_hat upper block {Phi_hat.q} does not match E columns "
            f"{E.shape[1]}")
    diag = diagnose(E, Phi_hat, n, m)
    if not diag.noise_ellipsoid_ok:
        raise AssumptionViolatedError(
            f"Phi_hat is not a matrix ellipsoid ({diag.failed_condition})")
    return PerturbationModel(E, Phi_hat, int(n), int(m), kind, diag, source)


def _as_partitioned(Phi, q, T):
    if isinstance(Phi, PartitionedSymmetric):
        if (Phi.q, Phi.r) != (q, T):
            raise ShapeMismatchError(
                f"partition ({Phi.q}, {Phi.r}) expected ({q}, {T})")
        return Phi
    return PartitionedSymmetric(Phi, q, T)


def system_noise_model(n, m, T, Phi_W) -> PerturbationModel:
    """``X+ = A X- + B U- + W-`` with ``W-^T`` in the QMI set of `Phi_W`."""
    Phi_W = _as_partitioned(Phi_W, n, T)
    return _build(_e0(n, m), Phi_W, n, m, "system_noise")


def energy_bound(Theta_w, T):
    """``blkdiag(Theta_w, -I_T)``: the noise energy bound ``W W^T <= Theta_w``."""
    Theta_w = np.atleast_2d(np.asarray(Theta_w, dtype=float))
    k = Theta_w.shape[0]
    return PartitionedSymmetric(linalg.block_diag(Theta_w, -np.eye(T)), k, T)


def eiv_model(n, m, T, Theta) -> PerturbationModel:
    """Errors-in-variables with energy bound ``Delta Delta^T <= Theta``."""
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if Theta.shape != (2 * n + m, 2 * n + m):
        raise ShapeMismatchError(
            f"Theta must be {(2 * n + m,) * 2}, got {Theta.shape}")
    if not qmi.is_psd(Theta):
        raise InvalidModelError("Theta must be positive semidefinite")
    Phi = energy_bound(Theta, T)
    return _build(np.eye(2 * n + m), Phi, n, m, "eiv",
                  source={"Theta": qmi.sym(Theta)})


def custom_model(E, Phi_hat, n, m) -> PerturbationModel:
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if isinstance(Phi_hat, PartitionedSymmetric):
        Phi = Phi_hat
    else:
        Phi_hat = np.asarray(Phi_hat, dtype=float)
        Phi = PartitionedSymmetric(Phi_hat, E.shape[1],
                                   Phi_hat.shape[0] - E.shape[1])
    return _build(E, Phi, n, m, "custom")


def subspace_noise_lift(E_w, Phi_hat_w, m) -> PerturbationModel:
    """System noise confined to a subspace, ``W- = E_w W_hat``.

    The QMI on ``W_hat`` is lifted by congruence with ``blkdiag(E_w, I_T)``
    into an ordinary system-noise model.
    """
    E_w = np.atleast_2d(np.asarray(E_w, dtype=float))
    n, p = E_w.shape
    if not isinstance(Phi_hat_w, PartitionedSymmetric):
        Phi_hat_w = np.asarray(Phi_hat_w, dtype=float)
        Phi_hat_w = PartitionedSymmetric(Phi_hat_w, p, Phi_hat_w.shape[0] - p)
    if Phi_hat_w.q != p:
        raise ShapeMismatchError(
            f"Phi_hat_w upper block {Phi_hat_w.q} does not match E_w columns {p}")
    verdict = qmi.is_matrix_ellipsoid(Phi_hat_w)
    if not verdict:
        raise AssumptionViolatedError(
            f"Phi_hat_w is not a matrix ellipsoid ({verdict.failed_condition})")
    T = Phi_hat_w.r
    G = linalg.block_diag(E_w, np.eye(T))
    Phi_W = PartitionedSymmetric(G @ Phi_hat_w.data @ G.T, n, T)
    model = _build(_e0(n, m), Phi_W, n, m, "subspace_noise",
                   source={"E_w": E_w, "Phi_hat_w": Phi_hat_w})
    return model


def eiv_snr_assumption(data, Theta):
    """Large-SNR condition ``Z- Z-^T - Theta22 > 0`` with ``Z- = [X-; U-]``."""
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    n = data.n
    Zm = data.Z_minus
    if Theta.shape != (2 * n + data.m,) * 2:
        raise ShapeMismatchError("Theta does not match the data dimensions")
    return qmi.is_psd(Zm @ Zm.T - Theta[n:, n:], strict=True)
