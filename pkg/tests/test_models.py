import numpy as np
import pytest
from scipy import linalg

from ddinfo import models, qmi
from ddinfo.errors import (AssumptionViolatedError, InvalidModelError,
                           ShapeMismatchError)
from ddinfo.experiment import ExperimentData
from ddinfo.qmi import PartitionedSymmetric

from _gen import energy_phi, rand_gram


def test_system_noise_scalar():
    mdl = models.system_noise_model(1, 1, 1, PartitionedSymmetric(np.diag([1.0, -1.0]), 1, 1))
    np.testing.assert_array_equal(mdl.E, [[1], [0], [0]])
    assert mdl.p == 1 and mdl.kind == "system_noise"
    assert mdl.sets_coincide


def test_system_noise_energy_bound_meets_assumption(rng):
    for _ in range(10):
        T = int(rng.integers(1, 8))
        Phi = models.energy_bound(rand_gram(rng, 2, 1), T)
        mdl = models.system_noise_model(2, 1, T, Phi)
        assert mdl.diagnostics.noise_ellipsoid_ok and mdl.sets_coincide


def test_system_noise_rejects_non_ellipsoid():
    with pytest.raises(AssumptionViolatedError):
        models.system_noise_model(1, 1, 1, PartitionedSymmetric(np.eye(2), 1, 1))


def test_eiv_zero_theta_only_zero_noise(rng):
    mdl = models.eiv_model(1, 1, 3, np.zeros((3, 3)))
    assert qmi.qmi_membership(np.zeros((3, 3)), mdl.Phi_hat)
    D = 1e-3 * rng.standard_normal((3, 3))
    assert not qmi.qmi_membership(D.T, mdl.Phi_hat)


def test_eiv_unit_theta_is_spectral_ball(rng):
    mdl = models.eiv_model(1, 1, 4, np.eye(3))
    assert mdl.diagnostics.phi22_negdef and mdl.diagnostics.imE0_in_imE
    for _ in range(200):
        D = rng.standard_normal((3, 4)) * rng.uniform(0.1, 1.0)
        inside = np.linalg.norm(D, 2) <= 1.0
        if abs(np.linalg.norm(D, 2) - 1.0) < 1e-6:
            continue
        assert qmi.qmi_membership(D.T, mdl.Phi_hat) == inside


def test_eiv_rejects_indefinite_theta():
    with pytest.raises(InvalidModelError):
        models.eiv_model(1, 1, 2, np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ShapeMismatchError):
        models.eiv_model(1, 1, 2, np.eye(2))


def test_custom_reduces_to_special_cases(rng):
    Phi = energy_phi(rng, 2, 5)
    sn = models.system_noise_model(2, 1, 5, Phi)
    cu = models.custom_model(sn.E, Phi, 2, 1)
    np.testing.assert_array_equal(cu.E, sn.E)
    np.testing.assert_array_equal(cu.Phi_hat.data, sn.Phi_hat.data)
    assert cu.diagnostics == sn.diagnostics
    Theta = rand_gram(rng, 5)
    eiv = models.eiv_model(2, 1, 5, Theta)
    cu = models.custom_model(np.eye(5), eiv.Phi_hat, 2, 1)
    np.testing.assert_array_equal(cu.Phi_hat.data, eiv.Phi_hat.data)
    assert cu.diagnostics == eiv.diagnostics


def test_custom_subspace_rank_test(rng):
    n, m = 2, 1
    for p in (1, 2, 3, 4):
        E = np.linalg.qr(rng.standard_normal((2 * n + m, p)))[0]
        Phi = PartitionedSymmetric(linalg.block_diag(np.eye(p), -np.eye(3)), p, 3)
        mdl = models.custom_model(E, Phi, n, m)
        E0 = np.vstack([np.eye(n), np.zeros((n + m, n))])
        expect = np.linalg.matrix_rank(np.hstack([E, E0])) == np.linalg.matrix_rank(E)
        assert mdl.diagnostics.imE0_in_imE == expect
        assert mdl.diagnostics.phi22_negdef


def test_custom_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        models.custom_model(np.eye(4), PartitionedSymmetric(np.diag([1, 1, 1, 1, -1.0]), 4, 1), 1, 1)


def test_custom_singular_phi22_diagnostics():
    E = np.array([[1.0], [1.0], [0.0]])
    Phi = PartitionedSymmetric(np.diag([1.0, -1.0, 0.0]), 1, 2)
    mdl = models.custom_model(E, Phi, 1, 1)
    assert not mdl.diagnostics.phi22_negdef
    assert not mdl.diagnostics.imE0_in_imE
    assert not mdl.sets_coincide


def test_snr_assumption_examples(rng):
    data = ExperimentData(rng.standard_normal((2, 6)), rng.standard_normal((2, 6)),
                          rng.standard_normal((1, 6)))
    assert models.eiv_snr_assumption(data, np.zeros((5, 5)))
    assert not models.eiv_snr_assumption(data, 1e6 * np.eye(5))
    for _ in range(20):
        Theta = rand_gram(rng, 5) * rng.uniform(0, 5)
        Zm = data.Z_minus
        expect = np.linalg.eigvalsh(Zm @ Zm.T - Theta[2:, 2:])[0] > 1e-8 * max(
            1, np.linalg.norm(Zm @ Zm.T - Theta[2:, 2:], 2))
        assert models.eiv_snr_assumption(data, Theta) == expect


def test_subspace_lift_identity(rng):
    Phi = energy_phi(rng, 2, 4)
    mdl = models.subspace_noise_lift(np.eye(2), Phi, 1)
    np.testing.assert_allclose(mdl.Phi_hat.data, Phi.data)


def test_subspace_lift_zero():
    Phi = PartitionedSymmetric(linalg.block_diag(np.eye(1), -np.eye(3)), 1, 3)
    mdl = models.subspace_noise_lift(np.zeros((2, 1)), Phi, 1)
    np.testing.assert_array_equal(mdl.Phi_hat.n11, np.zeros((2, 2)))


def test_subspace_lift_preserves_ellipsoid(rng):
    for _ in range(20):
        p = int(rng.integers(1, 4))
        Phi = energy_phi(rng, p, 5)
        E_w = rng.standard_normal((3, p))
        mdl = models.subspace_noise_lift(E_w, Phi, 2)
        assert qmi.is_matrix_ellipsoid(mdl.Phi_hat)
        assert mdl.kind == "subspace_noise" and mdl.n == 3


def test_subspace_lift_rejects_non_ellipsoid():
    with pytest.raises(AssumptionViolatedError):
        models.subspace_noise_lift(np.eye(1), np.eye(2), 1)
