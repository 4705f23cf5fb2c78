"""Informativity of noisy input-state data for quadratic stabilization.

Data perturbations ``Delta = E Delta_hat`` bounded by a quadratic matrix
inequality induce a QMI description of all systems consistent with the
data. From it, :func:`solve_informativity` builds a common Lyapunov
certificate and a state-feedback gain, and :mod:`ddinfo.verifier` checks
such claims by sampling.
"""
from .errors import (AssumptionViolatedError, DdinfoError, InvalidInputError,
                     NotAnEllipsoidError, NotPSDError, PreconditionError,
                     SchemaError, ShapeMismatchError, SolverError)
from .experiment import (ExperimentData, GroundTruth, TrueSystem, build_N,
                         n22_sign_report, simulate)
from .models import (PerturbationModel, custom_model, eiv_model,
                     eiv_snr_assumption, energy_bound, subspace_noise_lift,
                     system_noise_model)
from .qmi import (PartitionedSymmetric, ellipsoid_form, is_matrix_ellipsoid,
                  psd_check, qmi_eval, qmi_membership, schur_complement)
from .synthesis import (StabilizationCertificate, build_M,
                        check_slemma_certificate, search_slemma_certificate,
                        solve_informativity, verify_certificate)
from .tolerances import Tolerances, get_tolerances, tolerances
from .verifier import (forward_sample_sigma, lyapunov_check,
                       reconstruct_perturbation, sample_sigma_bar,
                       equality_probe)

__version__ = "0.1.0"
