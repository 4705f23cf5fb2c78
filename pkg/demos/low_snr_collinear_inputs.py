"""Certificates when the data violate the large-SNR condition.

Both inputs of the plant receive the same signal, so the input rows of the
data are collinear and ``Z- Z-^T - Theta22`` is singular. The classical
large-SNR condition therefore fails, yet the informativity LMI stays
feasible and the resulting gain stabilizes the plant.
"""
import numpy as np
from scipy import linalg

from ddinfo import experiment, models, qmi, synthesis
from ddinfo.experiment import TrueSystem


def same_signal(t, x, rng, m):
    return np.full(m, rng.uniform(-1, 1))


A, B = np.array([[1.5]]), np.array([[1.0, 0.5]])
Theta = 1e-3 * linalg.block_diag(np.eye(1), np.eye(1), np.zeros((2, 2)))
model = models.eiv_model(1, 2, 10, Theta)

for seed in range(3):
    data, _ = experiment.simulate(TrueSystem(A, B), model, input_policy=same_signal,
                                  rng_seed=seed, x0=[1.0])
    N = experiment.build_N(model, data)
    res = synthesis.solve_informativity(model, data)
    print(f"seed {seed}: SNR condition {models.eiv_snr_assumption(data, Theta)}, "
          f"N22 max eigenvalue {np.linalg.eigvalsh(N.n22)[-1]:.2e}, "
          f"matrix ellipsoid {bool(qmi.is_matrix_ellipsoid(N))}, {res.status}")
    if res.certified:
        K = res.certificate.K
        print(f"  K = {np.array2string(K, precision=4)}, "
              f"|A + B K| = {abs((A + B @ K)[0, 0]):.3f}")
