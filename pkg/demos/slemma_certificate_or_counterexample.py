"""The two outcomes of the extended S-lemma on small random instances.

For each pair (M, N) either scalars (alpha, beta) certify that every Z in
the QMI set of N gives a positive definite M-form, or a member Z of that
set is found where the M-form is not positive definite.
"""
import numpy as np

from ddinfo import qmi, synthesis, verifier
from ddinfo.qmi import PartitionedSymmetric

rng = np.random.default_rng(3)
for k in range(6):
    F = rng.standard_normal((2, 2))
    M22 = -F @ F.T
    M = PartitionedSymmetric.from_blocks(np.diag(rng.uniform(0.5, 3, 2)),
                                         rng.standard_normal((2, 2)) @ M22, M22)
    N = PartitionedSymmetric.from_blocks(np.eye(2), np.zeros((2, 2)),
                                         -rng.uniform(0.5, 4) * np.eye(2))
    Z0 = np.zeros((2, 2))
    cert = synthesis.search_slemma_certificate(M, N, witness=Z0)
    if cert.found:
        c = cert.certificate
        print(f"pair {k}: certificate alpha={c.alpha:.3f} beta={c.beta:.3f}")
        continue
    cex = verifier.slemma_counterexample_search(M, N, Z0, budget=100_000)
    lam = qmi.min_eig(qmi.qmi_eval(cex.Z, M)) if cex.found else float("nan")
    print(f"pair {k}: counterexample with lambda_min(M-form) = {lam:.3e}")
