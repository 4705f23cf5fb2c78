"""Numerical tolerances used across the package.

All rank, PSD and feasibility decisions read their thresholds from the
active :class:`Tolerances` instance. Override them temporarily with::

    with tolerances(psd_abs=1e-7):
        ...
"""
import contextlib
import contextvars
import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # non-strict PSD: lambda_min >= -(psd_abs + psd_rel * ||A||_2)
    psd_abs: float = 1e-9
    psd_rel: float = 1e-9
    # strict PSD: lambda_min >= strict * max(1, ||A||_2)
    strict: float = 1e-8
    # singular values <= rank * sigma_max are treated as zero
    rank: float = 1e-10
    # ||B v|| <= kernel * max(1, ||A||_2, ||B||_2) for kernel vectors v of A
    kernel: float = 1e-8
    # SDP constraint lambda_min deficit accepted as feasible
    feasibility: float = 1e-7
    # strictness margins for P > 0 and beta > 0, relative to problem scale
    margin: float = 1e-6

    def as_dict(self):
        return dataclasses.asdict(self)


_ACTIVE = contextvars.ContextVar("ddinfo_tolerances", default=Tolerances())


def get_tolerances() -> Tolerances:
    return _ACTIVE.get()


@contextlib.contextmanager
def tolerances(**overrides):
    """Temporarily replace selected tolerance fields."""
    unknown = set(overrides) - {f.name for f in dataclasses.fields(Tolerances)}
    if unknown:
        raise KeyError(f"unknown tolerance fields: {sorted(unknown)}")
    token = _ACTIVE.set(dataclasses.replace(_ACTIVE.get(), **overrides))
    try:
        yield _ACTIVE.get()
    finally:
        _ACTIVE.reset(token)
