"""JSON (and trajectory CSV) file formats.

Matrices are stored as row-major nested lists. Every reader validates
against a JSON schema before building objects, and every writer goes through
:func:`write_json`, which replaces the target atomically.
"""
import csv
import io
import json
import os
import tempfile

import jsonschema
import numpy as np

from . import models
from .errors import DdinfoError, SchemaError
from .experiment import ExperimentData, GroundTruth, TrueSystem
from .qmi import PartitionedSymmetric
from .synthesis import StabilizationCertificate

_MATRIX = {"type": "array",
           "items": {"type": "array", "items": {"type": "number"}}}
_DIM = {"type": "integer", "minimum": 0}

SYSTEM_SCHEMA = {
    "type": "object",
    "properties": {"A": _MATRIX, "B": _MATRIX},
    "required": ["A", "B"],
    "additionalProperties": False,
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(models.KINDS)},
        "n": {"type": "integer", "minimum": 1},
        "m": _DIM,
        "T": {"type": "integer", "minimum": 1},
        "Phi_W": _MATRIX, "Theta_w": _MATRIX, "Theta": _MATRIX,
        "E": _MATRIX, "Phi_hat": _MATRIX, "E_w": _MATRIX, "Phi_hat_w": _MATRIX,
    },
    "required": ["kind", "n", "m", "T"],
    "additionalProperties": False,
}

DATA_SCHEMA = {
    "type": "object",
    "properties": {"X_plus": _MATRIX, "X_minus": _MATRIX, "U_minus": _MATRIX,
                   "meta": {"type": "object"}},
    "required": ["X_plus", "X_minus", "U_minus"],
    "additionalProperties": False,
}

CERTIFICATE_SCHEMA = {
    "type": "object",
    "properties": {"P": _MATRIX, "L": _MATRIX, "beta": {"type": "number"},
                   "K": _MATRIX, "exact": {"type": "boolean"},
                   "margins": {"type": "object"}, "status": {"type": "string"},
                   "tolerances": {"type": "object"}},
    "required": ["P", "L", "beta"],
    "additionalProperties": False,
}

MATRIX_SCHEMA = {
    "type": "object",
    "properties": {"N": _MATRIX, "q": {"type": "integer", "minimum": 1},
                   "r": {"type": "integer", "minimum": 1}},
    "required": ["N"],
    "additionalProperties": False,
}


def validate(payload, schema, what):
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{what}: {exc.message} (at {path})") from None


def read_json(path, schema=None, what="file"):
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read {what} {path!s}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} {path!s} is not valid JSON: {exc}") from None
    if schema is not None:
        validate(payload, schema, what)
    return payload


def dumps(payload):
    return json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"


def write_text(path, text):
    """Write `text` to `path` atomically (temp file in the same directory)."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload):
    write_text(path, dumps(payload))


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not np.isfinite(x):
            return None
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _mat(rows, shape=None, what="matrix"):
    A = np.asarray(rows, dtype=float)
    if A.ndim == 1 and A.size == 0:
        A = A.reshape(0, 0)
    if A.ndim != 2:
        raise SchemaError(f"{what} must be a rectangular 2-D array")
    if shape is not None:
        if A.size == 0 and 0 in shape:
            return np.zeros(shape)
        if A.shape != tuple(shape):
            raise SchemaError(f"{what} has shape {A.shape}, expected {tuple(shape)}")
    return A


def _ragged_guard(rows, what):
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise SchemaError(f"{what} has rows of different lengths")


# ------------------------------------------------------------------ objects

def system_from_dict(d) -> TrueSystem:
    validate(d, SYSTEM_SCHEMA, "system")
    for k in ("A", "B"):
        _ragged_guard(d[k], k)
    A = _mat(d["A"], what="A")
    B = _mat(d["B"], what="B")
    if B.size == 0:
        B = np.zeros((A.shape[0], 0))
    try:
        return TrueSystem(A, B)
    except DdinfoError as exc:
        raise SchemaError(f"system: {exc}") from None


def system_to_dict(s: TrueSystem):
    return {"A": s.A_s.tolist(), "B": s.B_s.tolist()}


def model_from_dict(d):
    validate(d, MODEL_SCHEMA, "model")
    kind, n, m, T = d["kind"], d["n"], d["m"], d["T"]
    need = {"system_noise": (), "eiv": ("Theta",), "custom": ("E", "Phi_hat"),
            "subspace_noise": ("E_w", "Phi_hat_w")}[kind]
    missing = [k for k in need if k not in d]
    if missing:
        raise SchemaError(f"model of kind {kind!r} needs {missing}")
    for k, v in d.items():
        if isinstance(v, list):
            _ragged_guard(v, k)
    try:
        if kind == "system_noise":
            if "Phi_W" in d:
                Phi = PartitionedSymmetric(_mat(d["Phi_W"], (n + T, n + T), "Phi_W"), n, T)
            elif "Theta_w" in d:
                Phi = models.energy_bound(_mat(d["Theta_w"], (n, n), "Theta_w"), T)
            else:
                raise SchemaError("system_noise model needs Phi_W or Theta_w")
            return models.system_noise_model(n, m, T, Phi)
        if kind == "eiv":
            k = 2 * n + m
            return models.eiv_model(n, m, T, _mat(d["Theta"], (k, k), "Theta"))
        if kind == "custom":
            E = _mat(d["E"], what="E")
            p = E.shape[1]
            Phi = _mat(d["Phi_hat"], (p + T, p + T), "Phi_hat")
            return models.custom_model(E, PartitionedSymmetric(Phi, p, T), n, m)
        E_w = _mat(d["E_w"], what="E_w")
        p = E_w.shape[1]
        Phi = _mat(d["Phi_hat_w"], (p + T, p + T), "Phi_hat_w")
        return models.subspace_noise_lift(E_w, PartitionedSymmetric(Phi, p, T), m)
    except SchemaError:
        raise
    except DdinfoError as exc:
        raise SchemaError(f"model: {exc}") from None


def model_to_dict(model):
    d = {"kind": model.kind, "n": model.n, "m": model.m, "T": model.T}
    if model.kind == "eiv":
        d["Theta"] = model.source["Theta"].tolist()
    elif model.kind == "system_noise":
        d["Phi_W"] = model.Phi_hat.data.tolist()
    elif model.kind == "subspace_noise":
        d["E_w"] = model.source["E_w"].tolist()
        d["Phi_hat_w"] = model.source["Phi_hat_w"].data.tolist()
    else:
        d["E"] = model.E.tolist()
        d["Phi_hat"] = model.Phi_hat.data.tolist()
    return d


def data_from_dict(d) -> ExperimentData:
    validate(d, DATA_SCHEMA, "data")
    Xp = _mat(d["X_plus"], what="X_plus")
    Xm = _mat(d["X_minus"], what="X_minus")
    U = _mat(d["U_minus"], what="U_minus")
    if U.size == 0:
        U = np.zeros((0, Xm.shape[1]))
    try:
        return ExperimentData(Xp, Xm, U)
    except DdinfoError as exc:
        raise SchemaError(f"data: {exc}") from None


def data_to_dict(data: ExperimentData, meta=None):
    d = {"X_plus": data.X_plus.tolist(), "X_minus": data.X_minus.tolist(),
         "U_minus": data.U_minus.tolist()}
    if meta:
        d["meta"] = meta
    return d


def data_from_csv(text, n, m) -> ExperimentData:
    """Trajectory CSV with header ``t, x1..xn, u1..um``.

    Rows are time steps ``0..T``; the input cells of the last row may be
    left empty.
    """
    reader = csv.DictReader(io.StringIO(text))
    want = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != want:
        raise SchemaError(f"CSV header must be {','.join(want)}")
    rows = list(reader)
    if len(rows) < 2:
        raise SchemaError("CSV trajectory needs at least two rows")
    try:
        rows.sort(key=lambda r: float(r["t"]))
        x = np.array([[float(r[f"x{i + 1}"]) for i in range(n)] for r in rows]).T
        u = np.array([[float(r[f"u{j + 1}"]) for j in range(m)]
                      for r in rows[:-1]]).T.reshape(m, len(rows) - 1)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"CSV trajectory has a non-numeric cell: {exc}") from None
    return ExperimentData.from_trajectory(x, u)


def data_to_csv(data: ExperimentData):
    n, m, T = data.n, data.m, data.T
    x = np.hstack([data.X_minus, data.X_plus[:, -1:]])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
    for t in range(T + 1):
        u = [repr(float(v)) for v in data.U_minus[:, t]] if t < T else [""] * m
        w.writerow([t] + [repr(float(v)) for v in x[:, t]] + u)
    return buf.getvalue()


def truth_to_dict(truth: GroundTruth):
    return {"Delta_hat": truth.Delta_hat.tolist(), "M1": truth.M1.tolist(),
            "x0": np.asarray(truth.x0).tolist(), "seed": truth.seed}


def certificate_from_dict(d) -> StabilizationCertificate:
    validate(d, CERTIFICATE_SCHEMA, "certificate")
    try:
        return StabilizationCertificate.from_dict(d)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SchemaError(f"certificate: {exc}") from None


def matrix_from_dict(d, q=None, r=None) -> PartitionedSymmetric:
    if isinstance(d, list):
        d = {"N": d}
    validate(d, MATRIX_SCHEMA, "matrix")
    _ragged_guard(d["N"], "N")
    q = q if q is not None else d.get("q")
    r = r if r is not None else d.get("r")
    N = _mat(d["N"], what="N")
    if q is None or r is None:
        raise SchemaError("matrix partition needs q and r")
    try:
        return PartitionedSymmetric(N, q, r)
    except DdinfoError as exc:
        raise SchemaError(f"matrix: {exc}") from None
