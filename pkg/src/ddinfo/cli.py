"""Command-line pipeline: ``simulate``, ``synthesize``, ``verify``, ``inspect``.

Exit codes::

    0  success (informative / verification passed)
    2  input, schema or I/O error
    3  certified not informative
    4  inconclusive
    5  solver failure
    6  verification failed
"""
import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import experiment, qmi, schema, synthesis, verifier
from .errors import DdinfoError, SchemaError, SolverError
from .tolerances import Tolerances, tolerances

log = logging.getLogger("ddinfo")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_INFORMATIVE = 3
EXIT_INCONCLUSIVE = 4
EXIT_SOLVER = 5
EXIT_VERIFY = 6

COMMANDS = ("simulate", "synthesize", "verify", "inspect")
TOL_FIELDS = tuple(f.name for f in dataclasses.fields(Tolerances))


@dataclass
class RunConfig:
    command: str
    system: Optional[str] = None
    model: Optional[str] = None
    data: Optional[str] = None
    cert: Optional[str] = None
    matrix: Optional[str] = None
    out: Optional[str] = None
    truth: Optional[str] = None
    T: Optional[int] = None
    seed: int = 0
    samples: int = 500
    rho: float = 0.9
    x0: Optional[list] = None
    q: Optional[int] = None
    r: Optional[int] = None
    format: Optional[str] = None
    tolerances: dict = field(default_factory=dict)


_PATH = {"type": ["string", "null"]}
CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "system": _PATH, "model": _PATH, "data": _PATH, "cert": _PATH,
        "matrix": _PATH, "out": _PATH, "truth": _PATH,
        "T": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "samples": {"type": "integer", "minimum": 1},
        "rho": {"type": "number", "minimum": 0, "maximum": 1},
        "x0": {"type": ["array", "null"], "items": {"type": "number"}},
        "q": {"type": ["integer", "null"], "minimum": 1},
        "r": {"type": ["integer", "null"], "minimum": 1},
        "format": {"enum": ["json", "csv", None]},
        "tolerances": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in TOL_FIELDS},
            "additionalProperties": False,
        },
    },
    "required": ["command"],
    "additionalProperties": False,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ddinfo",
        description="Informativity analysis and controller synthesis from "
                    "noisy input-state data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--out", help="output file")
        p.add_argument("--format", choices=["json", "csv"],
                       help="data file format (default: from extension)")
        for name in TOL_FIELDS:
            p.add_argument(f"--tol-{name.replace('_', '-')}", type=float,
                           dest=f"tol_{name}", metavar="X")

    p = sub.add_parser("simulate", help="generate data from a true system")
    common(p)
    p.add_argument("--system")
    p.add_argument("--model")
    p.add_argument("-T", type=int, dest="T")
    p.add_argument("--seed", type=int)
    p.add_argument("--rho", type=float, help="noise level in [0, 1]")
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--truth", help="ground-truth output (default: <out>.truth.json)")

    p = sub.add_parser("synthesize", help="solve the informativity LMI")
    common(p)
    p.add_argument("--model")
    p.add_argument("--data")

    p = sub.add_parser("verify", help="replay a certificate against the data")
    common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("inspect", help="report QMI structure of N or model+data")
    common(p)
    p.add_argument("--matrix")
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--model")
    p.add_argument("--data")
    return parser


def config_from_args(args) -> RunConfig:
    payload = {"command": args.command}
    if getattr(args, "config", None):
        loaded = schema.read_json(args.config, what="config")
        if not isinstance(loaded, dict):
            raise SchemaError("config must be a JSON object")
        if loaded.get("command", args.command) != args.command:
            raise SchemaError(
                f"config is for {loaded['command']!r}, not {args.command!r}")
        payload.update(loaded)
    tol = dict(payload.get("tolerances", {}))
    for key, value in vars(args).items():
        if value is None or key in ("config", "command", "verbose"):
            continue
        if key.startswith("tol_"):
            tol[key[4:]] = value
        else:
            payload[key] = value
    if tol:
        payload["tolerances"] = tol
    schema.validate(payload, CONFIG_SCHEMA, "config")
    return RunConfig(**payload)


def _need(cfg, *names):
    missing = [f"--{n}" for n in names if getattr(cfg, n) is None]
    if missing:
        raise SchemaError(f"{cfg.command} needs {', '.join(missing)}")


def _format_of(path, explicit):
    if explicit:
        return explicit
    return "csv" if str(path).lower().endswith(".csv") else "json"


def _load_model(cfg):
    return schema.model_from_dict(schema.read_json(cfg.model, what="model"))


def _load_data(cfg, model):
    if _format_of(cfg.data, cfg.format) == "csv":
        try:
            with open(cfg.data, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise SchemaError(f"cannot read data {cfg.data}: {exc.strerror}") from None
        return schema.data_from_csv(text, model.n, model.m)
    return schema.data_from_dict(schema.read_json(cfg.data, what="data"))


def _default_out(cfg, suffix):
    base = cfg.data or cfg.model or cfg.matrix or "ddinfo"
    return os.path.splitext(base)[0] + suffix


def cmd_simulate(cfg: RunConfig):
    _need(cfg, "system", "model", "out")
    system = schema.system_from_dict(schema.read_json(cfg.system, what="system"))
    model = _load_model(cfg)
    T = cfg.T if cfg.T is not None else model.T
    if T != model.T:
        raise SchemaError(f"-T {T} does not match the model horizon {model.T}")
    if (system.n, system.m) != (model.n, model.m):
        raise SchemaError("system and model dimensions differ")
    x0 = None if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    if x0 is not None and x0.shape != (model.n,):
        raise SchemaError(f"--x0 needs {model.n} values")
    data, truth = experiment.simulate(system, model, T, rng_seed=cfg.seed,
                                      rho=cfg.rho, x0=x0)
    meta = {"seed": cfg.seed, "T": T, "tolerances": cfg.tolerances}
    if _format_of(cfg.out, cfg.format) == "csv":
        schema.write_text(cfg.out, schema.data_to_csv(data))
    else:
        schema.write_json(cfg.out, schema.data_to_dict(data, meta))
    truth_path = cfg.truth or os.path.splitext(cfg.out)[0] + ".truth.json"
    schema.write_json(truth_path, schema.truth_to_dict(truth))
    print(f"wrote {cfg.out} and {truth_path}")
    return EXIT_OK


def cmd_synthesize(cfg: RunConfig):
    _need(cfg, "model", "data")
    model = _load_model(cfg)
    data = _load_data(cfg, model)
    try:
        experiment.check_dims(model, data)
    except DdinfoError as exc:
        raise SchemaError(str(exc)) from None
    result = synthesis.solve_informativity(model, data)
    out = cfg.out or _default_out(cfg, ".cert.json")
    if result.status == synthesis.INFORMATIVE:
        payload = result.certificate.to_dict()
        payload["status"] = result.status
        payload["tolerances"] = cfg.tolerances
        schema.write_json(out, payload)
        K = result.certificate.K
        print(f"informative: K = {np.array2string(K, precision=6)}")
        print(f"wrote {out}")
        return EXIT_OK
    report = {"status": result.status, "label": result.label,
              "exact": result.exact, "message": result.message,
              "tolerances": cfg.tolerances}
    if result.solution is not None:
        report["attempts"] = [list(a) for a in result.solution.attempts]
    if result.report is not None:
        report["verification"] = result.report.to_dict()
    schema.write_json(out, report)
    print(f"{result.label}: {result.message}")
    if result.status == synthesis.NOT_INFORMATIVE:
        return EXIT_NOT_INFORMATIVE
    if result.status == synthesis.INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_SOLVER


def cmd_verify(cfg: RunConfig):
    _need(cfg, "model", "data", "cert")
    model = _load_model(cfg)
    data = _load_data(cfg, model)
    cert = schema.certificate_from_dict(
        schema.read_json(cfg.cert, what="certificate"))
    try:
        experiment.check_dims(model, data)
    except DdinfoError as exc:
        raise SchemaError(str(exc)) from None
    if (cert.n, cert.m) != (data.n, data.m):
        raise SchemaError("certificate dimensions do not match the data")
    report = verifier.verify_pipeline(model, data, cert, cfg.samples, cfg.seed)
    payload = report.to_dict()
    payload["tolerances"] = cfg.tolerances
    out = cfg.out or _default_out(cfg, ".verify.json")
    schema.write_json(out, payload)
    print(f"verification {'passed' if report.passed else 'FAILED'}; wrote {out}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def inspect_report(N, model=None, data=None):
    rep = experiment.n22_sign_report(N, model, data)
    d = {"q": N.q, "r": N.r, "is_ellipsoid": rep.is_ellipsoid,
         "failed_condition": rep.failed_condition,
         "lambda_max_N22": rep.lambda_max_n22,
         "snr_assumption": rep.snr_assumption}
    if model is not None:
        diag = model.diagnostics
        d["model"] = {"kind": model.kind, "phi22_negdef": diag.phi22_negdef,
                      "imE0_in_imE": diag.imE0_in_imE,
                      "sets_coincide": diag.sets_coincide}
    return d


_REASONS = {qmi.N22_NOT_NSD: "N22 indefinite",
            qmi.KERNEL_INCLUSION: "ker N22 not inside ker N12",
            qmi.SCHUR_NOT_PSD: "Schur complement not PSD"}


def format_inspect(d):
    lines = []
    if d["is_ellipsoid"]:
        lines.append("matrix ellipsoid: yes")
    else:
        lines.append(f"matrix ellipsoid: no ({_REASONS[d['failed_condition']]})")
    lines.append(f"partition: q={d['q']}, r={d['r']}")
    lines.append(f"lambda_max(N22): {d['lambda_max_N22']:.6e}")
    if d["snr_assumption"] is not None:
        lines.append(f"SNR assumption: {'holds' if d['snr_assumption'] else 'violated'}")
    if "model" in d:
        mdl = d["model"]
        lines.append(f"Phi_hat22 negative definite: {'yes' if mdl['phi22_negdef'] else 'no'}")
        lines.append(f"im E0 in im E: {'yes' if mdl['imE0_in_imE'] else 'no'}")
        lines.append("admissible set equals QMI set: "
                     f"{'yes' if mdl['sets_coincide'] else 'not guaranteed'}")
    return "\n".join(lines)


def cmd_inspect(cfg: RunConfig):
    if cfg.matrix is not None:
        N = schema.matrix_from_dict(schema.read_json(cfg.matrix, what="matrix"),
                                    cfg.q, cfg.r)
        d = inspect_report(N)
    else:
        _need(cfg, "model", "data")
        model = _load_model(cfg)
        data = _load_data(cfg, model)
        try:
            N = experiment.build_N(model, data)
        except DdinfoError as exc:
            raise SchemaError(str(exc)) from None
        d = inspect_report(N, model, data)
    print(format_inspect(d))
    if cfg.out:
        d["tolerances"] = cfg.tolerances
        schema.write_json(cfg.out, d)
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "synthesize": cmd_synthesize,
            "verify": cmd_verify, "inspect": cmd_inspect}


def run(cfg: RunConfig):
    with tolerances(**cfg.tolerances):
        return HANDLERS[cfg.command](cfg)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DdinfoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
