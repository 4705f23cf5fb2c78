import builtins
import json

import numpy as np
import pytest

from ddinfo import cli


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def scalar_case(tmp_path):
    """Unstable scalar plant with a small EIV noise bound."""
    system = write(tmp_path / "system.json", {"A": [[2.0]], "B": [[1.0]]})

    def model(theta):
        return write(tmp_path / f"model_{theta:g}.json",
                     {"kind": "eiv", "n": 1, "m": 1, "T": 6,
                      "Theta": (theta * np.eye(3)).tolist()})
    return tmp_path, system, model


def simulate(tmp_path, system, model, name="data.json", seed=3):
    out = str(tmp_path / name)
    code = cli.main(["simulate", "--system", system, "--model", model,
                     "--seed", str(seed), "--x0", "1", "--out", out])
    return code, out


def test_simulate_is_seeded(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, a = simulate(tmp, system, m, "a.json")
    _, b = simulate(tmp, system, m, "b.json")
    assert (tmp / "a.json").read_bytes() == (tmp / "b.json").read_bytes()
    assert (tmp / "a.truth.json").read_bytes() == (tmp / "b.truth.json").read_bytes()
    _, c = simulate(tmp, system, m, "c.json", seed=4)
    assert (tmp / "a.json").read_bytes() != (tmp / "c.json").read_bytes()


def test_simulate_horizon_mismatch(scalar_case, capsys):
    tmp, system, model = scalar_case
    code = cli.main(["simulate", "--system", system, "--model", model(1e-4),
                     "-T", "9", "--out", str(tmp / "d.json")])
    assert code == cli.EXIT_INPUT
    assert "horizon" in capsys.readouterr().err


def test_pipeline_informative_and_verified(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, data = simulate(tmp, system, m)
    cert = str(tmp / "cert.json")
    assert cli.main(["synthesize", "--model", m, "--data", data, "--out", cert]) == 0
    K = np.array(json.loads((tmp / "cert.json").read_text())["K"])
    assert abs(2.0 + K[0, 0]) < 1
    rep = str(tmp / "rep.json")
    assert cli.main(["verify", "--model", m, "--data", data, "--cert", cert,
                     "--samples", "50", "--out", rep]) == 0
    assert json.loads((tmp / "rep.json").read_text())["passed"]


def test_pipeline_not_informative(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e6)
    _, data = simulate(tmp, system, m)
    out = str(tmp / "cert.json")
    assert cli.main(["synthesize", "--model", m, "--data", data, "--out", out]) == \
        cli.EXIT_NOT_INFORMATIVE
    assert json.loads((tmp / "cert.json").read_text())["label"] == \
        "certified not informative"


def test_pipeline_inconclusive(tmp_path):
    # E misses the state-noise direction and Phi_hat22 is singular
    model = write(tmp_path / "m.json", {
        "kind": "custom", "n": 1, "m": 1, "T": 2,
        "E": [[1.0], [1.0], [0.0]], "Phi_hat": np.diag([1e4, -1.0, 0.0]).tolist()})
    data = write(tmp_path / "d.json", {"X_plus": [[1.0, 2.0]], "X_minus": [[1.0, 1.0]],
                                       "U_minus": [[0.5, 0.5]]})
    assert cli.main(["synthesize", "--model", model, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == cli.EXIT_INCONCLUSIVE


def test_verify_rejects_tampered_certificate(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, data = simulate(tmp, system, m)
    cert = str(tmp / "cert.json")
    cli.main(["synthesize", "--model", m, "--data", data, "--out", cert])
    d = json.loads((tmp / "cert.json").read_text())
    d["beta"] = -d["beta"]
    bad = write(tmp / "bad.json", d)
    assert cli.main(["verify", "--model", m, "--data", data, "--cert", bad,
                     "--samples", "20", "--out", str(tmp / "r.json")]) == cli.EXIT_VERIFY


def test_verify_missing_certificate(scalar_case, capsys):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, data = simulate(tmp, system, m)
    code = cli.main(["verify", "--model", m, "--data", data,
                     "--cert", str(tmp / "nope.json")])
    assert code == cli.EXIT_INPUT
    assert "nope.json" in capsys.readouterr().err


def test_synthesize_never_reads_ground_truth(scalar_case, monkeypatch):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, data = simulate(tmp, system, m)
    opened = []
    real_open = builtins.open

    def spy(path, *a, **k):
        opened.append(str(path))
        return real_open(path, *a, **k)
    monkeypatch.setattr(builtins, "open", spy)
    assert cli.main(["synthesize", "--model", m, "--data", data,
                     "--out", str(tmp / "c.json")]) == 0
    assert opened and not any("truth" in p for p in opened)


def test_inspect_matrix_text(tmp_path, capsys):
    good = write(tmp_path / "n.json", {"N": np.diag([1.0, -1.0]).tolist(), "q": 1, "r": 1})
    assert cli.main(["inspect", "--matrix", good]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "matrix ellipsoid: yes"
    bad = write(tmp_path / "b.json", {"N": np.diag([1.0, 1.0]).tolist(), "q": 1, "r": 1})
    assert cli.main(["inspect", "--matrix", bad]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "matrix ellipsoid: no (N22 indefinite)"


def test_inspect_model_and_data(scalar_case, capsys):
    tmp, system, model = scalar_case
    m = model(1e6)
    _, data = simulate(tmp, system, m)
    capsys.readouterr()
    out = str(tmp / "i.json")
    assert cli.main(["inspect", "--model", m, "--data", data, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "SNR assumption: violated" in text
    assert json.loads((tmp / "i.json").read_text())["snr_assumption"] is False


def test_config_file_and_unknown_key(scalar_case, capsys):
    tmp, system, model = scalar_case
    m = model(1e-4)
    cfg = write(tmp / "cfg.json", {"command": "simulate", "system": system, "model": m,
                                   "seed": 3, "x0": [1.0], "out": str(tmp / "x.json")})
    assert cli.main(["simulate", "--config", cfg]) == 0
    _, ref = simulate(tmp, system, m, "y.json")
    assert (tmp / "x.json").read_bytes() == (tmp / "y.json").read_bytes()
    bad = write(tmp / "bad.json", {"command": "simulate", "sytem": system})
    assert cli.main(["simulate", "--config", bad]) == cli.EXIT_INPUT
    assert "sytem" in capsys.readouterr().err


def test_tolerance_override_validated(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e-4)
    _, data = simulate(tmp, system, m)
    assert cli.main(["inspect", "--model", m, "--data", data,
                     "--tol-psd-abs", "-1"]) == cli.EXIT_INPUT
    assert cli.main(["inspect", "--model", m, "--data", data,
                     "--tol-psd-abs", "1e-7"]) == 0


def test_csv_data_roundtrip(scalar_case):
    tmp, system, model = scalar_case
    m = model(1e-4)
    csv = str(tmp / "d.csv")
    assert cli.main(["simulate", "--system", system, "--model", m, "--seed", "3",
                     "--x0", "1", "--out", csv]) == 0
    assert (tmp / "d.csv").read_text().splitlines()[0] == "t,x1,u1"
    _, js = simulate(tmp, system, m)
    assert cli.main(["synthesize", "--model", m, "--data", csv,
                     "--out", str(tmp / "c1.json")]) == 0
    assert cli.main(["synthesize", "--model", m, "--data", js,
                     "--out", str(tmp / "c2.json")]) == 0
    k1 = json.loads((tmp / "c1.json").read_text())["K"]
    k2 = json.loads((tmp / "c2.json").read_text())["K"]
    np.testing.assert_allclose(k1, k2, rtol=1e-6)


def test_malformed_data_schema(tmp_path, scalar_case):
    tmp, system, model = scalar_case
    data = write(tmp_path / "d.json", {"X_plus": [[1.0]], "X_minus": "oops",
                                       "U_minus": [[1.0]]})
    assert cli.main(["synthesize", "--model", model(1e-4), "--data", data]) == cli.EXIT_INPUT


def test_module_entry_point(scalar_case):
    import subprocess
    import sys
    tmp, system, model = scalar_case
    res = subprocess.run([sys.executable, "-m", "ddinfo", "simulate", "--system", system,
                          "--model", model(1e-4), "--out", str(tmp / "e.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "wrote" in res.stdout
