import json
import subprocess
import sys

import pytest

from decorr.cli import COMMANDS, main, render_csv
from decorr.config import ConfigError, ExperimentConfig

ALLOY = {
    "model": {"kind": "alloy", "profile": {"0": 1.0, "1": 0.2}},
    "disorder": {"density": "uniform", "M": 1.0},
    "L": 8,
}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_all_subcommands_registered():
    assert set(COMMANDS) == {
        "spectrum", "wegner", "minami", "decorrelate", "jacobian", "independence",
        "multiplicity", "alloy-check", "gradcheck", "tensor-check",
    }


def test_tensor_check_outputs(tmp_path):
    assert main(["tensor-check", "--trials", "50", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "tensor-check" / "summary.json").read_text())
    assert summary["passed"] and "timestamp" in summary and summary["config"]["trials"] == 50
    rows = (tmp_path / "tensor-check" / "results.csv").read_text().splitlines()
    assert rows[0] == "trial,n,k,residual" and len(rows) == 51


def test_alloy_check_passes(tmp_path):
    cfg = write(tmp_path, {**ALLOY, "trials": 100})
    assert main(["alloy-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "alloy-check" / "summary.json").read_text())
    assert summary["results"]["K"] == pytest.approx(0.8 / 1.44)


def test_gradcheck_passes(tmp_path):
    cfg = write(tmp_path, {**ALLOY, "trials": 20})
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path)]) == 0


def test_strict_regime_exit_2(tmp_path, capsys):
    code = main(["decorrelate", "--E", "-1", "--Eprime", "1", "--strict", "--out", str(tmp_path)])
    assert code == 2
    assert "|E-E'|" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["wegner", "--config", str(tmp_path / "nope.json")]) == 2


def test_invalid_config_exit_2(tmp_path):
    assert main(["wegner", "--config", write(tmp_path, {"trials": 0})]) == 2
    assert main(["wegner", "--config", write(tmp_path, {"bogus": 1})]) == 2
    assert main(["wegner", "--config", write(tmp_path, {"model": {"kind": "nope"}})]) == 2
    assert main(["multiplicity", "--q", "1.5", "--out", str(tmp_path)]) == 2
    assert main(["wegner", "--ladder", "8,4,16", "--out", str(tmp_path)]) == 2


def test_assertion_failure_exit_1(tmp_path, capsys):
    # m_k = 0 with the whole spectrum: the frequency is 1 at every L, but a
    # narrow window at small L can miss everything, so it increases
    cfg = write(tmp_path, {"I": [-0.5, 0.5], "rank": 0, "ladder": [2, 4, 8], "trials": 50})
    code = main(["multiplicity", "--config", cfg, "--out", str(tmp_path)])
    assert code == 1
    assert "frequency non-increasing in L" in capsys.readouterr().err


def test_results_csv_worker_independent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["wegner", "--trials", "3000", "--L", "32", "--ladder", "2,4,8"]
    main(args + ["--workers", "1", "--out", str(a)])
    main(args + ["--workers", "2", "--out", str(b)])
    assert (a / "wegner" / "results.csv").read_bytes() == (b / "wegner" / "results.csv").read_bytes()


def test_render_csv_formats():
    text = render_csv([{"a": 1, "b": 0.1, "c": True}])
    assert text == "a,b,c\n1,0.1,true\n"


def test_config_validation_names_inequality():
    with pytest.raises(ConfigError, match=r"\|E-E'\|"):
        ExperimentConfig.load(None, {"E": 0.0, "Eprime": 1.0, "strict": True}).validate("independence")


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "decorr", "tensor-check", "--trials", "5", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert out.returncode == 0, out.stderr
