import csv
import json
import math
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from mildsolve.cli import main
from mildsolve.config import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_STALLED,
    EXIT_VERIFY_FAILED,
    load_problem,
    parse_problem,
    run,
)
from mildsolve.errors import AuditError, ConfigError

EXAMPLES = Path(str(resources.files("mildsolve") / "examples"))

RICCATI = """\
schema_version = 1
id = "ric"
T = 2.0
alpha = 0.05

[space]
dim = 1

[kernel]
kind = "identity"

[nonlinearity]
kind = "quadratic_riccati"

[forcing]
kind = "constant"
value = [1.0]
"""

ZERO_SAMPLED = """\
id = "zero"
T = 1.0

[space]
dim = 2

[kernel]
kind = "scalar_exp"
lam = -1.0

[nonlinearity]
kind = "linear"
matrix = [[0.0, 0.0], [0.0, 0.0]]

[forcing]
kind = "sampled"
path = "zero.csv"
"""


def write(tmp_path, text, name="p.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


class TestLoadProblem:
    @pytest.mark.parametrize("name", ["riccati", "heat_cubic", "singular_decay"])
    def test_shipped_examples_load(self, name):
        spec = load_problem(EXAMPLES / f"{name}.toml")
        assert spec.id == name
        assert math.isfinite(spec.audits["M_alpha"])
        assert not spec.audits["psi_audit"]["violated"]

    def test_alpha_out_of_range(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\(0, 1\)") as info:
            load_problem(write(tmp_path, RICCATI.replace("alpha = 0.05", "alpha = 1.2")))
        assert info.value.field == "alpha"

    def test_parse_error_has_position(self, tmp_path):
        with pytest.raises(ConfigError, match="line 3"):
            load_problem(write(tmp_path, 'id = "x"\nT = 1.0\nalpha = = 2\n'))

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="colour"):
            load_problem(write(tmp_path, RICCATI + '\n[solver]\ncolour = "red"\n'))

    def test_unknown_top_level_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_problem(write(tmp_path, "mystery = 1\n" + RICCATI))

    def test_schema_version_checked(self, tmp_path):
        with pytest.raises(ConfigError, match="schema_version"):
            load_problem(write(tmp_path, RICCATI.replace("schema_version = 1", "schema_version = 2")))

    def test_dimension_mismatch(self, tmp_path):
        with pytest.raises(ConfigError):
            load_problem(write(tmp_path, RICCATI.replace("value = [1.0]", "value = [1.0, 2.0]")))

    def test_lipschitz_audit_failure(self, tmp_path):
        text = RICCATI.replace(
            'kind = "quadratic_riccati"', 'kind = "custom"\nfunction = "mildsolve.nonlinear:identity"\npsi = [0.0]'
        )
        with pytest.raises(AuditError, match="Lipschitz"):
            load_problem(write(tmp_path, text))

    def test_singularity_audit_failure(self, tmp_path):
        text = RICCATI.replace('kind = "identity"', 'kind = "singular_scaled"\nalpha0 = 0.5\n[kernel.base]\nkind = "identity"')
        with pytest.raises(AuditError, match="singularity"):
            load_problem(write(tmp_path, text))

    def test_singular_alpha_defaults_to_alpha0(self, tmp_path):
        text = RICCATI.replace("alpha = 0.05\n", "").replace(
            'kind = "identity"', 'kind = "singular_scaled"\nalpha0 = 0.3\n[kernel.base]\nkind = "identity"'
        )
        assert load_problem(write(tmp_path, text)).alpha == 0.3

    def test_parse_without_audit(self):
        doc = tomllib.loads(RICCATI)
        spec = parse_problem(doc)
        assert spec.audits == {}
        assert spec.solver.grid_n == 64

    def test_sampled_forcing_must_cover_horizon(self, tmp_path):
        (tmp_path / "zero.csv").write_text("t,x_1,x_2\n0,1,2\n0.5,1,2\n")
        with pytest.raises(ConfigError, match="cover"):
            load_problem(write(tmp_path, ZERO_SAMPLED))


class TestRun:
    def test_riccati_outputs(self, tmp_path):
        code = run(load_problem(EXAMPLES / "riccati.toml"), tmp_path, plot=True)
        assert code == EXIT_OK
        report = json.loads((tmp_path / "riccati.report.json").read_text())
        assert report["outcome"]["kind"] == "BlowUp"
        assert report["schema_version"] == 1
        header, data = read_csv(tmp_path / "riccati.trajectory.csv")
        assert header == ["t", "x_1"]
        assert data[0, 0] == 0.0 and data[0, 1] == 1.0
        assert len(data) == len(np.unique(data[:, 0]))
        plot_header, plot = read_csv(tmp_path / "riccati.plot.csv")
        assert plot_header == ["s", "criterion"]
        assert np.allclose(plot[:, 1], 1 / (2 - plot[:, 0]) + np.interp(plot[:, 0], data[:, 0], data[:, 1]), rtol=1e-12)

    def test_full_precision_round_trip(self, tmp_path):
        run(load_problem(EXAMPLES / "riccati.toml"), tmp_path)
        with open(tmp_path / "riccati.trajectory.csv") as fh:
            fields = [c for row in list(csv.reader(fh))[1:] for c in row]
        assert all(repr(float(c)) == c for c in fields)

    def test_zero_nonlinearity_reproduces_forcing(self, tmp_path):
        t = np.linspace(0, 1, 41)
        with open(tmp_path / "zero.csv", "w") as fh:
            fh.write("t,x_1,x_2\n")
            for s in t:
                fh.write(f"{float(s)!r},{math.sin(3 * s)!r},{float(s * s)!r}\n")
        code = run(load_problem(write(tmp_path, ZERO_SAMPLED)), tmp_path / "out")
        assert code == EXIT_OK
        report = json.loads((tmp_path / "out" / "zero.report.json").read_text())
        assert report["outcome"]["kind"] == "ReachedT"
        _, data = read_csv(tmp_path / "out" / "zero.trajectory.csv")
        expected = np.column_stack([np.interp(data[:, 0], t, np.sin(3 * t)), np.interp(data[:, 0], t, t * t)])
        assert np.allclose(data[:, 1:], expected, rtol=0, atol=1e-14)

    def test_verify_exit_three_on_forced_failure(self, tmp_path):
        text = RICCATI.replace('value = [1.0]', 'value = [1.0]\n\n[solver]\ntol = 1e-3\nslack = 1e-12')
        text = text.replace('kind = "quadratic_riccati"', 'kind = "linear"\nmatrix = [[1.0]]')
        spec = load_problem(write(tmp_path, text))
        assert run(spec, tmp_path, verify=True) == EXIT_VERIFY_FAILED
        report = json.loads((tmp_path / "ric.report.json").read_text())
        assert report["verified"] is False
        # the same failure is only recorded when certificates are advisory
        assert run(spec, tmp_path, certify=True) == EXIT_OK

    def test_verify_passes_on_linear_problem(self, tmp_path):
        text = RICCATI.replace('kind = "quadratic_riccati"', 'kind = "linear"\nmatrix = [[1.0]]').replace("T = 2.0", "T = 1.0")
        assert run(load_problem(write(tmp_path, text)), tmp_path, verify=True) == EXIT_OK
        report = json.loads((tmp_path / "ric.report.json").read_text())
        assert report["verified"] is True
        assert len(report["certificates"]["perturbation"]) == report["window_count"]

    def test_stalled_exit_one(self, tmp_path):
        text = RICCATI.replace('value = [1.0]', 'value = [1.0]\n\n[solver]\ntau_min = 0.5')
        assert run(load_problem(write(tmp_path, text)), tmp_path) == EXIT_STALLED
        assert json.loads((tmp_path / "ric.report.json").read_text())["outcome"]["kind"] == "Stalled"

    def test_solver_error_exit_two_with_diagnostic(self, tmp_path):
        text = RICCATI.replace('value = [1.0]', 'value = [1.0]\n\n[solver]\nmax_iter = 1\ntol = 1e-14')
        assert run(load_problem(write(tmp_path, text)), tmp_path) == EXIT_ERROR
        report = json.loads((tmp_path / "ric.report.json").read_text())
        assert report["error"]["type"] == "SolveAborted"
        assert report["stop_reason"] == "error"


class TestMain:
    def test_solve_subcommand(self, tmp_path):
        assert main(["solve", str(EXAMPLES / "singular_decay.toml"), "-o", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "singular_decay.report.json").exists()

    def test_config_error_goes_to_stderr(self, tmp_path, capsys):
        bad = write(tmp_path, RICCATI.replace("alpha = 0.05", "alpha = 1.2"))
        assert main(["solve", str(bad), "-o", str(tmp_path)]) == EXIT_ERROR
        diag = json.loads(capsys.readouterr().err)
        assert diag["error"]["type"] == "ConfigError"
        assert diag["error"]["field"] == "alpha"

    def test_verify_subcommand(self, tmp_path):
        text = RICCATI.replace('kind = "quadratic_riccati"', 'kind = "linear"\nmatrix = [[-1.0]]')
        assert main(["verify", str(write(tmp_path, text)), "-o", str(tmp_path)]) == EXIT_OK

    def test_ml_subcommand(self, capsys):
        assert main(["ml", "--r", "1", "--x", "2"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(math.exp(2), rel=1e-13)
        assert main(["ml", "--gamma", "5"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(24.0)

    def test_ml_error(self, capsys):
        assert main(["ml", "--r", "1", "--x", "1000"]) == EXIT_ERROR
        assert "NumericError" in capsys.readouterr().err

    def test_bench_parallel(self, tmp_path, capsys, monkeypatch):
        specs = tmp_path / "specs"
        specs.mkdir()
        shutil.copy(EXAMPLES / "riccati.toml", specs)
        shutil.copy(EXAMPLES / "singular_decay.toml", specs)
        (specs / "stall.toml").write_text(
            RICCATI.replace('id = "ric"', 'id = "stall"').replace('value = [1.0]', 'value = [1.0]\n\n[solver]\ntau_min = 0.5')
        )
        monkeypatch.setenv("MILDSOLVE_THREADS", "2")
        code = main(["bench", str(specs), "-o", str(tmp_path / "out"), "-j", "8"])
        lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
        assert {Path(x["problem"]).name: x["exit"] for x in lines} == {
            "riccati.toml": 0, "singular_decay.toml": 0, "stall.toml": 1,
        }
        assert code == 1
        assert (tmp_path / "out" / "riccati.trajectory.csv").exists()

    def test_bench_empty_directory(self, tmp_path):
        assert main(["bench", str(tmp_path)]) == EXIT_ERROR
