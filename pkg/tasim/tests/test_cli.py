"""
Tests for the ta-sim command line.
"""
import json

import pytest

from tasim import cli, harness
from tasim.errors import VisibilityError
from tasim.models import SolverComparison, SolverKind, SolverSummary, TrialRecord


def _stats():
    return harness.summarize([
        TrialRecord(trial=0, pos_err_m=10.0, ta_err_m=5.0, iters=2, runtime_s=0.01, converged=True),
        TrialRecord(trial=1, pos_err_m=20.0, ta_err_m=3.0e5, iters=2, runtime_s=0.01, converged=True),
    ])


def _comparison(ok: bool):
    row = dict(rmse=1.0, median_ta_err_m=1.0, runtime_mean=1.0, failures=0)
    return SolverComparison(penalty=SolverSummary(solver=SolverKind.PENALTY, **row),
                            cwls=SolverSummary(solver=SolverKind.CWLS, **row),
                            runtime_ratio=2.0 if ok else 0.5, accuracy_gap=0.0, ordering_ok=ok)


@pytest.mark.unit
class TestCommands:
    """Subcommands and exit status"""

    def test_run_prints_summary_and_exports(self, mocker, write_config, small_config_text, tmp_path, capsys):
        run = mocker.patch("tasim.harness.run_campaign", return_value=_stats())
        out = tmp_path / "run.csv"
        code = cli.main(["run", "--config", str(write_config(small_config_text)), "--seed", "3", "--out", str(out)])
        assert code == 0
        assert run.call_args.args[0].seed == 3
        text = capsys.readouterr().out
        assert "2 ok, 0 failed" in text
        assert "within CP     50.0%" in text
        assert out.exists() and (tmp_path / "run_cdf.csv").exists()

    @pytest.mark.parametrize("ok,expected", [(True, 0), (False, 1)])
    def test_compare_exit_status(self, mocker, write_config, small_config_text, ok, expected):
        mocker.patch("tasim.harness.compare_solvers", return_value=_comparison(ok))
        assert cli.main(["compare", "--config", str(write_config(small_config_text))]) == expected

    def test_sweep_writes_per_point_rows(self, mocker, write_config, small_config_text, tmp_path, capsys):
        run = mocker.patch("tasim.harness.run_campaign", return_value=_stats())
        out = tmp_path / "sweep.json"
        code = cli.main(["sweep", "--config", str(write_config(small_config_text)), "--axis", "noise",
                         "--values", "1,10", "--out", str(out), "--format", "json"])
        assert code == 0
        assert run.call_count == 2
        payload = json.loads(out.read_text())
        assert payload["axis"] == "noise"
        assert [p["axis_value"] for p in payload["points"]] == ["1.0", "10.0"]
        assert "noise=10.0" in capsys.readouterr().out

    def test_crlb_prints_report(self, write_config, small_config_text, capsys):
        assert cli.main(["crlb", "--config", str(write_config(small_config_text))]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["scenario"] == "S1"
        assert report["rms_bound_m"] > 0


@pytest.mark.unit
class TestErrors:
    """Configuration and estimation failures exit with status 2"""

    def test_bad_config(self, write_config):
        path = write_config("[run]\nscenario = 'S9'\n[ue]\nlat_deg = 0.0\nlon_deg = 0.0\n")
        assert cli.main(["run", "--config", str(path)]) == 2

    def test_missing_config(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.toml")]) == 2

    def test_estimation_error(self, mocker, write_config, small_config_text):
        mocker.patch("tasim.harness.run_campaign", side_effect=VisibilityError("satellite set", [(1, 1)]))
        assert cli.main(["run", "--config", str(write_config(small_config_text))]) == 2

    def test_bad_sweep_values(self, write_config, small_config_text):
        code = cli.main(["sweep", "--config", str(write_config(small_config_text)), "--axis", "num_sats",
                         "--values", "two"])
        assert code == 2

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit):
            cli.main([])
