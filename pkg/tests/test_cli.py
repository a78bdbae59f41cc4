import json
from pathlib import Path

from higrad import cli


class TestRun:
    def test_basic_run(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main(["run", "--experiment", "toy", "--optimizer", "adam",
                         "--eta", "0.3", "--batch", "256", "--seed", "0",
                         "--budget-updates", "2", "--out", str(out)])
        assert code == 0
        assert (out / "metrics.csv").exists()
        assert (out / "meta.json").exists()
        assert "ok" in capsys.readouterr().out

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = {"experiment": "toy", "optimizer": "adam", "eta": 0.3,
               "batch_size": 256, "seed": 0, "budget_updates": 1}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run2"
        code = cli.main(["run", "--config", str(cfg_path), "--eta", "0.1",
                         "--out", str(out)])
        assert code == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["config"]["eta"] == 0.1

    def test_divergence_exit_code(self, tmp_path):
        out = tmp_path / "div"
        code = cli.main(["run", "--experiment", "toy", "--optimizer", "sgd",
                         "--eta", "1e12", "--batch", "256", "--seed", "0",
                         "--budget-updates", "20", "--out", str(out)])
        assert code == cli.EXIT_DIVERGED

    def test_bad_config_exit_code(self, tmp_path, capsys):
        code = cli.main(["run", "--experiment", "toy", "--optimizer", "adam",
                         "--eta", "0.3", "--batch", "999999", "--seed", "0",
                         "--budget-updates", "1",
                         "--out", str(tmp_path / "bad")])
        assert code == cli.EXIT_ERROR
        assert "error" in capsys.readouterr().err

    def test_run_with_figures(self, tmp_path):
        out = tmp_path / "rf"
        code = cli.main(["run", "--experiment", "toy", "--optimizer", "adam",
                         "--eta", "0.3", "--batch", "256", "--seed", "0",
                         "--budget-updates", "2", "--out", str(out),
                         "--figures"])
        assert code == 0
        pngs = list((out / "figures").glob("*.png"))
        assert pngs


class TestSweep:
    def test_sweep_command(self, tmp_path, capsys):
        grid = {"base": {"experiment": "toy", "optimizer": "adam", "eta": 0.3,
                         "batch_size": 256, "seed": 0, "budget_updates": 1},
                "grid": {"eta": [0.3, 0.1]}}
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps(grid))
        out = tmp_path / "sweep"
        code = cli.main(["sweep", "--grid", str(grid_path), "--out", str(out)])
        assert code == 0
        assert (out / "summary.csv").exists()
        assert "2/2 runs ok" in capsys.readouterr().out


class TestDiagnose:
    def test_diagnose_command(self, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["run", "--experiment", "toy", "--optimizer", "hig",
                  "--eta", "1.0", "--tau", "1e-6", "--batch", "256",
                  "--seed", "0", "--budget-updates", "2", "--out", str(out)])
        code = cli.main(["diagnose", "--run", str(out)])
        assert code == 0
        assert (out / "neuron_stats.csv").exists()
        assert (out / "trajectory.csv").exists()


class TestMakeFigures:
    def test_make_figures_command(self, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["run", "--experiment", "toy", "--optimizer", "adam",
                  "--eta", "0.3", "--batch", "256", "--seed", "0",
                  "--budget-updates", "2", "--out", str(out)])
        figs = tmp_path / "figs"
        code = cli.main(["make-figures", str(out), "--out", str(figs)])
        assert code == 0
        assert list(Path(figs).glob("*.png"))
