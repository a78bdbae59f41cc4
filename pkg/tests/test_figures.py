import csv
import json
from pathlib import Path

import pytest

from higrad import figures, harness
from higrad.harness import ExperimentConfig, run_experiment


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "toy"
    cfg = ExperimentConfig(experiment="toy", optimizer="adam", eta=0.3,
                           batch_size=256, seed=0, budget_updates=4,
                           eval_every_updates=2, out_dir=str(out))
    return run_experiment(cfg)


def _fake_run(path: Path, columns, rows, meta=None):
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        w.writerows(rows)
    with open(path / "meta.json", "w") as f:
        json.dump(meta or {"config": {"experiment": "x", "optimizer": "y",
                                      "eta": 1.0}}, f)


class TestMakeFigures:
    def test_single_run_loss_plot(self, toy_run, tmp_path):
        written = figures.make_figures([toy_run.out_dir], tmp_path / "figs")
        names = {Path(p).name for p in written}
        assert "loss_vs_wall.png" in names
        assert "saturation.png" in names  # toy tracks mean_neuron_std
        for p in written:
            assert Path(p).stat().st_size > 0

    def test_energy_panel_only_with_columns(self, toy_run, tmp_path):
        with pytest.warns(UserWarning, match="energy"):
            written = figures.make_figures([toy_run.out_dir], tmp_path / "f2")
        assert not any("energy" in Path(p).name for p in written)

    def test_energy_panel_from_quantum_columns(self, tmp_path):
        run = tmp_path / "qrun"
        cols = ["wall_ms", "epoch", "update", "train_loss", "test_loss",
                "low_energy_loss", "high_energy_loss"]
        rows = [[i * 100.0, 0, i, 0.9 ** i, 0.95 ** i, 0.5 * 0.9 ** i,
                 0.4 * 0.9 ** i] for i in range(5)]
        _fake_run(run, cols, rows,
                  {"config": {"experiment": "quantum", "optimizer": "hig",
                              "eta": 0.5}})
        written = figures.make_figures([run], tmp_path / "f3")
        assert any("energy_components" in p for p in written)

    def test_multiple_runs_overlaid(self, tmp_path):
        cols = ["wall_ms", "epoch", "update", "train_loss", "test_loss"]
        dirs = []
        for opt in ("sgd", "adam", "hig"):
            run = tmp_path / opt
            _fake_run(run, cols, [[i * 10.0, 0, i, 1.0 / (i + 1), 2.0 / (i + 1)]
                                  for i in range(4)],
                      {"config": {"experiment": "oscillator", "optimizer": opt,
                                  "eta": 0.1}})
            dirs.append(run)
        written = figures.make_figures(dirs, tmp_path / "f4")
        assert any("loss_vs_wall" in p for p in written)

    def test_no_output_raises(self, tmp_path):
        run = tmp_path / "empty"
        _fake_run(run, ["wall_ms", "epoch", "update"], [[0.0, 0, 0]])
        with pytest.raises(figures.FigureError), pytest.warns(UserWarning):
            figures.make_figures([run], tmp_path / "f5")

    def test_missing_metrics_raises(self, tmp_path):
        (tmp_path / "norun").mkdir()
        with pytest.raises(figures.FigureError):
            figures.make_figures([tmp_path / "norun"], tmp_path / "f6")
