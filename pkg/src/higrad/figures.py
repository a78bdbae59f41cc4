"""Figure rendering from run directories.

Reads metrics.csv / meta.json written by the harness and renders PNGs:
a log-scale loss-versus-wall-clock overlay across runs, an energy-component
panel for runs that track low/high energy losses, and a neuron-saturation
panel for runs that track the mean hidden-neuron standard deviation.

Panels whose columns are absent from every supplied run are skipped with a
warning; rendering fails only if no figure could be produced at all.
"""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class FigureError(Exception):
    pass


def _load_run(run_dir: Path) -> dict:
    metrics = run_dir / "metrics.csv"
    if not metrics.exists():
        raise FigureError(f"{run_dir}: no metrics.csv")
    with open(metrics, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        columns = reader.fieldnames or []
    meta = {}
    meta_path = run_dir / "meta.json"
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
    data = {c: [float(r[c]) for r in rows] for c in columns}
    return {"dir": run_dir, "columns": columns, "data": data, "meta": meta}


def _label(run: dict) -> str:
    cfg = run["meta"].get("config", {})
    opt = cfg.get("optimizer") or run["dir"].name
    bits = [cfg.get("experiment", ""), opt]
    if "eta" in cfg:
        bits.append(f"eta={cfg['eta']:g}")
    return " ".join(b for b in bits if b)


def _finite_pairs(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys)
           if x == x and y == y and y > 0.0]
    return ([p[0] for p in pts], [p[1] for p in pts])


def _plot_vs_wall(runs, column, ylabel, path) -> bool:
    usable = [r for r in runs if column in r["columns"]]
    if not usable:
        warnings.warn(f"no run provides a {column!r} column; skipping {path.name}")
        return False
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew = False
    for run in usable:
        xs = [ms / 1000.0 for ms in run["data"]["wall_ms"]]
        xs, ys = _finite_pairs(xs, run["data"][column])
        if not xs:
            warnings.warn(f"{run['dir']}: no plottable {column} values")
            continue
        ax.plot(xs, ys, label=_label(run))
        drew = True
    if not drew:
        plt.close(fig)
        return False
    ax.set_yscale("log")
    ax.set_xlabel("wall-clock time [s]")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def _plot_energy(runs, path) -> bool:
    usable = [r for r in runs
              if {"low_energy_loss", "high_energy_loss"} <= set(r["columns"])]
    if not usable:
        warnings.warn(f"no run provides energy-component columns; skipping {path.name}")
        return False
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    drew = False
    for run in usable:
        xs_all = [ms / 1000.0 for ms in run["data"]["wall_ms"]]
        for ax, col in zip(axes, ("low_energy_loss", "high_energy_loss")):
            xs, ys = _finite_pairs(xs_all, run["data"][col])
            if xs:
                ax.plot(xs, ys, label=_label(run))
                drew = True
    if not drew:
        plt.close(fig)
        return False
    for ax, title in zip(axes, ("low-energy component", "high-energy component")):
        ax.set_yscale("log")
        ax.set_xlabel("wall-clock time [s]")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
    axes[0].set_ylabel("component loss")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def _plot_saturation(runs, path) -> bool:
    usable = [r for r in runs if "mean_neuron_std" in r["columns"]]
    if not usable:
        warnings.warn(f"no run provides mean_neuron_std; skipping {path.name}")
        return False
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew = False
    for run in usable:
        xs, ys = _finite_pairs(run["data"]["update"], run["data"]["mean_neuron_std"])
        if xs:
            ax.plot(xs, ys, label=_label(run))
            drew = True
    if not drew:
        plt.close(fig)
        return False
    ax.set_xlabel("update")
    ax.set_ylabel("mean hidden-neuron std")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def make_figures(run_dirs, out_dir) -> list[str]:
    """Render the figure set for the given runs into out_dir.

    Returns the list of written file paths; raises FigureError when no
    figure could be produced.
    """
    runs = [_load_run(Path(d)) for d in run_dirs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for fn, args, name in [
        (_plot_vs_wall, ("test_loss", "test loss"), "loss_vs_wall.png"),
        (_plot_vs_wall, ("train_loss", "train loss"), "train_loss_vs_wall.png"),
        (_plot_energy, (), "energy_components.png"),
        (_plot_saturation, (), "saturation.png"),
    ]:
        path = out / name
        if fn(*([runs] + list(args) + [path])):
            written.append(str(path))
    if not written:
        raise FigureError("no figures could be rendered from the given runs")
    return written
