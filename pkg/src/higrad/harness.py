"""Training harness: configuration, training loops, metrics logging,
pretraining handoff and sweep execution for the four experiments.

Each run owns an output directory containing metrics.csv, meta.json and the
final parameter vector; toy runs additionally keep per-eval parameter
checkpoints for the trajectory/saturation diagnostics.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datasets, nn, physics
from .autodiff import AutodiffError, JacobianStack, backward, forward, unpack_complex
from .linalg import LinalgError
from .optim import GRAD_VARIANTS, GradOptimizerState, HigConfig, gn_step, grad_step, hig_step

EXPERIMENTS = ("toy", "oscillator", "poisson", "quantum")
OPTIMIZERS = GRAD_VARIANTS + ("gn", "hig")

# network architectures and dataset sizes per experiment
ARCH = {
    "toy": ((1, 7, 2), "tanh"),
    "oscillator": ((4, 20, 20, 20, 96), "relu"),
    "poisson": ((64, 64, 256, 64, 64), "tanh"),
    "quantum": ((28, 20, 20, 20, 384), "tanh"),
}
DEFAULT_TRAIN_SIZE = {"toy": 1024, "oscillator": 4096, "poisson": 0, "quantum": 1024}
DEFAULT_TEST_SIZE = {"toy": 1024, "oscillator": 4096, "poisson": 256, "quantum": 1024}
EXTRA_COLUMNS = {
    "toy": ["mean_neuron_std"],
    "oscillator": [],
    "poisson": [],
    "quantum": ["low_energy_loss", "high_energy_loss"],
}
POISSON_NOMINAL_EPOCH = 4096      # samples per "epoch" for the infinite stream
EVAL_BATCH = 512


@dataclass
class ExperimentConfig:
    experiment: str
    optimizer: str
    eta: float = 1e-3
    batch_size: int = 256
    tau: float = 0.0
    kappa: float = -0.5
    beta: float = 0.0
    gamma: float = 1.0
    seed: int = 0
    budget_updates: int | None = None
    budget_seconds: float | None = None
    target_test_loss: float | None = None
    test_eval_every: int = 1          # epochs (poisson: see eval_every_updates)
    eval_every_updates: int | None = None
    train_size: int | None = None
    test_size: int | None = None
    init_params_path: str | None = None
    out_dir: str = "run"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.budget_updates is None and self.budget_seconds is None:
            raise ValueError("need a budget (updates and/or seconds)")
        if self.budget_updates is not None and self.budget_updates <= 0:
            raise ValueError("budget_updates must be > 0")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ValueError("budget_seconds must be > 0")


@dataclass
class MetricsRecord:
    wall_ms: float
    epoch: int
    update: int
    train_loss: float
    test_loss: float
    extras: dict = field(default_factory=dict)


@dataclass
class RunResult:
    status: str                      # "ok" | "diverged"
    out_dir: str
    rows: list
    updates: int
    wall_seconds: float
    final_test_loss: float


# ---------------------------------------------------------------------------
# experiment wiring


class _Experiment:
    """Graph, data and loss plumbing for one configured experiment."""

    def __init__(self, cfg: ExperimentConfig):
        sizes, act = ARCH[cfg.experiment]
        self.cfg = cfg
        self.spec = nn.MlpSpec(sizes, act)
        self.train_size = cfg.train_size or DEFAULT_TRAIN_SIZE[cfg.experiment]
        self.test_size = cfg.test_size or DEFAULT_TEST_SIZE[cfg.experiment]
        if self.train_size and cfg.batch_size > self.train_size:
            raise ValueError(f"batch_size {cfg.batch_size} exceeds the "
                             f"training set size {self.train_size}")

        if cfg.experiment == "toy":
            self.graph = physics.build_toy_graph(self.spec, cfg.gamma)
        elif cfg.experiment == "oscillator":
            self.graph = physics.build_oscillator_graph(self.spec)
        elif cfg.experiment == "poisson":
            self.graph = physics.build_poisson_graph(self.spec)
        else:
            self.graph = physics.build_quantum_graph(self.spec)

        gen = datasets.GENERATORS[cfg.experiment]
        if cfg.experiment == "poisson":
            self.train = None    # generated per batch (effectively infinite)
            self.test = gen(self.test_size, seed=cfg.seed + 10_000)
        else:
            self.train = gen(self.train_size, seed=cfg.seed)
            self.test = gen(self.test_size, seed=cfg.seed + 10_000)

        if cfg.experiment == "quantum":
            _, self.psi1, self.psi2, _ = physics.eigenstates()

    def loss_and_grads(self, y, targets):
        if self.cfg.experiment == "quantum":
            return physics.overlap_loss_and_grads(y, targets)
        return physics.l2_loss_and_grads(y, targets)

    def train_batch(self, rng: np.random.Generator, indices):
        if self.cfg.experiment == "poisson":
            seed = int(rng.integers(0, 2 ** 62))
            ds = datasets.gen_poisson(self.cfg.batch_size, seed=seed)
            return ds.inputs, ds.targets
        return self.train.inputs[indices], self.train.targets[indices]

    def updates_per_epoch(self) -> int:
        if self.cfg.experiment == "poisson":
            return max(1, POISSON_NOMINAL_EPOCH // self.cfg.batch_size)
        return max(1, self.train_size // self.cfg.batch_size)

    def extras(self, y_test: np.ndarray, hidden_stds: np.ndarray | None):
        cfg = self.cfg
        out = {}
        if cfg.experiment == "quantum":
            psi = unpack_complex(y_test)
            tgt = unpack_complex(self.test.targets)
            a1 = np.abs(psi @ np.conj(self.psi1))
            b1 = np.abs(tgt @ np.conj(self.psi1))
            a2 = np.abs(psi @ np.conj(self.psi2))
            b2 = np.abs(tgt @ np.conj(self.psi2))
            out["low_energy_loss"] = float(np.mean((a1 - b1) ** 2))
            out["high_energy_loss"] = float(np.mean((a2 - b2) ** 2))
        elif cfg.experiment == "toy":
            out["mean_neuron_std"] = float(hidden_stds.mean())
        return out


def _evaluate_test(exp: _Experiment, theta) -> tuple[float, dict, np.ndarray | None]:
    """Mean test loss, extras dict and (toy) per-neuron stds."""
    losses = []
    outputs = []
    hidden = []
    inputs, targets = exp.test.inputs, exp.test.targets
    want_hidden = exp.cfg.experiment == "toy"
    for lo in range(0, len(inputs), EVAL_BATCH):
        sl = slice(lo, lo + EVAL_BATCH)
        vals = forward(exp.graph, theta, inputs[sl])
        y = vals[exp.graph.output]
        l, _ = exp.loss_and_grads(y, targets[sl])
        losses.append(l)
        outputs.append(y)
        if want_hidden:
            hidden.append(np.concatenate(
                [vals[i] for i in exp.graph.hidden_activations], axis=-1))
    y_all = np.concatenate(outputs, axis=0)
    stds = np.concatenate(hidden, axis=0).std(axis=0) if want_hidden else None
    test_loss = float(np.mean(np.concatenate(losses)))
    return test_loss, exp.extras(y_all, stds), stds


def _compute_update(exp: _Experiment, theta, state, xb, tb):
    """One optimizer step; returns (theta', batch train loss)."""
    cfg = exp.cfg
    graph = exp.graph
    vals = forward(graph, theta, xb)
    y = vals[graph.output]
    losses, lgrads = exp.loss_and_grads(y, tb)
    train_loss = float(np.mean(losses))

    if cfg.optimizer in GRAD_VARIANTS:
        pg = backward(graph, theta, vals, lgrads[None])
        grad = pg[0].mean(axis=0)
        new_values, _ = grad_step(state, theta.values, grad, cfg.eta)
        return theta.with_values(new_values), train_loss

    b, m = y.shape
    t = graph.param_count
    cot = np.zeros((m, b, m))
    for j in range(m):
        cot[j, :, j] = 1.0
    jac = np.zeros((b, m, t))
    backward(graph, theta, vals, cot, pgrad_out=jac.transpose(1, 0, 2))
    # batch-mean loss convention: the stacked loss gradients carry the 1/b
    # factor so update magnitudes are batch-size independent
    stack = JacobianStack(jac.reshape(b * m, t), lgrads.reshape(-1) / b, b, m)
    if cfg.optimizer == "gn":
        delta = gn_step(stack, cfg.tau)
    else:
        delta = hig_step(stack, HigConfig(eta=cfg.eta, kappa=cfg.kappa,
                                          tau=cfg.tau, beta=cfg.beta))
    return theta.with_values(theta.values + delta), train_loss


# ---------------------------------------------------------------------------
# run directory plumbing


def _write_metrics(path: Path, rows, extra_cols):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["wall_ms", "epoch", "update", "train_loss", "test_loss"] + extra_cols)
        for r in rows:
            w.writerow([f"{r.wall_ms:.3f}", r.epoch, r.update,
                        repr(r.train_loss), repr(r.test_loss)]
                       + [repr(r.extras.get(c, float("nan"))) for c in extra_cols])


def _write_meta(out: Path, cfg: ExperimentConfig, exp: _Experiment, status: str,
                parent_run: str | None):
    meta = {
        "config": asdict(cfg),
        "experiment": cfg.experiment,
        "optimizer": cfg.optimizer,
        "status": status,
        "network": {"layer_sizes": list(exp.spec.layer_sizes),
                    "hidden_activation": exp.spec.hidden_activation,
                    "param_count": nn.param_count(exp.spec),
                    "init": "glorot-uniform" if exp.spec.hidden_activation == "tanh"
                            else "he-normal",
                    "bias_init": "zeros"},
        "generator": datasets.GENERATOR_INFO,
        "adam_epsilon": 1e-7,
        "parent_run": parent_run,
        "timing_note": "wall_ms excludes test-set evaluation time",
    }
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)


# ---------------------------------------------------------------------------
# main loop


def run_experiment(cfg: ExperimentConfig, parent_run: str | None = None) -> RunResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = _Experiment(cfg)

    if cfg.init_params_path:
        loaded_spec, theta, _ = nn.load_params(cfg.init_params_path)
        if loaded_spec != exp.spec:
            raise ValueError(
                f"parameter file {cfg.init_params_path} was written for network "
                f"{loaded_spec.layer_sizes}, config needs {exp.spec.layer_sizes}")
    else:
        theta = nn.init(exp.spec, cfg.seed + 20_000)

    state = GradOptimizerState(cfg.optimizer) if cfg.optimizer in GRAD_VARIANTS else None
    shuffle_rng = np.random.default_rng(cfg.seed + 1_000)
    batch_rng = np.random.default_rng(cfg.seed + 2_000)

    rows: list[MetricsRecord] = []
    checkpoints = []
    keep_checkpoints = cfg.experiment == "toy"
    extra_cols = EXTRA_COLUMNS[cfg.experiment]

    per_epoch = exp.updates_per_epoch()
    eval_every_updates = cfg.eval_every_updates
    if eval_every_updates is None and cfg.experiment == "poisson":
        eval_every_updates = 10

    wall = 0.0
    updates = 0
    epoch = 0
    status = "ok"
    last_train_loss = float("nan")
    stop = False

    def record(train_loss):
        try:
            test_loss, extras, _ = _evaluate_test(exp, theta)
        except (FloatingPointError, AutodiffError, LinalgError):
            test_loss, extras = float("nan"), {}
        rows.append(MetricsRecord(wall * 1000.0, epoch, updates, train_loss,
                                  test_loss, extras))
        if keep_checkpoints:
            checkpoints.append(theta.values.copy())
        return test_loss

    # initial row: losses at the starting parameters
    xb0, tb0 = exp.train_batch(np.random.default_rng(cfg.seed + 3_000),
                               np.arange(min(cfg.batch_size,
                                             exp.train_size or cfg.batch_size)))
    l0, _ = exp.loss_and_grads(forward(exp.graph, theta, xb0)[exp.graph.output], tb0)
    test_loss = record(float(np.mean(l0)))
    if cfg.target_test_loss is not None and test_loss <= cfg.target_test_loss:
        stop = True

    while not stop:
        epoch += 1
        if exp.cfg.experiment == "poisson":
            batches = [None] * per_epoch
        else:
            order = shuffle_rng.permutation(exp.train_size)
            batches = [order[i * cfg.batch_size:(i + 1) * cfg.batch_size]
                       for i in range(per_epoch)]
        for idx in batches:
            xb, tb = exp.train_batch(batch_rng, idx)
            t0 = time.perf_counter()
            try:
                theta, last_train_loss = _compute_update(exp, theta, state, xb, tb)
            except (FloatingPointError, AutodiffError, LinalgError):
                last_train_loss = float("nan")
                status = "diverged"
            wall += time.perf_counter() - t0
            updates += 1
            if status == "ok" and not (np.isfinite(last_train_loss)
                                       and np.all(np.isfinite(theta.values))):
                status = "diverged"
            if status == "diverged":
                rows.append(MetricsRecord(wall * 1000.0, epoch, updates,
                                          last_train_loss, float("nan"), {}))
                stop = True
                break
            due = (eval_every_updates is not None and updates % eval_every_updates == 0)
            exhausted = ((cfg.budget_updates is not None and updates >= cfg.budget_updates)
                         or (cfg.budget_seconds is not None and wall >= cfg.budget_seconds))
            if due or exhausted:
                test_loss = record(last_train_loss)
                if cfg.target_test_loss is not None and test_loss <= cfg.target_test_loss:
                    stop = True
            if exhausted:
                stop = True
            if stop:
                break
        else:
            if eval_every_updates is None and epoch % cfg.test_eval_every == 0:
                test_loss = record(last_train_loss)
                if cfg.target_test_loss is not None and test_loss <= cfg.target_test_loss:
                    stop = True

    _write_metrics(out / "metrics.csv", rows, extra_cols)
    nn.save_params(out / "params.bin", exp.spec, theta, seed=cfg.seed)
    if keep_checkpoints:
        np.savez(out / "checkpoints.npz",
                 params=np.stack(checkpoints),
                 updates=np.array([r.update for r in rows[:len(checkpoints)]]))
    _write_meta(out, cfg, exp, status, parent_run)
    final_test = next((r.test_loss for r in reversed(rows) if np.isfinite(r.test_loss)),
                      float("nan"))
    return RunResult(status, str(out), rows, updates, wall, final_test)


def pretrain_handoff(from_run: str, cfg: ExperimentConfig) -> RunResult:
    """Continue training from a previous run's final parameters."""
    params = Path(from_run) / "params.bin"
    if not params.exists():
        raise FileNotFoundError(f"no parameter file in {from_run}")
    loaded_spec, _, _ = nn.load_params(params)
    expected = nn.MlpSpec(*ARCH[cfg.experiment])
    if loaded_spec != expected:
        raise ValueError(f"pretrained network {loaded_spec.layer_sizes} does not match "
                         f"{cfg.experiment} architecture {expected.layer_sizes}")
    cfg.init_params_path = str(params)
    return run_experiment(cfg, parent_run=str(from_run))


# ---------------------------------------------------------------------------
# sweeps


def sweep(grid_path: str, out_dir: str) -> list[dict]:
    """Cartesian-product sweep from a JSON grid file.

    File format: {"base": {config fields}, "grid": {field: [values, ...]}}.
    One run directory per grid point; failures are recorded and the sweep
    continues. Returns the summary (also written as summary.csv).
    """
    with open(grid_path, encoding="utf-8") as f:
        payload = json.load(f)
    base = payload.get("base", {})
    grid = payload.get("grid", {})
    keys = sorted(grid)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = []
    for values in itertools.product(*(grid[k] for k in keys)) if keys else [()]:
        point = dict(zip(keys, values))
        name = "-".join(f"{k}={v}" for k, v in point.items()) or "single"
        cfg_dict = {**base, **point, "out_dir": str(out / name)}
        entry = {"dir": name, **point}
        try:
            result = run_experiment(ExperimentConfig(**cfg_dict))
            entry["status"] = result.status
            entry["final_test_loss"] = result.final_test_loss
        except Exception as exc:  # individual failures must not kill the sweep
            entry["status"] = f"error: {exc}"
            entry["final_test_loss"] = float("nan")
        summary.append(entry)

    cols = ["dir"] + keys + ["status", "final_test_loss"]
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(summary)
    return summary


# ---------------------------------------------------------------------------
# diagnostics


def diagnostics(run_dir: str, probe_input: np.ndarray | None = None) -> dict:
    """Neuron saturation statistics per checkpoint and (toy) the output-space
    trajectory of a fixed probe input. Writes CSVs next to the metrics."""
    run = Path(run_dir)
    with open(run / "meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    cfg = ExperimentConfig(**meta["config"])
    exp = _Experiment(cfg)
    spec = exp.spec

    ckpt_file = run / "checkpoints.npz"
    if ckpt_file.exists():
        data = np.load(ckpt_file)
        params_list = list(data["params"])
        update_list = list(data["updates"])
    else:
        _, theta, _ = nn.load_params(run / "params.bin")
        params_list = [theta.values]
        update_list = [-1]

    written = {}
    stats_path = run / "neuron_stats.csv"
    n_hidden = sum(spec.layer_sizes[1:-1])
    with open(stats_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["update"] + [f"mean_{i}" for i in range(n_hidden)]
                   + [f"std_{i}" for i in range(n_hidden)])
        for upd, values in zip(update_list, params_list):
            theta = nn.ParamVector(values, spec.layers)
            means, stds = nn.neuron_saturation_stats(spec, theta, exp.test.inputs)
            w.writerow([upd] + [repr(float(v)) for v in means]
                       + [repr(float(v)) for v in stds])
    written["neuron_stats"] = str(stats_path)

    if cfg.experiment == "toy":
        probe = np.atleast_2d(probe_input if probe_input is not None else [0.5])
        traj_path = run / "trajectory.csv"
        m = exp.graph.output_dim
        with open(traj_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["update"] + [f"y{i}" for i in range(m)])
            for upd, values in zip(update_list, params_list):
                theta = nn.ParamVector(values, spec.layers)
                y = forward(exp.graph, theta, probe)[exp.graph.output][0]
                w.writerow([upd] + [repr(float(v)) for v in y])
        written["trajectory"] = str(traj_path)
    return written
