"""End-to-end acceptance criteria.

Each test prints one ``A<n>: PASS|FAIL (...)`` line (bypassing capture so the
verdicts are visible in a normal pytest run) and then asserts. Training-based
criteria cache their runs under ``/tmp/higrad_acceptance``; runs are
deterministic per config, so cached results are equivalent to fresh ones.
Delete the cache directory to force re-runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from higrad import datasets, figures, harness, linalg, nn, oracles, physics
from higrad.autodiff import JacobianStack, forward, vjp
from higrad.harness import ExperimentConfig
from higrad.optim import HigConfig, gn_step, hig_step

CACHE = Path(os.environ.get("HIGRAD_ACCEPTANCE_CACHE", "/tmp/higrad_acceptance"))

pytestmark = pytest.mark.acceptance


def _report(capsys, cid: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"{cid}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{cid} failed: {detail}"


# ---------------------------------------------------------------------------
# cached experiment runs

def _load_run(out: Path) -> dict:
    meta = json.loads((out / "meta.json").read_text())
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    return {"meta": meta, "cols": cols, "dir": out, "status": meta["status"]}


def _run(name: str, *, from_run: str | None = None, **kw) -> dict:
    """Run (or reload) one experiment; the cache key includes the config."""
    key = hashlib.sha256(repr(sorted(kw.items())).encode()).hexdigest()[:10]
    out = CACHE / f"{name}-{key}"
    if not (out / "meta.json").exists():
        cfg = ExperimentConfig(out_dir=str(out), **kw)
        if from_run is not None:
            harness.pretrain_handoff(from_run, cfg)
        else:
            harness.run_experiment(cfg)
    return _load_run(out)


def _finite(run: dict, col: str = "test_loss") -> np.ndarray:
    v = run["cols"][col]
    return v[np.isfinite(v)]


def _loss_at_wall(run: dict, wall_s: float) -> float:
    """Last finite test loss recorded at wall time <= wall_s."""
    w = run["cols"]["wall_ms"] / 1000.0
    t = run["cols"]["test_loss"]
    mask = (w <= wall_s) & np.isfinite(t)
    if not mask.any():
        return math.inf
    return float(t[mask][-1])


def _orders(run: dict) -> float:
    t = _finite(run)
    return float(np.log10(t[0] / t[-1])) if t[-1] > 0 else math.inf


def _experiment_graph(experiment: str):
    (sizes, act) = harness.ARCH[experiment]
    spec = nn.MlpSpec(sizes, act)
    builders = {
        "toy": lambda s: physics.build_toy_graph(s, gamma=1.0),
        "oscillator": physics.build_oscillator_graph,
        "poisson": physics.build_poisson_graph,
        "quantum": physics.build_quantum_graph,
    }
    return spec, builders[experiment](spec)


# ---------------------------------------------------------------------------
# A1 - A7: math and physics criteria (fast)

def test_a01_parameter_counts(capsys):
    expected = {"oscillator": 2956, "poisson": 41408, "quantum": 9484}
    got = {e: nn.param_count(nn.MlpSpec(*harness.ARCH[e])) for e in expected}
    ok = got == expected
    _report(capsys, "A1", ok, f"param counts {got}")


def test_a02_derivatives_match_finite_differences(capsys):
    worst = 0.0
    for experiment in harness.EXPERIMENTS:
        spec, graph = _experiment_graph(experiment)
        rng = np.random.default_rng(zlib.crc32(experiment.encode()))
        theta = nn.init(spec, seed=1234)
        n_in = spec.layer_sizes[0]
        for _ in range(100):
            x = rng.uniform(-1.0, 1.0, size=(1, n_in))
            y0 = forward(graph, theta, x)[graph.output]
            cot = rng.standard_normal(y0.shape)
            v = rng.standard_normal(theta.values.size)
            v /= np.linalg.norm(v)
            ad = float(vjp(graph, theta, x, cot)[0] @ v)

            def f(s):
                th = theta.with_values(theta.values + s[0] * v)
                y = forward(graph, th, x)[graph.output]
                return np.array([float(np.sum(cot * y))])

            fd = float(oracles.fd_jacobian(f, np.zeros(1))[0, 0])
            worst = max(worst, abs(ad - fd) / max(abs(fd), 1e-6))
    ok = worst < 1e-5
    _report(capsys, "A2", ok, f"max relative error {worst:.3g} over 4x100 probes")


def test_a03_fractional_power_algebra(capsys):
    rng = np.random.default_rng(3)
    worst_t = worst_mp = worst_sv = 0.0
    truncation_ok = True
    for _ in range(200):
        rows, cols = rng.integers(2, 12, size=2)
        m = rng.standard_normal((rows, cols))
        worst_t = max(worst_t, np.abs(linalg.frac_power(m, 1.0) - m.T).max())
        pinv = linalg.frac_power(m, -1.0)
        for lhs, rhs in [(m @ pinv @ m, m), (pinv @ m @ pinv, pinv),
                         ((m @ pinv).T, m @ pinv), ((pinv @ m).T, pinv @ m)]:
            worst_mp = max(worst_mp, np.abs(lhs - rhs).max())
        f = linalg.svd(m)
        half = linalg.frac_power(m, -0.5)
        sv = np.sort(np.linalg.svd(half, compute_uv=False))[::-1]
        expect = np.sort(f.sigma ** -0.5)[::-1]
        worst_sv = max(worst_sv, np.abs(sv - expect).max())
        tau = float(np.median(f.sigma))
        kept = int((f.sigma >= tau).sum())
        rank = int(np.linalg.matrix_rank(linalg.frac_power(m, -0.5, tau=tau),
                                         tol=1e-10))
        truncation_ok &= rank == kept
    ok = worst_t <= 1e-8 and worst_mp <= 1e-8 and worst_sv <= 1e-9 and truncation_ok
    _report(capsys, "A3", ok,
            f"transpose {worst_t:.2g}, pseudoinverse {worst_mp:.2g}, "
            f"sigma-map {worst_sv:.2g}, truncation exact: {truncation_ok}")


def test_a04_endpoint_equivalences(capsys):
    rng = np.random.default_rng(4)
    worst_gd = worst_gn = 0.0
    for _ in range(50):
        b, m, t = 4, 3, 10
        jac = rng.standard_normal((b * m, t))
        g = rng.standard_normal(b * m)
        stack = JacobianStack(jac, g, b, m)
        gd = hig_step(stack, HigConfig(eta=0.7, kappa=1.0, tau=0.0))
        worst_gd = max(worst_gd, np.abs(gd - (-0.7 * jac.T @ g)).max())
        hig_gn = hig_step(stack, HigConfig(eta=1.0, kappa=-1.0, tau=1e-12))
        gn = gn_step(stack, 1e-12)
        ref = oracles.normal_equations_gn(jac, g)
        worst_gn = max(worst_gn, np.abs(hig_gn - gn).max(),
                       np.abs(gn - ref).max())
    ok = worst_gd <= 1e-8 and worst_gn <= 1e-8
    _report(capsys, "A4", ok,
            f"summed-gradient dev {worst_gd:.2g}, full-inverse dev {worst_gn:.2g}")


def test_a05_steepest_descent_property(capsys):
    rng = np.random.default_rng(5)
    violations = 0
    for i in range(100):
        jac = rng.standard_normal((8, 6))
        g = rng.standard_normal(8)
        delta = hig_step(JacobianStack(jac, g, 4, 2),
                         HigConfig(eta=1.0, kappa=-0.5, tau=0.0))
        if not oracles.steepest_descent_oracle(jac, g, delta,
                                               trials=1000, seed=i):
            violations += 1
    _report(capsys, "A5", violations == 0,
            f"{violations} violations over 100 pairs x 1000 directions")


def test_a06_overshoot_scaling(capsys):
    rng = np.random.default_rng(6)
    ok = True
    ratios = []
    for smin in (1e-2, 1e-4, 1e-6):
        u = rng.standard_normal(6)
        u /= np.linalg.norm(u)
        w = rng.standard_normal(6)
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
        jac = np.stack([u, u + smin * w])
        g = rng.standard_normal(2)
        stack = JacobianStack(jac, g, 2, 1)
        r = (np.linalg.norm(gn_step(stack, 0.0))
             / np.linalg.norm(hig_step(stack, HigConfig(eta=1.0, kappa=-0.5,
                                                        tau=0.0))))
        ratios.append(r)
        expect = smin ** -0.5
        ok &= expect / 2 <= r <= expect * 2
    _report(capsys, "A6", ok,
            "GN/HIG norm ratios " + ", ".join(f"{r:.3g}" for r in ratios))


def test_a07_solver_physics(capsys):
    checks = {}
    # harmonic oscillator (no interaction): analytic rotation in phase space
    s0 = physics.OscillatorState(np.array([0.3, -0.2]), np.array([0.1, 0.4]))
    end = physics.rk4_rollout(s0, np.zeros(96), alpha=0.0, c=np.zeros(2))
    t = 96 * physics.OSC_DT
    xa = s0.x * math.cos(t) + s0.p * math.sin(t)
    pa = s0.p * math.cos(t) - s0.x * math.sin(t)
    checks["rk4-analytic"] = (max(np.abs(end.x - xa).max(),
                                  np.abs(end.p - pa).max()), 1e-3)
    # nonlinear energy drift, small-amplitude regime where dt=0.125 resolves
    # the quartic forces
    s0 = physics.OscillatorState(np.array([0.05, -0.03]), np.array([0.02, 0.04]))
    e0 = physics.hamiltonian_energy(s0, 0.0, alpha=1.0, c=np.zeros(2))
    e1 = physics.hamiltonian_energy(
        physics.rk4_rollout(s0, np.zeros(96), alpha=1.0, c=np.zeros(2)),
        0.0, alpha=1.0, c=np.zeros(2))
    checks["energy-drift"] = (abs(e1 - e0) / abs(e0), 1e-5)
    # Crank-Nicolson unitarity and eigenstate invariance
    psi0, _, _, _ = physics.eigenstates()
    psi = physics.WaveFunction.from_complex(psi0.astype(np.complex128))
    drift = 0.0
    cur = psi
    for _ in range(8):
        nxt = physics.cn_step(cur, 0.0)
        drift = max(drift, abs(np.linalg.norm(nxt.complex())
                               - np.linalg.norm(cur.complex())))
        cur = nxt
    checks["cn-norm"] = (drift, 1e-12)
    rolled = physics.cn_rollout(psi, np.zeros(384))
    checks["cn-eigenstate"] = (physics.overlap_loss(rolled, psi), 1e-10)
    # discrete Laplacian spectrum (1D factors) and quantum eigenvalues
    lap = physics.laplacian_matrix()
    evals = np.sort(np.linalg.eigvalsh(-lap))
    n = physics.POISSON_N
    k = np.arange(1, n + 1)
    one_d = 2.0 - 2.0 * np.cos(np.pi * k / (n + 1))
    expect = np.sort((one_d[:, None] + one_d[None, :]).ravel())
    checks["laplacian"] = (np.abs(evals - expect).max(), 1e-10)
    dx = physics.QM_DX
    h = physics.build_quantum_hamiltonian(0.0)
    energies, _ = linalg.eigh_sym_tridiagonal(h.diag.real, h.lower.real)
    expect_q = (2.0 - 2.0 * np.cos(np.pi * np.arange(1, 15) / 15)) / dx ** 2
    checks["quantum-spectrum"] = (np.abs(np.sort(energies) - expect_q).max(), 1e-10)

    ok = all(v <= tol for v, tol in checks.values())
    detail = ", ".join(f"{k} {v:.2g}<= {tol:g}" for k, (v, tol) in checks.items())
    _report(capsys, "A7", ok, detail)


# ---------------------------------------------------------------------------
# A8 - A11: training reproductions (slow)

TOY_SEEDS = (0, 1, 2)


def _toy_run(optimizer, gamma, seed, **kw):
    base = dict(experiment="toy", batch_size=256, gamma=gamma, seed=seed,
                test_eval_every=100)
    base.update(kw)
    return _run(f"toy-{optimizer}-g{gamma}-s{seed}", optimizer=optimizer, **base)


@pytest.mark.slow
def test_a08_toy_reproduction(capsys):
    drops_adam, drops_hig, finals = [], [], {"adam": [], "gn": [], "hig": []}
    gn_collapsed, hig_collapsed = [], []
    spec = nn.MlpSpec(*harness.ARCH["toy"])
    for seed in TOY_SEEDS:
        drops_adam.append(_orders(_toy_run("adam", 1.0, seed, eta=0.3,
                                           budget_updates=12000)))
        drops_hig.append(_orders(_toy_run("hig", 1.0, seed, eta=1.0, tau=1e-6,
                                          budget_updates=12000)))
        runs = {
            "adam": _toy_run("adam", 0.01, seed, eta=0.3, budget_updates=25000),
            "gn": _toy_run("gn", 0.01, seed, tau=1e-4, budget_updates=25000),
            "hig": _toy_run("hig", 0.01, seed, eta=1.0, tau=1e-6,
                            budget_updates=25000),
        }
        for name, run in runs.items():
            finals[name].append(_finite(run)[-1])
        # neuron variance collapse: final vs initial std on the test inputs
        inputs = datasets.gen_toy(1024, seed=seed + 10_000).inputs
        _, std0 = nn.neuron_saturation_stats(
            spec, nn.init(spec, seed + 20_000), inputs)
        for name, sink in (("gn", gn_collapsed), ("hig", hig_collapsed)):
            _, theta, _ = nn.load_params(Path(runs[name]["dir"]) / "params.bin")
            _, std1 = nn.neuron_saturation_stats(spec, theta, inputs)
            sink.append(int(np.sum(std1 < 0.1 * std0)))

    med = lambda xs: float(np.median(xs))
    c1 = med(drops_adam) >= 3.0
    c2 = med(drops_hig) >= 3.0
    c3 = (med(finals["hig"]) * 10 <= med(finals["adam"])
          and med(finals["hig"]) * 10 <= med(finals["gn"]))
    c4 = med(gn_collapsed) >= 1 and med(hig_collapsed) == 0
    ok = c1 and c2 and c3 and c4
    _report(capsys, "A8", ok,
            f"adam drop {med(drops_adam):.2f} orders (>=3: {c1}), "
            f"hig drop {med(drops_hig):.2f} orders (>=3: {c2}), "
            f"ill-conditioned finals hig {med(finals['hig']):.2g} vs "
            f"adam {med(finals['adam']):.2g} / gn {med(finals['gn']):.2g} "
            f"(10x below both: {c3}), collapsed neurons gn {gn_collapsed} "
            f"hig {hig_collapsed} ({c4})")


def _osc_run(name, optimizer, batch, **kw):
    return _run(f"osc-{name}", experiment="oscillator", optimizer=optimizer,
                batch_size=batch, seed=0, **kw)


@pytest.mark.slow
def test_a09_oscillator_reproduction(capsys):
    hig128 = _osc_run("hig-b128", "hig", 128, eta=1.0, tau=1e-6,
                      budget_updates=3000, target_test_loss=1e-6)
    hig32 = _osc_run("hig-b32", "hig", 32, eta=1.0, tau=1e-6,
                     budget_updates=3000, target_test_loss=1e-6)
    adams = {b: _osc_run(f"adam-b{b}", "adam", b, eta=3e-4,
                         budget_seconds=300.0)
             for b in (256, 512, 1024)}

    c1 = _finite(hig128).min() <= 1e-6
    wall = min([hig128["cols"]["wall_ms"].max() / 1000.0]
               + [a["cols"]["wall_ms"].max() / 1000.0 for a in adams.values()])
    best_adam = min(_loss_at_wall(a, wall) for a in adams.values())
    hig_at = _loss_at_wall(hig128, wall)
    c2 = hig_at <= 1e-2 * best_adam
    c3 = _finite(hig128)[-1] < _finite(hig32)[-1]
    adam_finals = [_loss_at_wall(a, wall) for a in adams.values()]
    c4 = max(adam_finals) <= 10 * min(adam_finals)
    ok = c1 and c2 and c3 and c4
    _report(capsys, "A9", ok,
            f"hig best {_finite(hig128).min():.3g} (<=1e-6: {c1}), "
            f"hig {hig_at:.3g} vs best adam {best_adam:.3g} at {wall:.0f}s "
            f"(<=1e-2x: {c2}), batch trend b128 {_finite(hig128)[-1]:.3g} < "
            f"b32 {_finite(hig32)[-1]:.3g}: {c3}, adam spread {adam_finals} "
            f"within 1 order: {c4}")


def _updates_in_band(run, lo=0.4, hi=0.6):
    upd = run["cols"]["update"]
    loss = run["cols"]["test_loss"]
    total = 0.0
    for i in range(1, len(upd)):
        if np.isfinite(loss[i]) and lo <= loss[i] <= hi:
            total += upd[i] - upd[i - 1]
    return total


@pytest.mark.slow
def test_a10_quantum_reproduction(capsys):
    hig = _run("qm-hig", experiment="quantum", optimizer="hig", eta=0.5,
               batch_size=16, tau=1e-5, seed=0, budget_seconds=900.0)
    adam = _run("qm-adam", experiment="quantum", optimizer="adam", eta=1e-4,
                batch_size=16, seed=0, budget_seconds=900.0)

    wall = min(hig["cols"]["wall_ms"].max(), adam["cols"]["wall_ms"].max()) / 1000.0
    c1 = wall > 120.0 and _loss_at_wall(hig, wall) < _loss_at_wall(adam, wall)
    band_adam = _updates_in_band(adam)
    band_hig = _updates_in_band(hig)
    c2 = band_adam >= 5 * max(band_hig, 1.0)
    low = hig["cols"]["low_energy_loss"]
    high = hig["cols"]["high_energy_loss"]
    fin = np.isfinite(low) & np.isfinite(high)
    le, he = low[fin][-1], high[fin][-1]
    c3 = max(le, he) <= 10 * min(le, he)
    # Adam's plateau exit: last eval row with test loss still in [0.4, 0.6]
    loss_a = adam["cols"]["test_loss"]
    in_band = np.where(np.isfinite(loss_a) & (loss_a >= 0.4) & (loss_a <= 0.6))[0]
    if in_band.size:
        i = in_band[-1]
        la, ha = adam["cols"]["low_energy_loss"][i], adam["cols"]["high_energy_loss"][i]
        c4 = max(la, ha) > 10 * min(la, ha)
    else:
        la = ha = math.nan
        c4 = False
    ok = c1 and c2 and c3 and c4
    _report(capsys, "A10", ok,
            f"hig {_loss_at_wall(hig, wall):.3g} < adam "
            f"{_loss_at_wall(adam, wall):.3g} at {wall:.0f}s: {c1}, "
            f"plateau updates adam {band_adam:.0f} vs hig {band_hig:.0f} "
            f"(>=5x: {c2}), hig le/he {le:.3g}/{he:.3g} within 10x: {c3}, "
            f"adam le/he {la:.3g}/{ha:.3g} beyond 10x at plateau exit: {c4}")


@pytest.mark.slow
def test_a11_poisson_reproduction(capsys):
    adam = _run("poi-adam", experiment="poisson", optimizer="adam", eta=1e-4,
                batch_size=64, seed=0, budget_seconds=600.0,
                eval_every_updates=200)
    hig = _run("poi-hig", experiment="poisson", optimizer="hig", eta=0.02,
               batch_size=64, tau=1e-5, seed=0, budget_seconds=1500.0,
               eval_every_updates=5)
    c1 = _orders(adam) >= 1.5
    c2 = _orders(hig) >= 1.5

    handoff = _run("poi-handoff", from_run=str(adam["dir"]),
                   experiment="poisson", optimizer="hig", eta=0.02,
                   batch_size=64, tau=1e-5, seed=0, budget_updates=50,
                   eval_every_updates=5)
    parent_final = _finite(adam)[-1]
    handoff_min = _finite(handoff).min()
    c3 = parent_final >= 2.0 * handoff_min

    back = _run("poi-handback", from_run=str(handoff["dir"]),
                experiment="poisson", optimizer="adam", eta=1e-4,
                batch_size=64, seed=0, budget_updates=200,
                eval_every_updates=20)
    # "loses at least half of the drop": the returning Adam curve climbs back
    # past the geometric midpoint of the handoff's improvement
    midpoint = math.sqrt(parent_final * handoff_min)
    c4 = _finite(back)[-1] >= midpoint
    ok = c1 and c2 and c3 and c4
    _report(capsys, "A11", ok,
            f"adam drop {_orders(adam):.2f} orders (>=1.5: {c1}), "
            f"hig drop {_orders(hig):.2f} orders (>=1.5: {c2}), handoff "
            f"{parent_final:.3g}->{handoff_min:.3g} (>=2x: {c3}), "
            f"handback {_finite(back)[-1]:.3g} >= midpoint {midpoint:.3g}: {c4}")


# ---------------------------------------------------------------------------
# A12 - A13: determinism and figures

def test_a12_determinism(capsys):
    runs = []
    for tag in ("a", "b"):
        out = CACHE / f"det-{tag}"
        if not (out / "meta.json").exists():
            harness.run_experiment(ExperimentConfig(
                experiment="toy", optimizer="adam", eta=0.3, batch_size=256,
                seed=11, budget_updates=60, test_eval_every=1,
                out_dir=str(out)))
        runs.append(_load_run(out))
    same = all(
        np.array_equal(runs[0]["cols"][k], runs[1]["cols"][k])
        for k in runs[0]["cols"] if k != "wall_ms")
    _report(capsys, "A12", same, "loss columns bit-identical across reruns")


OPTIMIZER_TABLE = {
    # optimizer: (batch, eta, tau) for the seven-way comparison
    "adadelta": (512, 0.1, 0.0),
    "adagrad": (512, 0.1, 0.0),
    "adam": (512, 3e-4, 0.0),
    "gn": (128, 1.0, 1e-6),
    "hig": (128, 1.0, 1e-6),
    "rmsprop": (512, 1e-4, 0.0),
    "sgd": (512, 0.1, 0.0),
}


@pytest.mark.slow
def test_a13_figure_regeneration(capsys):
    run_dirs = []
    for opt, (batch, eta, tau) in OPTIMIZER_TABLE.items():
        run = _osc_run(f"seven-{opt}", opt, batch, eta=eta, tau=tau,
                       budget_seconds=60.0)
        run_dirs.append(str(run["dir"]))
    out = CACHE / "figs-overlay"
    rendered = figures.make_figures(run_dirs, str(out))
    overlay_ok = any(Path(p).name == "loss_vs_wall.png" for p in rendered)
    labels = {figures._label(figures._load_run(Path(d))) for d in run_dirs}
    named_ok = len(labels) == 7 and all(
        any(opt in lab for lab in labels) for opt in OPTIMIZER_TABLE)

    hig = _run("qm-hig", experiment="quantum", optimizer="hig", eta=0.5,
               batch_size=16, tau=1e-5, seed=0, budget_seconds=900.0)
    out2 = CACHE / "figs-energy"
    rendered2 = figures.make_figures([str(hig["dir"])], str(out2))
    energy_ok = any(Path(p).name == "energy_components.png" for p in rendered2)
    ok = overlay_ok and named_ok and energy_ok
    _report(capsys, "A13", ok,
            f"overlay rendered: {overlay_ok}, seven optimizers named: "
            f"{named_ok}, energy panel rendered: {energy_ok}")
