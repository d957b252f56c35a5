"""Acceptance suite: one PASS/FAIL line per criterion, echoed in the pytest summary."""

import time

import numpy as np
import pytest

from meshmove.deformers import DeformerModel, clip_baseline_deform, collate, spline_deform
from meshmove.deformers.spline import rq_spline, rq_spline_inverse
from meshmove.fem import AnalyticField, quadrature_l2_error, solve_poisson
from meshmove.mesh import CORNER, EDGE, DomainSpec, build_polygon_mesh, build_unit_square_mesh, inversion_fraction
from meshmove.mover import ma_adapt
from meshmove.pipeline import evaluate, generate_burgers_dataset, generate_poisson_dataset, train
from meshmove.pipeline.datasets import poisson_monitor
from meshmove.problems import random_mixture, stream

from helpers import VERDICTS, in_convex_hull, on_segment_distance, poisson_input, randomize, ring_hull_violations
from test_deformers import random_knots
from test_mover import column_errors
from test_nn import OPS, check_gradients

SMALL = {"conv_channels": [4, 8], "hidden": 16, "grid_n": 16}


def verdict(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# shared desk-scale fixtures

@pytest.fixture(scope="session")
def train_set():
    return generate_poisson_dataset(64, [15, 20], seed=0, split="train")


@pytest.fixture(scope="session")
def test_set():
    return generate_poisson_dataset(32, [15, 20], seed=1, split="test")


@pytest.fixture(scope="session")
def spline_run(train_set):
    start = time.perf_counter()
    model, history = train("m2n_spline", train_set, epochs=100, seed=0)
    return model, history, time.perf_counter() - start


@pytest.fixture(scope="session")
def spline_report(spline_run, test_set):
    start = time.perf_counter()
    report = evaluate([spline_run[0]], test_set)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def gat_model(train_set):
    model, _ = train("m2n_gat", train_set, epochs=10, seed=0)
    return model


# 1. FEM correctness

def test_criterion_01_fem_convergence():
    start = time.perf_counter()
    u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    f = lambda x, y: 2 * np.pi ** 2 * u(x, y)
    errs = []
    for n in (9, 17, 33):
        errs.append(quadrature_l2_error(solve_poisson(build_unit_square_mesh(n), f, u), AnalyticField(u)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    elapsed = time.perf_counter() - start
    verdict(1, bool(np.all((rates >= 1.9) & (rates <= 2.1)) and elapsed < 10),
            f"L2 rates {rates.round(3).tolist()} (need [1.9, 2.1]), {elapsed:.2f} s (need < 10 s)")


# 2. MA mover effectiveness

def test_criterion_02_ma_effectiveness():
    start = time.perf_counter()
    ds = generate_poisson_dataset(20, [15], seed=2, split="test")
    row = evaluate([], ds).row("MA")
    elapsed = time.perf_counter() - start
    off = max(on_segment_distance(rec.mesh, rec.target)[rec.mesh.tag_kind == EDGE].max() for rec in ds)
    corners = all(np.array_equal(rec.target[rec.mesh.tag_kind == CORNER], rec.mesh.nodes[rec.mesh.tag_kind == CORNER])
                  for rec in ds)
    ok = row.reduction_mean >= 0.10 and row.inversion_pct == 0 and off <= 1e-10 and corners and elapsed < 300
    verdict(2, ok, f"mean reduction {100 * row.reduction_mean:.2f}% (need >= 10%), inversion {row.inversion_pct:.2f}%, "
                   f"boundary offset {off:.1e} (need <= 1e-10), corners fixed {corners}, {elapsed:.0f} s (need < 300 s)")


# 3. MA equidistribution

def test_criterion_03_equidistribution(train_set, test_set):
    stats = [rec.ma_stats for ds in (train_set, test_set) for rec in ds]
    decreased = sum(s["eq_after"] < s["eq_before"] for s in stats)
    oracle_err = column_errors(15)
    ok = decreased == len(stats) and oracle_err <= 0.02
    verdict(3, ok, f"equidistribution decreased on {decreased}/{len(stats)} converged runs; 1-D oracle error "
                   f"{100 * oracle_err:.1f}% of a cell at n=15 (need <= 2%)")


# 4. Monitor-scaling invariance

def test_criterion_04_monitor_scaling():
    diffs = []
    for k in range(5):
        rng = stream(4, "acceptance", k)
        mesh = build_unit_square_mesh(int(rng.integers(10, 18)))
        mix = random_mixture(rng, mesh.domain, (1, 3), (0.05, 0.25), (0.5, 1.5))
        m = poisson_monitor(mesh, mix, 1.0, 5.0)
        diffs.append(np.abs(ma_adapt(mesh, m).coords - ma_adapt(mesh, m.scaled(10.0)).coords).max())
    verdict(4, max(diffs) <= 1e-6, f"max coordinate difference {max(diffs):.2e} over 5 cases (need <= 1e-6)")


# 5. Spline invertibility and boundary consistency

def _square_boundary_ok(mesh, x):
    corner = mesh.tag_kind == CORNER
    if np.abs(x[corner] - mesh.nodes[corner]).max() > 1e-12:
        return False
    for axis in (0, 1):
        for side in (0.0, 1.0):
            on = mesh.nodes[:, axis] == side
            if not np.all(x[on, axis] == side):
                return False
    return bool(np.all((x >= 0) & (x <= 1)))


def test_criterion_05_spline_invertibility(spline_run):
    kx, ky, kd = random_knots(50, n=10_000)
    u = np.random.default_rng(51).random(10_000)
    y, _, _ = rq_spline(u, kx, ky, kd)
    round_trip = np.abs(rq_spline_inverse(y.data, kx, ky, kd) - u).max()
    trained = spline_run[0]
    checkpoints = [trained] + [randomize(DeformerModel("m2n_spline", SMALL, seed=s), s, 0.5) for s in range(3)]
    boundary_ok = True
    for model in checkpoints:
        for n in (12, 17, 23):
            mesh = build_unit_square_mesh(n)
            boundary_ok &= _square_boundary_ok(mesh, spline_deform(model, mesh, poisson_input(mesh, n)[1]))
    inverted = 0
    for k in range(100):
        mesh = build_unit_square_mesh(12 + k % 12)
        inverted += inversion_fraction(mesh, spline_deform(trained, mesh, poisson_input(mesh, 1000 + k)[1])) > 0
    ok = round_trip <= 1e-9 and boundary_ok and inverted == 0
    verdict(5, ok, f"round trip {round_trip:.1e} (need <= 1e-9), boundary kept by {len(checkpoints)} checkpoints "
                   f"{boundary_ok}, {inverted}/100 sweep samples with inverted elements")


# 6. GAT hull confinement

def _hull_violations(model, mesh, seed):
    _, state = poisson_input(mesh, seed)
    batch = collate([model.prepare(mesh, state)])
    trace = []
    model.forward(batch, trace)
    return sum(ring_hull_violations(trace, batch.senders, batch.receivers, batch.n_nodes)), \
        batch.n_nodes * len(trace)


def test_criterion_06_gat_hull(gat_model):
    meshes = [build_unit_square_mesh(n) for n in (8, 10, 12)] + [build_polygon_mesh(DomainSpec.heptagon(), 9)]
    bad = checked = 0
    for k in range(50):
        model = randomize(DeformerModel("m2n_gat", seed=k), k, scale=1.0)
        b, c = _hull_violations(model, meshes[k % len(meshes)], k)
        bad, checked = bad + b, checked + c
    random_bad = bad
    for k in range(50):
        b, c = _hull_violations(gat_model, meshes[k % 3], 500 + k)
        bad, checked = bad + b, checked + c
    verdict(6, bad == 0, f"{bad} of {checked} node-block updates left the closed 1-ring hull "
                         f"({random_bad} with random weights, {bad - random_bad} with trained weights)")


# 7. Autodiff soundness

def _composed_forward_error(kind, seed):
    from meshmove.nn import tensor as T
    mesh = build_unit_square_mesh(3)
    model = randomize(DeformerModel(kind, {**SMALL, "grid_n": 8}, seed=seed), seed, scale=0.5)
    batch = collate([model.prepare(mesh, poisson_input(mesh, seed)[1])])
    weights = np.random.default_rng(seed).normal(size=(mesh.n_nodes, 2))

    def loss():
        return float(np.sum(model.forward(batch).data * weights))

    model.store.zero_grad()
    with T.Tape() as tape:
        out = T.tsum(model.forward(batch) * T.Tensor(weights))
    tape.backward(out)
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    h = 1e-6
    for p in model.store.params.values():
        flat = p.data.reshape(-1)
        grad = np.zeros_like(flat) if p.grad is None else p.grad.reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, 8), replace=False)
        fd = np.empty(len(picks))
        for j, i in enumerate(picks):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            fd[j] = (up - down) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(grad[picks]).max(), 1e-6)
        worst = max(worst, np.abs(fd - grad[picks]).max() / scale)
    return worst


def test_criterion_07_autodiff():
    op_errors = {name: max(check_gradients(f, arrays, h=1e-5)) for name, (f, arrays) in OPS.items()}
    composed = {kind: _composed_forward_error(kind, 3) for kind in ("m2n_spline", "m2n_gat")}
    worst_op = max(op_errors, key=op_errors.get)
    ok = max(op_errors.values()) < 1e-4 and max(composed.values()) < 1e-4
    verdict(7, ok, f"{len(op_errors)} ops, worst {worst_op} {op_errors[worst_op]:.1e}; composed 3x3 forward "
                   + ", ".join(f"{k} {v:.1e}" for k, v in composed.items()) + " (need < 1e-4)")


# 8. End-to-end learning signal

def test_criterion_08_learning_signal(spline_run, spline_report, train_set, test_set):
    report, eval_s = spline_report
    ma, spline = report.row("MA"), report.row("M2N-Spline")
    minutes = (spline_run[2] + eval_s) / 60
    ok = spline.reduction_mean >= 0.5 * ma.reduction_mean and spline.inversion_pct == 0 and minutes < 30
    verdict(8, ok, f"M2N-Spline {100 * spline.reduction_mean:.2f}% vs MA {100 * ma.reduction_mean:.2f}% "
                   f"(need >= 50% of MA), inversion {spline.inversion_pct:.2f}%, train+eval {minutes:.1f} min "
                   f"(need < 30 min)")


# 9. Resolution generalisation

def test_criterion_09_resolution_generalisation(spline_run):
    parts = []
    ok = True
    for n in (12, 23):
        ds = generate_poisson_dataset(8, [n], seed=3, split="test")
        row = evaluate([spline_run[0]], ds, include_ma=False).row("M2N-Spline")
        ok &= row.inversion_pct == 0 and row.reduction_mean > 0
        parts.append(f"{n}x{n}: {100 * row.reduction_mean:.2f}% reduction, inversion {row.inversion_pct:.2f}%")
    verdict(9, ok, "; ".join(parts) + " (need > 0% and 0%)")


# 10. Speedup

def test_criterion_10_speedup(spline_report):
    report, _ = spline_report
    ma, spline = report.row("MA"), report.row("M2N-Spline")
    ratio = spline.time_ms_mean / ma.time_ms_mean
    verdict(10, ratio <= 1 / 50, f"M2N-Spline {spline.time_ms_mean:.2f} ms vs MA {ma.time_ms_mean:.2f} ms, "
                                 f"ratio 1/{1 / ratio:.1f} (need <= 1/50)")


# 11. Baseline tangling contrast

@pytest.fixture(scope="session")
def adversarial_input(test_set):
    """MLP-Deform-Clip with a uniform shift of 0.4 on the first held-out sample: the wall clip folds cells."""
    rec = test_set.records[0]
    model = DeformerModel("mlp_deform_clip", SMALL)
    model.net.mlp.layers[-1].bias.data[...] = [0.4, 0.0]
    return rec.mesh, rec.state(), model


def test_criterion_11_tangling_contrast(adversarial_input, spline_run, gat_model):
    mesh, state, clip = adversarial_input
    clip_inv = inversion_fraction(mesh, clip_baseline_deform(clip, mesh, state))
    spline_inv = inversion_fraction(mesh, spline_run[0].deform(mesh, state))
    gat_inv = inversion_fraction(mesh, gat_model.deform(mesh, state))
    ok = clip_inv > 0 and spline_inv == 0 and gat_inv == 0
    verdict(11, ok, f"inversion MLP-Deform-Clip {100 * clip_inv:.2f}% (need > 0), M2N-Spline {100 * spline_inv:.2f}%, "
                    f"M2N-GAT {100 * gat_inv:.2f}% (need 0)")


# 12. Burgers pipeline

def test_criterion_12_burgers():
    start = time.perf_counter()
    ds = generate_burgers_dataset(2, steps=20, seed=0, split="test")
    row = evaluate([], ds).row("MA")
    elapsed = time.perf_counter() - start
    verdict(12, row.reduction_mean > 0, f"{len(ds)} records, MA mean reduction {100 * row.reduction_mean:.2f}% "
                                        f"(need > 0), {elapsed:.0f} s")
