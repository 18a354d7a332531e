"""End-to-end acceptance gate: one test per criterion, each reporting a pass/fail line."""
import time

import numpy as np
import pytest

from gridmp.dataset import build_dataset
from gridmp.diagnostics import dirichlet_energy, rayleigh_quotient, sym_normalized_laplacian
from gridmp.grid import build_synthetic_grid, distance_data, generate_switching_scenario
from gridmp.harness import (ExperimentConfig, GridSpec, TrainConfig, default_model_config, evaluate_rmse,
                            export_results, rmse, run_sweep, train)
from gridmp.models import MODEL_KINDS, ModelConfig, build_model, make_batch
from gridmp.models.kron import kron_operator, skp_layer, vec
from gridmp.powerflow import power_injections, solve_power_flow

from conftest import (ACCEPTANCE_LINES, model_gradient_errors, permute_sample, random_batch, randomize,
                      smooth_random_batch, solved_samples)
from oracles import (bfs_connected, closed_edges, floyd_warshall, gauss_seidel, gnan_double_loop,
                     skp_gnan_double_loop, ybus_loops)


def report(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} ({detail})")
    assert ok, f"criterion {n}: {title} ({detail})"


def graph0(batch):
    keep = batch.dst < batch.n_nodes
    return batch.src[keep], batch.dst[keep], batch.edge_x[keep]


def five_bus_grids():
    return [build_synthetic_grid(kind, 5, seed) for kind in ("radial", "meshed") for seed in (0, 1)]


def test_criterion_01_gradients():
    grid = build_synthetic_grid("radial", 5, 0)
    t0 = time.perf_counter()
    worst, where = 0.0, ""
    for kind in MODEL_KINDS:
        for seed in range(10):
            rng = np.random.default_rng(seed)
            m = build_model(ModelConfig(kind, max_nodes=5, seed=seed))
            errors = model_gradient_errors(m, smooth_random_batch(m, grid, rng), rng)
            name = max(errors, key=errors.get)
            if errors[name] > worst:
                worst, where = errors[name], f"{kind}/{name}/seed {seed}"
    elapsed = time.perf_counter() - t0
    report(1, "gradients match central differences", worst < 1e-5 and elapsed < 120,
           f"worst rel err {worst:.2e} at {where}, {elapsed:.1f}s")


def test_criterion_02_kronecker():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        n, d, d_out, c = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5)), \
            int(rng.integers(1, 4))
        x = rng.normal(size=(n, d))
        ops = [rng.normal(size=(n, n)) for _ in range(c)]
        ws = [rng.normal(size=(d, d_out)) for _ in range(c)]
        worst = max(worst, float(np.max(np.abs(vec(skp_layer(x, ops, ws).data) - kron_operator(ops, ws) @ vec(x)))))
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    k = np.kron(a, b)
    entries = all(k[2 * i + p, 2 * j + q] == a[i, j] * b[p, q] for i, j, p, q in np.ndindex(2, 2, 2, 2))
    report(2, "matrix and Kronecker forms agree", worst < 1e-10 and entries,
           f"max abs diff {worst:.1e} over 20 instances, 2x2 entries {'ok' if entries else 'wrong'}")


def test_criterion_03_completeness():
    grid = build_synthetic_grid("radial", 5, 0)
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        m = build_model(ModelConfig("gnan", seed=seed))
        b = random_batch(grid, rng, 1)
        _, h = gnan_double_loop(m.params.snapshot(), b.x, b.distances[0].hops, b.distances[0].shell_counts)
        C = m.contributions(b)[0]
        worst = max(worst, float(np.max(np.abs(C.sum(axis=(0, 1)) - h.sum(axis=(0, 1))))))
    report(3, "GNAN contributions sum to the graph embedding", worst < 1e-10,
           f"max abs diff {worst:.1e} over 10 parameterizations")


def test_criterion_04_decoupling():
    grid = build_synthetic_grid("meshed", 15, 1)
    max_change, max_row = 0.0, 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        m = build_model(ModelConfig("skp_gat", seed=seed))
        b = random_batch(grid, rng, 2)
        z0 = [m.scores(h, b.edge_x, b.n_rows).data.copy() for h in range(m.config.heads)]
        b.x[:] = rng.normal(scale=10, size=b.x.shape)
        for h in range(m.config.heads):
            max_change = max(max_change, float(np.max(np.abs(m.scores(h, b.edge_x, b.n_rows).data - z0[h]))))
        m.forward(b)
        for a in m.dense_operators(b):
            max_row = max(max_row, float(np.max(np.abs(a.sum(axis=1) - 1))))
    report(4, "SKP-GAT scores ignore node features", max_change == 0.0 and max_row <= 1e-12,
           f"max score change {max_change}, max |row sum - 1| {max_row:.1e}")


def test_criterion_05_diagnostics():
    lap = sym_normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    x = np.array([10.0, 12.0])
    de, de_small = dirichlet_energy(x, lap), dirichlet_energy(0.1 * x, lap)
    rq_gap = abs(rayleigh_quotient(x, lap) - rayleigh_quotient(0.1 * x, lap))
    rng = np.random.default_rng(5)
    rqs = []
    for _ in range(100):
        n = int(rng.integers(2, 12))
        a = np.triu((rng.random((n, n)) < 0.4).astype(float), 1)
        a = a + a.T
        rqs.append(rayleigh_quotient(rng.normal(size=(n, int(rng.integers(1, 4)))), sym_normalized_laplacian(a)))
    in_range = min(rqs) >= 0 and max(rqs) <= 2
    ok = de == 4.0 and abs(de_small - 0.04) <= 1e-12 and rq_gap <= 1e-12 and in_range
    report(5, "Dirichlet energy / Rayleigh quotient", ok,
           f"DE {de!r}, scaled DE {de_small!r}, RQ gap {rq_gap:.1e}, RQ range [{min(rqs):.3f}, {max(rqs):.3f}]")


def test_criterion_06_power_flow():
    rng = np.random.default_rng(6)
    worst_v, worst_mis = 0.0, 0.0
    for _ in range(10):
        grid = build_synthetic_grid(str(rng.choice(["radial", "meshed"])), int(rng.integers(2, 16)),
                                    int(rng.integers(10_000)))
        n = grid.n_buses
        p, q = rng.uniform(0, 0.05, n), rng.uniform(0, 0.02, n)
        sol = solve_power_flow(grid, p, q)
        assert sol.converged
        worst_v = max(worst_v, float(np.max(np.abs(sol.voltage - gauss_seidel(grid, p, q)))))
        s = power_injections(ybus_loops(grid), sol.voltage)
        pq = [i for i in range(n) if i != grid.slack]
        worst_mis = max(worst_mis, float(np.max(np.abs(s[pq] + (p + 1j * q)[pq]))) if pq else 0.0)
    flat = solve_power_flow(build_synthetic_grid("meshed", 15, 0), np.zeros(15), np.zeros(15))
    flat_ok = bool(np.all(flat.v_mag == 1.0) and np.all(flat.v_ang == 0.0))
    report(6, "Newton-Raphson vs Gauss-Seidel", worst_v < 1e-8 and worst_mis < 1e-8 and flat_ok,
           f"max |dV| {worst_v:.1e}, max mismatch {worst_mis:.1e}, flat profile {'exact' if flat_ok else 'wrong'}")


def test_criterion_07_double_loop():
    worst = 0.0
    for gi, grid in enumerate(five_bus_grids()):
        for seed in range(3):
            rng = np.random.default_rng(100 * gi + seed)
            b = random_batch(grid, rng, 1)
            dd = b.distances[0]
            g = build_model(ModelConfig("gnan", seed=seed))
            ref, _ = gnan_double_loop(g.params.snapshot(), b.x, dd.hops, dd.shell_counts)
            worst = max(worst, float(np.max(np.abs(g.forward(b).data - ref))))
            s = build_model(ModelConfig("skp_gnan", seed=seed))
            src, dst, ex = graph0(b)
            ref = skp_gnan_double_loop(s.params.snapshot(), b.x, dd.hops, dd.shell_counts, src, dst, ex)
            worst = max(worst, float(np.max(np.abs(s.forward(b).data - ref))))
    report(7, "GNAN / SKP-GNAN forward equals double loop", worst < 1e-10,
           f"max abs diff {worst:.1e} on {len(five_bus_grids())} five-bus grids x 3 seeds")


def test_criterion_08_topology():
    rng = np.random.default_rng(8)
    disconnected, hop_mismatch, topologies = 0, 0, 0
    for _ in range(1000):
        grid = build_synthetic_grid(str(rng.choice(["radial", "meshed"])), int(rng.integers(2, 21)),
                                    int(rng.integers(100_000)))
        scenario = generate_switching_scenario(grid, int(rng.integers(1, 200)), int(rng.integers(100_000)))
        last = None
        for g in scenario.topologies():
            if g is last:
                continue
            last = g
            topologies += 1
            edges = closed_edges(g)
            if not bfs_connected(g.n_buses, edges):
                disconnected += 1
            dd = distance_data(g)
            if not np.array_equal(dd.hops, floyd_warshall(g.n_buses, edges)):
                hop_mismatch += 1
    grid = build_synthetic_grid("radial", 6, 0)
    cut = grid.with_closed_set([b.id for b in grid.branches if 5 not in (b.from_bus, b.to_bus)])
    dd, adj = distance_data(cut), cut.adjacency() > 0
    s_ok = bool(np.all(dd.scaled[adj] == 0.5) and np.all(dd.scaled[:5, 5] == 0) and np.all(dd.scaled[5, :5] == 0))
    report(8, "switching replay and hop distances", disconnected == 0 and hop_mismatch == 0 and s_ok,
           f"{topologies} topologies from 1000 scenarios, {disconnected} disconnected, {hop_mismatch} hop mismatches, "
           f"s values {'ok' if s_ok else 'wrong'}")


@pytest.fixture(scope="module")
def smoke_dataset():
    return build_dataset(build_synthetic_grid("radial", 15, 0), 500, 0.9, 0)


@pytest.mark.slow
def test_criterion_09_learning(smoke_dataset):
    ds = smoke_dataset
    labels = np.concatenate([ds.samples[i].labels for i in ds.split.test])
    trivial, _ = rmse(np.tile([1.0, 0.0], (len(labels), 1)), labels)
    t0 = time.perf_counter()
    results = {}
    for kind in MODEL_KINDS:
        ckpt, _ = train(build_model(default_model_config(kind, ds, seed=1)), ds, ds.split, TrainConfig(seed=1))
        results[kind] = evaluate_rmse(ckpt, ds, ds.split.test)[0]
    elapsed = time.perf_counter() - t0
    ratios = {k: trivial / v for k, v in results.items()}
    ok = min(ratios.values()) >= 5 and results["gat"] < 5e-3 and elapsed < 600
    detail = ", ".join(f"{k} {v:.2e} ({ratios[k]:.0f}x)" for k, v in results.items())
    report(9, "learning beats the flat predictor", ok, f"trivial {trivial:.2e}; {detail}; {elapsed:.0f}s")


def test_criterion_10_determinism(tmp_path):
    def run(out):
        cfg = ExperimentConfig(grids=[GridSpec("radial", 8, 0), GridSpec("meshed", 8, 1)], n_timesteps=40,
                               rates=[0.2, 0.9], models=["gat", "gnan"], train=TrainConfig(max_epochs=4),
                               out_dir=str(out), master_seed=3, save_checkpoints=False)
        reports = run_sweep(cfg)
        return export_results(reports, out)["csv"].read_bytes(), reports

    a, reports = run(tmp_path / "a")
    b, _ = run(tmp_path / "b")
    ok = a == b and len(reports) == 8 and all(r.status == "ok" for r in reports)
    report(10, "sweep results.csv is byte-identical on re-run", ok,
           f"{len(reports)} legs, {len(a)} bytes, {'identical' if a == b else 'different'}")


def test_criterion_11_equivariance():
    grid = build_synthetic_grid("meshed", 15, 4)
    rng = np.random.default_rng(11)
    dd = distance_data(grid)
    worst = 0.0
    for kind in ("gat", "skp_gat", "gnan", "skp_gnan"):
        m = build_model(ModelConfig(kind, seed=2))
        for s in solved_samples(grid, 2, seed=3):
            s = randomize(s, rng)
            base = m.forward(make_batch([s], [dd])).data
            for _ in range(3):
                perm = rng.permutation(15)
                ps, pd = permute_sample(s, dd, perm)
                worst = max(worst, float(np.max(np.abs(m.forward(make_batch([ps], [pd])).data - base[perm]))))
    mlp = build_model(ModelConfig("mlp", max_nodes=15, seed=0))
    s = randomize(solved_samples(grid, 1)[0], rng)
    perm = np.roll(np.arange(15), 1)
    ps, pd = permute_sample(s, dd, perm)
    witness = float(np.max(np.abs(mlp.forward(make_batch([ps], [pd])).data - mlp.forward(make_batch([s], [dd])).data[perm])))
    report(11, "graph models are permutation-equivariant, MLP is not", worst < 1e-10 and witness > 1e-6,
           f"max equivariance error {worst:.1e}, MLP witness change {witness:.2e}")
