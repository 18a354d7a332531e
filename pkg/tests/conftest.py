from __future__ import annotations

import contextlib

import numpy as np
import pytest

from gridmp.grid import DistanceData, build_synthetic_grid, distance_data
from gridmp.measurements import GraphSample, assemble_sample, assign_tiers, generate_profiles, select_measured_buses
from gridmp.models import make_batch
from gridmp.powerflow import solve_power_flow

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def solved_samples(grid, n: int, seed: int = 0, rate: float = 1.0):
    p, q = generate_profiles(grid.n_buses, n, seed)
    mask = select_measured_buses(grid, rate, seed)
    tiers = assign_tiers(grid)
    rng = np.random.default_rng(seed)
    return [assemble_sample(grid, solve_power_flow(grid, p[t], q[t]), mask, tiers, t, rng) for t in range(n)]


def randomize(sample: GraphSample, rng, low=-2.0, high=2.0) -> GraphSample:
    """Copy of ``sample`` with node/edge features and labels drawn uniformly."""
    return GraphSample(sample.topology_id, rng.uniform(low, high, sample.node_features.shape),
                       sample.edge_index.copy(), sample.edge_branch.copy(),
                       rng.uniform(low, high, sample.edge_features.shape), sample.measured_mask.copy(),
                       rng.uniform(low, high, sample.labels.shape), sample.timestep_index)


def random_batch(grid, rng, n_graphs: int = 2):
    base = solved_samples(grid, n_graphs, seed=int(rng.integers(1 << 30)))
    samples = [randomize(s, rng) for s in base]
    dd = distance_data(grid)
    return make_batch(samples, [dd] * n_graphs)


def permute_sample(sample: GraphSample, dd: DistanceData, perm: np.ndarray):
    """Relabel nodes so that new node ``a`` is old node ``perm[a]``."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    s = GraphSample(sample.topology_id, sample.node_features[perm], inv[sample.edge_index], sample.edge_branch,
                    sample.edge_features, sample.measured_mask[perm], sample.labels[perm], sample.timestep_index)
    d = DistanceData(dd.hops[np.ix_(perm, perm)], dd.scaled[np.ix_(perm, perm)],
                     dd.shell_counts[np.ix_(perm, perm)], dd.topology_id)
    return s, d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid5():
    return build_synthetic_grid("radial", 5, 0)


@pytest.fixture(scope="session")
def grid15():
    return build_synthetic_grid("radial", 15, 3)


def model_loss_fn(model, batch):
    from gridmp.models import loss
    return lambda: loss(model.forward(batch), batch.targets, weights=batch.loss_weights)


GRAD_FLOOR = 1e-4   # gradient norms below this are compared absolutely
KINK_MARGIN = 2e-5  # a 1e-6 FD step moves pre-activations by ~eps*|input| < 1e-5


@contextlib.contextmanager
def kink_monitor():
    """Record the smallest |pre-activation| fed to any leaky-relu."""
    from gridmp import autodiff as ad
    seen = [np.inf]
    original = ad.leaky_relu

    def watched(x, slope=0.2):
        nz = np.abs(x.data[x.data != 0])  # exact zeros only arise on masked branches
        if nz.size:
            seen[0] = min(seen[0], float(nz.min()))
        return original(x, slope)

    ad.leaky_relu = watched
    try:
        yield seen
    finally:
        ad.leaky_relu = original


def smooth_random_batch(model, grid, rng, n_graphs: int = 2, attempts: int = 50):
    """A random batch whose forward pass keeps every leaky-relu input away from 0."""
    for _ in range(attempts):
        batch = random_batch(grid, rng, n_graphs)
        with kink_monitor() as seen:
            model.forward(batch)
        if seen[0] > KINK_MARGIN:
            return batch
    raise RuntimeError("could not draw a batch away from activation kinks")


def model_gradient_errors(model, batch, rng, max_entries: int = 8) -> dict:
    """Per-tensor relative error of tape gradients vs central differences.

    Each tensor is checked on up to ``max_entries`` random entries plus one
    random direction covering all of its entries at once.
    """
    from gridmp import autodiff as ad
    from oracles import central_difference, directional_difference, rel_err

    build = model_loss_fn(model, batch)
    f = lambda: float(build().data)  # noqa: E731
    model.params.zero_grad()
    ad.backward(build())
    errors = {}
    for name, t in model.params:
        assert t.grad is not None, f"{model.kind}: {name} received no gradient"
        g = t.grad.copy()
        picks = rng.choice(t.size, size=min(max_entries, t.size), replace=False)
        idx = [np.unravel_index(int(i), t.shape) for i in picks]
        fd = np.array([central_difference(f, t.data, i) for i in idx])
        v = rng.standard_normal(t.shape)
        dd = directional_difference(f, t.data, v)
        errors[name] = max(rel_err([g[i] for i in idx], fd, GRAD_FLOOR), rel_err(np.sum(g * v), dd, GRAD_FLOOR))
    return errors
