import math
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gridmp.grid import (Branch, Bus, Grid, GridError, InvalidSizeError, all_pairs_hops, build_synthetic_grid,
                         distance_data, generate_switching_scenario, list_redundant_lines, load_grid, save_grid)

from oracles import bfs_connected, brute_force_redundant, closed_edges, floyd_warshall, has_cycle


def make_grid(n, edges, closed=None):
    buses = [Bus(0, 1.0, "slack")] + [Bus(i) for i in range(1, n)]
    closed = closed or [True] * len(edges)
    branches = [Branch(k, a, b, 0.01, 0.05, c) for k, ((a, b), c) in enumerate(zip(edges, closed))]
    return Grid(buses, branches)


def ring(n):
    return make_grid(n, [(i, (i + 1) % n) for i in range(n)])


grids = st.builds(build_synthetic_grid, st.sampled_from(["radial", "meshed"]), st.integers(2, 30),
                  st.integers(0, 10_000))


def test_smallest_radial():
    g = build_synthetic_grid("radial", 2, 5)
    assert len(g.branches) == 2
    assert [b.role for b in g.buses].count("slack") == 1
    # the added line runs parallel to the only tree branch
    assert list_redundant_lines(g) == {0, 1}


def test_meshed_15_seed_7_counts():
    g = build_synthetic_grid("meshed", 15, 7)
    assert len(g.branches) == 14 + 3
    assert g.is_connected()


def test_meshed_99_has_cycle():
    g = build_synthetic_grid("meshed", 99, 1)
    assert has_cycle(g.n_buses, closed_edges(g))


def test_invalid_size():
    with pytest.raises(InvalidSizeError):
        build_synthetic_grid("radial", 1, 0)


@pytest.mark.parametrize("kind,frac", [("radial", 0.1), ("meshed", 0.15)])
def test_extra_line_count(kind, frac):
    for n in (5, 15, 59):
        g = build_synthetic_grid(kind, n, 2)
        assert len(g.branches) == n - 1 + math.ceil(frac * n)


def test_radial_tree_part_is_a_tree():
    g = build_synthetic_grid("radial", 30, 4)
    tree = [(b.from_bus, b.to_bus) for b in g.branches[: g.n_buses - 1]]
    assert bfs_connected(g.n_buses, tree) and not has_cycle(g.n_buses, tree)


def test_validation_errors():
    with pytest.raises(GridError):
        make_grid(3, [(0, 1)]).validate()  # bus 2 unsupplied
    with pytest.raises(GridError):
        make_grid(2, [(0, 0), (0, 1)]).validate()
    bad = Grid([Bus(0, 1.0, "slack"), Bus(1)], [Branch(0, 0, 1, 0.1, 0.0)])
    with pytest.raises(GridError):
        bad.validate()
    two_slack = Grid([Bus(0, 1.0, "slack"), Bus(1, 1.0, "slack")], [Branch(0, 0, 1, 0.1, 0.1)])
    with pytest.raises(GridError):
        two_slack.validate()


def test_ring_all_redundant():
    assert list_redundant_lines(ring(3)) == {0, 1, 2}


def test_tree_has_no_redundancy():
    g = make_grid(5, [(0, 1), (1, 2), (1, 3), (3, 4)])
    assert list_redundant_lines(g) == set()


def test_redundancy_rejects_disconnected():
    with pytest.raises(GridError):
        list_redundant_lines(make_grid(3, [(0, 1), (1, 2)], [True, False]))


def test_redundancy_15_bus_matches_brute_force(grid15):
    assert list_redundant_lines(grid15) == brute_force_redundant(grid15)
    added = {b.id for b in grid15.branches[grid15.n_buses - 1:]}
    assert added <= list_redundant_lines(grid15)


@settings(max_examples=60, deadline=None)
@given(grids)
def test_redundancy_property(g):
    assert list_redundant_lines(g) == brute_force_redundant(g)


def test_path_hops():
    h = all_pairs_hops(make_grid(3, [(0, 1), (1, 2)]))
    assert h[0, 2] == 2
    assert_array_equal(np.diag(h), 0)


def test_hops_match_floyd_warshall(grid15):
    assert_array_equal(all_pairs_hops(grid15), floyd_warshall(15, closed_edges(grid15)))


@settings(max_examples=40, deadline=None)
@given(grids, st.integers(0, 10_000))
def test_hops_property_with_open_lines(g, seed):
    # open a random subset of branches, possibly disconnecting buses
    rng = np.random.default_rng(seed)
    g = g.with_closed_set([b.id for b in g.branches if rng.random() < 0.7])
    hops = all_pairs_hops(g)
    assert_array_equal(hops, floyd_warshall(g.n_buses, closed_edges(g)))
    assert_array_equal(hops, hops.T)


def test_distance_values():
    g = make_grid(4, [(0, 1), (1, 2), (0, 3)], [True, True, False])
    dd = distance_data(g)
    assert dd.scaled[0, 1] == 0.5
    assert dd.scaled[0, 3] == 0.0
    assert np.isinf(dd.hops[0, 3])
    assert_array_equal(np.diag(dd.scaled), 1.0)


def test_star_shell_counts():
    leaves = 6
    dd = distance_data(make_grid(leaves + 1, [(0, i) for i in range(1, leaves + 1)]))
    for leaf in range(1, leaves + 1):
        assert dd.shell_counts[0, leaf] == sum(1 for j in range(1, leaves + 1) if dd.hops[0, j] == 1)
    assert dd.shell_counts[1, 2] == leaves - 1


@settings(max_examples=40, deadline=None)
@given(grids)
def test_distance_invariants(g):
    dd = distance_data(g)
    reach = np.isfinite(dd.hops)
    assert_allclose(dd.scaled[reach], 1.0 / (1.0 + dd.hops[reach]), rtol=0, atol=0)
    assert np.all(dd.scaled[~reach] == 0)
    assert np.all(dd.shell_counts[reach] >= 1)
    for i in range(g.n_buses):
        values = np.unique(dd.hops[i])
        assert sum(int(np.sum(dd.hops[i] == v)) for v in values) == g.n_buses
        for j in range(g.n_buses):
            assert dd.shell_counts[i, j] == np.sum(dd.hops[i] == dd.hops[i, j])
    # scaled distance strictly decreases with hop count
    order = np.argsort(dd.hops[0])
    assert np.all(np.diff(dd.scaled[0][order]) <= 0)


def test_grid_round_trip(tmp_path, grid15):
    g = grid15.with_switch(grid15.branches[-1].id, False)
    save_grid(g, tmp_path / "g.json")
    assert load_grid(tmp_path / "g.json") == g


def test_switching_bus_count_bound():
    g = build_synthetic_grid("meshed", 50, 3)
    incident = {b.from_bus for b in g.branches} | {b.to_bus for b in g.branches}
    assert len(incident) == 50
    for seed in range(30):
        sc = generate_switching_scenario(g, 200, seed)
        assert len({e.branch_id for e in sc.events}) <= math.ceil(0.2 * 50)


def test_switching_empty_for_tree(caplog):
    g = make_grid(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    with caplog.at_level(logging.WARNING):
        sc = generate_switching_scenario(g, 20, 0)
    assert sc.events == () and sc.status == "no-redundant-lines"
    assert "no redundant lines" in caplog.text


def test_ring_replay_stays_connected():
    g = ring(3)
    sc = generate_switching_scenario(g, 100, 4)
    redundant = list_redundant_lines(g)
    assert all(e.branch_id in redundant for e in sc.events)
    for topo in sc.topologies():
        assert bfs_connected(3, closed_edges(topo))


def test_events_alternate_and_are_ordered():
    g = build_synthetic_grid("meshed", 40, 1)
    sc = generate_switching_scenario(g, 300, 9)
    ts = [e.timestep for e in sc.events]
    assert ts == sorted(ts)
    state = {b.id: b.closed for b in g.branches}
    for e in sc.events:
        assert e.closed != state[e.branch_id]
        state[e.branch_id] = e.closed
    assert len(list(sc.topologies())) == 300


def test_scenario_deterministic():
    g = build_synthetic_grid("meshed", 30, 0)
    assert generate_switching_scenario(g, 100, 5) == generate_switching_scenario(g, 100, 5)
