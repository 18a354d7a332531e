"""Synthetic distribution grids, redundancy, switching scenarios and hop distances."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

log = logging.getLogger(__name__)

UNREACHABLE = np.inf


class GridError(ValueError):
    pass


class InvalidSizeError(GridError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    vn_pu: float = 1.0
    role: str = "PQ"  # "slack" | "PQ"


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    closed: bool = True
    transformer: bool = False
    shift_rad: float = 0.0

    @property
    def z(self) -> complex:
        return complex(self.r_pu, self.x_pu)


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack: int = 0
    level: str = "LV"  # "LV" | "MV", selects the measurement noise tiers
    name: str = "grid"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def closed_branches(self) -> list[Branch]:
        return [b for b in self.branches if b.closed]

    def branch(self, branch_id: int) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise KeyError(branch_id)

    def with_switch(self, branch_id: int, closed: bool) -> "Grid":
        branches = tuple(replace(b, closed=closed) if b.id == branch_id else b for b in self.branches)
        return replace(self, branches=branches)

    def with_closed_set(self, closed_ids) -> "Grid":
        closed_ids = set(closed_ids)
        branches = tuple(replace(b, closed=b.id in closed_ids) for b in self.branches)
        return replace(self, branches=branches)

    def topology_id(self) -> str:
        """Stable short hash of the set of closed branch ids."""
        key = ",".join(str(b.id) for b in sorted(self.closed_branches(), key=lambda b: b.id))
        return hashlib.sha1(f"{self.n_buses}|{key}".encode()).hexdigest()[:12]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        closed = self.closed_branches()
        return (np.array([b.from_bus for b in closed], dtype=np.int64),
                np.array([b.to_bus for b in closed], dtype=np.int64))

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency of the closed-branch graph (parallel branches collapse)."""
        a = np.zeros((self.n_buses, self.n_buses))
        f, t = self.edge_arrays()
        a[f, t] = 1.0
        a[t, f] = 1.0
        return a

    def is_connected(self) -> bool:
        return _connected(self.n_buses, *self.edge_arrays())

    def validate(self) -> None:
        ids = [b.id for b in self.buses]
        if ids != list(range(len(ids))):
            raise GridError("bus ids must be 0..N-1 in order")
        slacks = [b.id for b in self.buses if b.role == "slack"]
        if len(slacks) != 1 or slacks[0] != self.slack:
            raise GridError(f"exactly one slack bus required (declared {self.slack}, flagged {slacks})")
        seen = set()
        for br in self.branches:
            if br.id in seen:
                raise GridError(f"duplicate branch id {br.id}")
            seen.add(br.id)
            if br.from_bus == br.to_bus:
                raise GridError(f"branch {br.id} is a self-branch")
            if not (0 <= br.from_bus < self.n_buses and 0 <= br.to_bus < self.n_buses):
                raise GridError(f"branch {br.id} has an invalid endpoint")
            if br.r_pu < 0 or br.x_pu == 0:
                raise GridError(f"branch {br.id}: need r >= 0 and x != 0")
        if not self.is_connected():
            raise GridError("closed-branch graph is disconnected")

    # -- structured-text round trip ------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "level": self.level,
            "slack": self.slack,
            "buses": [{"id": b.id, "vn_pu": b.vn_pu, "role": b.role} for b in self.buses],
            "branches": [
                {"id": br.id, "from": br.from_bus, "to": br.to_bus, "r_pu": br.r_pu, "x_pu": br.x_pu,
                 "closed": br.closed, "transformer": br.transformer, "shift_rad": br.shift_rad}
                for br in self.branches
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        buses = [Bus(int(b["id"]), float(b["vn_pu"]), str(b["role"])) for b in d["buses"]]
        branches = [
            Branch(int(b["id"]), int(b["from"]), int(b["to"]), float(b["r_pu"]), float(b["x_pu"]),
                   bool(b["closed"]), bool(b["transformer"]), float(b["shift_rad"]))
            for b in d["branches"]
        ]
        return cls(tuple(buses), tuple(branches), int(d["slack"]), d.get("level", "LV"), d.get("name", "grid"))


def save_grid(grid: Grid, path) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=2))


def load_grid(path) -> Grid:
    return Grid.from_dict(json.loads(Path(path).read_text()))


def _connected(n: int, f: np.ndarray, t: np.ndarray) -> bool:
    if n <= 1:
        return True
    g = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    k, _ = connected_components(g, directed=False)
    return k == 1


# ---------------------------------------------------------------- construction

def _impedance(rng: np.random.Generator) -> tuple[float, float]:
    r = float(np.exp(rng.uniform(np.log(0.01), np.log(0.1))))
    x = float(np.exp(rng.uniform(np.log(0.02), np.log(0.2))))
    return r, x


def build_synthetic_grid(kind: str, n_buses: int, seed: int) -> Grid:
    """Random-attachment tree plus extra closed lines.

    ``radial`` grids are low-voltage feeders behind a transformer at the
    slack with ``ceil(0.1 N)`` added lines; ``meshed`` grids are
    medium-voltage trees with ``ceil(0.15 N)`` tie lines.
    """
    if n_buses < 2:
        raise InvalidSizeError(f"n_buses must be >= 2, got {n_buses}")
    if kind not in ("radial", "meshed"):
        raise ValueError(f"unknown grid kind {kind!r}")
    rng = np.random.default_rng(seed)
    radial = kind == "radial"
    buses = [Bus(0, 1.0, "slack")] + [Bus(i, 1.0, "PQ") for i in range(1, n_buses)]
    branches: list[Branch] = []
    neighbours = {i: set() for i in range(n_buses)}

    def link(a: int, b: int, transformer: bool = False) -> None:
        r, x = _impedance(rng)
        branches.append(Branch(len(branches), a, b, r, x, True, transformer, 0.0))
        neighbours[a].add(b)
        neighbours[b].add(a)

    for i in range(1, n_buses):
        if radial:
            # the slack feeds the LV busbar (bus 1) through a single transformer
            link(0 if i == 1 else int(rng.integers(1, i)), i, transformer=(i == 1))
        else:
            link(int(rng.integers(0, i)), i)

    n_extra = math.ceil((0.1 if radial else 0.15) * n_buses)
    lo = 1 if radial and n_buses > 2 else 0
    for _ in range(n_extra):
        candidates = [(a, b) for a in range(lo, n_buses) for b in range(a + 1, n_buses) if b not in neighbours[a]]
        if candidates:
            a, b = candidates[int(rng.integers(len(candidates)))]
        else:
            # complete graph: the only way to add redundancy is a parallel line
            existing = [(br.from_bus, br.to_bus) for br in branches]
            a, b = existing[int(rng.integers(len(existing)))]
        link(a, b)

    grid = Grid(tuple(buses), tuple(branches), 0, "LV" if radial else "MV", f"{kind}-{n_buses}-s{seed}")
    grid.validate()
    return grid


# ------------------------------------------------------------------ redundancy

def _bridges(n: int, edges: list[tuple[int, int, int]]) -> set[int]:
    """Branch ids whose removal disconnects the graph (parallel-edge aware)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for eid, a, b in edges:
        adj[a].append((b, eid))
        adj[b].append((a, eid))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for w, eid in it:
                if eid == parent_edge:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, eid, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if advanced:
                continue
            stack.pop()
            if stack:
                u = stack[-1][0]
                low[u] = min(low[u], low[v])
                if low[v] > disc[u]:
                    bridges.add(parent_edge)
    return bridges


def list_redundant_lines(grid: Grid) -> set[int]:
    if not grid.is_connected():
        raise GridError("cannot list redundant lines of a disconnected grid")
    closed = grid.closed_branches()
    bridges = _bridges(grid.n_buses, [(b.id, b.from_bus, b.to_bus) for b in closed])
    return {b.id for b in closed} - bridges


# ------------------------------------------------------------------- switching

@dataclass(frozen=True)
class SwitchEvent:
    timestep: int
    branch_id: int
    closed: bool


@dataclass(frozen=True)
class SwitchingScenario:
    base: Grid
    n_timesteps: int
    events: tuple[SwitchEvent, ...] = ()
    status: str = "ok"  # "ok" | "no-redundant-lines"

    def topologies(self):
        """Yield the active grid for every timestep ``0..n_timesteps-1``."""
        grid = self.base
        pending = list(self.events)
        k = 0
        for t in range(self.n_timesteps):
            while k < len(pending) and pending[k].timestep == t:
                grid = grid.with_switch(pending[k].branch_id, pending[k].closed)
                k += 1
            yield grid


def generate_switching_scenario(grid: Grid, n_timesteps: int, seed: int) -> SwitchingScenario:
    """Toggle redundant lines at random times without ever cutting supply.

    A toggle that would open a line whose removal disconnects the current
    topology is dropped, so line states always alternate and every
    intermediate topology stays connected.
    """
    if n_timesteps < 1:
        raise ValueError("n_timesteps must be >= 1")
    redundant = list_redundant_lines(grid)
    if not redundant:
        log.warning("grid %s has no redundant lines; scenario is empty", grid.name)
        return SwitchingScenario(grid, n_timesteps, (), "no-redundant-lines")
    rng = np.random.default_rng(seed)
    n = grid.n_buses
    n_selected = int(rng.integers(1, math.ceil(0.2 * n) + 1))
    selected = rng.choice(n, size=n_selected, replace=False)

    incident: dict[int, list[int]] = {i: [] for i in range(n)}
    for b in grid.closed_branches():
        if b.id in redundant:
            incident[b.from_bus].append(b.id)
            incident[b.to_bus].append(b.id)

    toggles: list[tuple[int, int]] = []
    chosen: set[int] = set()
    for bus in selected:
        lines = [b for b in incident[int(bus)] if b not in chosen]
        if not lines:
            continue
        line = lines[int(rng.integers(len(lines)))]
        chosen.add(line)
        count = min(int(rng.integers(1, 11)), n_timesteps)
        for t in sorted(rng.choice(n_timesteps, size=count, replace=False)):
            toggles.append((int(t), line))
    toggles.sort()

    state = {b.id: b.closed for b in grid.branches}
    events = []
    current = grid
    for t, line in toggles:
        target = not state[line]
        if not target:
            trial = current.with_switch(line, False)
            if not trial.is_connected():
                continue
            current = trial
        else:
            current = current.with_switch(line, True)
        state[line] = target
        events.append(SwitchEvent(t, line, target))
    return SwitchingScenario(grid, n_timesteps, tuple(events), "ok")


# ------------------------------------------------------------------- distances

@dataclass(frozen=True)
class DistanceData:
    hops: np.ndarray          # float, UNREACHABLE (inf) marks disconnected pairs
    scaled: np.ndarray        # 1 / (1 + hops), 0 when unreachable
    shell_counts: np.ndarray  # number of nodes k with hops[i, k] == hops[i, j]
    topology_id: str = field(default="")

    @property
    def n(self) -> int:
        return self.hops.shape[0]


def all_pairs_hops(grid: Grid) -> np.ndarray:
    n = grid.n_buses
    f, t = grid.edge_arrays()
    g = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n)).tocsr()
    return shortest_path(g, method="D", directed=False, unweighted=True)


def distance_data(grid: Grid) -> DistanceData:
    hops = all_pairs_hops(grid)
    with np.errstate(divide="ignore"):
        scaled = np.where(np.isfinite(hops), 1.0 / (1.0 + hops), 0.0)
    shell = np.empty(hops.shape, dtype=np.int64)
    for i in range(hops.shape[0]):
        values, inverse, counts = np.unique(hops[i], return_inverse=True, return_counts=True)
        shell[i] = counts[inverse]
    return DistanceData(hops, scaled, shell, grid.topology_id())


class DistanceCache:
    """Per-topology memo of :func:`distance_data`."""

    def __init__(self):
        self._store: dict[str, DistanceData] = {}

    def get(self, grid: Grid) -> DistanceData:
        key = grid.topology_id()
        if key not in self._store:
            self._store[key] = distance_data(grid)
        return self._store[key]

    def __len__(self) -> int:
        return len(self._store)
