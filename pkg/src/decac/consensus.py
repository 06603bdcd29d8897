"""Gossip averaging over a fixed communication graph.

Agents exchange values with neighbours by repeatedly applying a doubly
stochastic mixing matrix built from the graph with Metropolis-Hastings
weights.  Mixing is always performed by repeated multiplication, never
by eigendecomposition, so the computed values match what a message
passing implementation would produce round by round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

ATOL_STOCHASTIC = 1e-12


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph on agents 0..n_agents-1.

    Edges are stored as sorted (i, j) pairs with i < j, deduplicated and
    ordered, so identical graphs always produce identical matrices.
    """

    n_agents: int
    edges: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError(f"need at least one agent, got {self.n_agents}")
        seen = set()
        for (i, j) in self.edges:
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ConfigError(f"edge ({i},{j}) out of range for n={self.n_agents}")
            if i == j:
                raise ConfigError(f"self-loop ({i},{j}) not allowed")
            if i > j:
                raise ConfigError(f"edge ({i},{j}) must be sorted i < j")
            if (i, j) in seen:
                raise ConfigError(f"duplicate edge ({i},{j})")
            seen.add((i, j))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=np.int64)
        for (i, j) in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbours(self, i: int) -> list[int]:
        out = []
        for (a, b) in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def is_connected(self) -> bool:
        if self.n_agents == 1:
            return True
        adj = [[] for _ in range(self.n_agents)]
        for (i, j) in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_agents


def _normalized_edges(pairs) -> tuple[tuple[int, int], ...]:
    uniq = {(min(i, j), max(i, j)) for (i, j) in pairs}
    return tuple(sorted(uniq))


def ring_graph(n: int) -> CommGraph:
    """Cycle over n agents (n=2 degenerates to a single edge)."""
    if n < 2:
        return CommGraph(n_agents=max(n, 1))
    pairs = [(i, (i + 1) % n) for i in range(n)]
    return CommGraph(n_agents=n, edges=_normalized_edges(pairs))


def star_graph(n: int) -> CommGraph:
    """Agent 0 is the hub, every other agent is a leaf."""
    if n < 2:
        return CommGraph(n_agents=max(n, 1))
    return CommGraph(n_agents=n, edges=_normalized_edges((0, i) for i in range(1, n)))


def complete_graph(n: int) -> CommGraph:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return CommGraph(n_agents=max(n, 1), edges=tuple(pairs))


def erdos_graph(n: int, p: float, rng: np.random.Generator, max_tries: int = 1000) -> CommGraph:
    """Erdos-Renyi graph, resampled until connected.

    Raises ConfigError when max_tries consecutive samples are disconnected,
    which signals that p is too small for the requested size.
    """
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"edge probability must lie in (0, 1], got {p}")
    if n == 1:
        return CommGraph(n_agents=1)
    for _ in range(max_tries):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = CommGraph(n_agents=n, edges=tuple(pairs))
        if g.is_connected():
            return g
    raise ConfigError(f"no connected graph after {max_tries} draws (n={n}, p={p})")


def graph_from_edges(n: int, pairs) -> CommGraph:
    g = CommGraph(n_agents=n, edges=_normalized_edges(pairs))
    if not g.is_connected():
        raise ConfigError("edge list does not form a connected graph")
    return g


def metropolis_weights(graph: CommGraph) -> np.ndarray:
    """Doubly stochastic mixing matrix from Metropolis-Hastings weights.

    A[i, j] = 1 / (1 + max(deg_i, deg_j)) on edges, diagonal takes the
    leftover mass.  Connectivity is required so that mixing reaches
    everyone.
    """
    if not graph.is_connected():
        raise ConfigError("communication graph must be connected")
    n = graph.n_agents
    deg = graph.degrees()
    A = np.zeros((n, n))
    for (i, j) in graph.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        A[i, j] = w
        A[j, i] = w
    for i in range(n):
        A[i, i] = 1.0 - (A[i].sum() - A[i, i])
    return A


def validate_mixing(A: np.ndarray, graph: CommGraph) -> float:
    """Check A against the graph and return the certified entry floor.

    The floor is the smallest entry over the diagonal and the graph's
    edges; every conforming matrix keeps it strictly positive.  Any
    violation (row/column sums, negativity, mass on a non-edge) raises
    ConfigError.
    """
    n = graph.n_agents
    A = np.asarray(A, dtype=float)
    if A.shape != (n, n):
        raise DimensionError(f"mixing matrix shape {A.shape} != ({n}, {n})")
    if not np.all(np.isfinite(A)):
        raise ConfigError("mixing matrix has non-finite entries")
    if np.any(A < -ATOL_STOCHASTIC):
        raise ConfigError("mixing matrix has negative entries")
    row_err = np.abs(A.sum(axis=1) - 1.0).max()
    col_err = np.abs(A.sum(axis=0) - 1.0).max()
    if row_err > ATOL_STOCHASTIC or col_err > ATOL_STOCHASTIC:
        raise ConfigError(
            f"matrix is not doubly stochastic (row err {row_err:.2e}, col err {col_err:.2e})"
        )
    if np.abs(A - A.T).max() > ATOL_STOCHASTIC:
        raise ConfigError("mixing matrix must be symmetric")
    edge_set = set(graph.edges)
    floor = np.inf
    for i in range(n):
        if A[i, i] <= 0.0:
            raise ConfigError(f"diagonal entry A[{i},{i}] = {A[i, i]} is not positive")
        floor = min(floor, A[i, i])
        for j in range(i + 1, n):
            if (i, j) in edge_set:
                if A[i, j] <= 0.0:
                    raise ConfigError(f"edge ({i},{j}) carries non-positive weight {A[i, j]}")
                floor = min(floor, A[i, j])
            elif abs(A[i, j]) > 0.0:
                raise ConfigError(f"non-edge ({i},{j}) carries weight {A[i, j]}")
    return float(floor)


def load_mixing_csv(path, graph: CommGraph) -> np.ndarray:
    """Read an explicit mixing matrix from CSV and validate it."""
    A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    validate_mixing(A, graph)
    return A


def gossip(A: np.ndarray, values: np.ndarray, rounds: int) -> np.ndarray:
    """Apply `rounds` mixing steps to per-agent rows of `values`.

    values has one row per agent (a 1-D vector is treated as one value
    per agent).  rounds=0 returns an unchanged copy.
    """
    if rounds < 0:
        raise ConfigError(f"gossip rounds must be >= 0, got {rounds}")
    V = np.array(values, dtype=float)
    if V.shape[0] != A.shape[0]:
        raise DimensionError(f"{V.shape[0]} value rows for {A.shape[0]} agents")
    for _ in range(rounds):
        V = A @ V
    return V


def disagreement(values: np.ndarray) -> float:
    """Largest Euclidean distance from any agent's row to the row mean."""
    V = np.atleast_2d(np.asarray(values, dtype=float))
    if V.shape[0] == 1 and np.ndim(values) == 1:
        V = np.asarray(values, dtype=float).reshape(-1, 1)
    center = V.mean(axis=0)
    return float(np.sqrt(((V - center) ** 2).sum(axis=1)).max())


def consensus_rate_bound(eta: float, n_agents: int) -> float:
    """Per-round contraction factor certified by the entry floor."""
    if not (0.0 < eta <= 1.0):
        raise DomainError(f"entry floor must lie in (0, 1], got {eta}")
    return 1.0 - eta ** (n_agents - 1)


def measure_decay_ratio(A: np.ndarray, rng: np.random.Generator,
                        rounds: int = 60, n_cols: int = 3) -> float:
    """Empirical asymptotic per-round decay of disagreement under A.

    Runs gossip on a random matrix and returns the median ratio of
    consecutive disagreements over the late rounds.  Returns 0.0 when
    consensus is reached to machine precision first (complete graphs
    mix in one round).
    """
    n = A.shape[0]
    V = rng.normal(size=(n, n_cols))
    ratios = []
    prev = disagreement(V)
    for _ in range(rounds):
        V = A @ V
        cur = disagreement(V)
        if prev < 1e-13 or cur < 1e-13:
            return 0.0
        ratios.append(cur / prev)
        prev = cur
    tail = ratios[-10:] if len(ratios) >= 10 else ratios
    return float(np.median(tail))
