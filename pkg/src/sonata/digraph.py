"""Time-varying directed communication graphs.

Vertices are the agents, labeled ``1..I``.  An edge ``(j, i)`` means agent
``j`` transmits to agent ``i``.  Self-loops are never stored: every agent
implicitly hears itself, so neighborhood queries always include the node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Digraph:
    """A directed graph on agents ``1..vertex_count`` with implicit self-loops."""

    vertex_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ValueError("vertex_count must be positive")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (1 <= j <= self.vertex_count and 1 <= i <= self.vertex_count):
                raise ValueError(f"edge ({j},{i}) out of range 1..{self.vertex_count}")
            if j == i:
                raise ValueError("self-loops are implicit and must not be stored")
        object.__setattr__(self, "edges", edges)

    def _check_vertex(self, i: int):
        if not (1 <= i <= self.vertex_count):
            raise ValueError(f"vertex {i} out of range 1..{self.vertex_count}")

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)


def in_neighbors(g: Digraph, i: int) -> set:
    """Agents whose transmissions reach ``i``, including ``i`` itself."""
    g._check_vertex(i)
    return {j for j, k in g.edges if k == i} | {i}


def out_neighbors(g: Digraph, i: int) -> set:
    """Agents reached by ``i``'s broadcast, including ``i`` itself."""
    g._check_vertex(i)
    return {k for j, k in g.edges if j == i} | {i}


def out_degree(g: Digraph, i: int) -> int:
    """Size of the out-neighborhood of ``i`` (always >= 1)."""
    return len(out_neighbors(g, i))


def support_matrix(g: Digraph) -> np.ndarray:
    """Boolean receive pattern: entry ``[i-1, j-1]`` is True iff ``j`` reaches ``i``.

    The diagonal is True (implicit self-loops).  This is exactly the sparsity
    pattern a weight matrix matching the graph must have.
    """
    m = np.eye(g.vertex_count, dtype=bool)
    for j, i in g.edges:
        m[i - 1, j - 1] = True
    return m


def union_graph(graphs: Iterable[Digraph]) -> Digraph:
    """Union of the edge sets of graphs on the same vertex set."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("need at least one graph")
    n = graphs[0].vertex_count
    if any(g.vertex_count != n for g in graphs):
        raise ValueError("graphs must share the vertex set")
    edges = frozenset().union(*(g.edges for g in graphs))
    return Digraph(n, edges)


def is_strongly_connected(g: Digraph) -> bool:
    """Check strong connectivity by breadth-first reachability from every vertex."""
    n = g.vertex_count
    succ = {v: set() for v in range(1, n + 1)}
    for j, i in g.edges:
        succ[j].add(i)
    for start in range(1, n + 1):
        seen = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for w in succ[v]:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        if len(seen) != n:
            return False
    return True


@dataclass(frozen=True)
class DigraphSequence:
    """A deterministic time-indexed sequence of digraphs.

    ``generator`` maps an iteration index to a :class:`Digraph`; it must be a
    pure function so that a sequence can be replayed exactly.  ``horizon``
    optionally bounds the usable indices.
    """

    vertex_count: int
    generator: Callable[[int], Digraph]
    horizon: int | None = None

    def __getitem__(self, n: int) -> Digraph:
        if n < 0:
            raise ValueError("iteration index must be nonnegative")
        if self.horizon is not None and n >= self.horizon:
            raise ValueError(f"index {n} beyond horizon {self.horizon}")
        g = self.generator(n)
        if g.vertex_count != self.vertex_count:
            raise ValueError("generator produced a graph with the wrong vertex count")
        return g


def static_sequence(g: Digraph) -> DigraphSequence:
    return DigraphSequence(g.vertex_count, lambda n: g)


def sequence_from_list(graphs: Sequence[Digraph], cycle: bool = False) -> DigraphSequence:
    """Sequence replaying ``graphs``; with ``cycle=True`` it repeats periodically."""
    graphs = list(graphs)
    if cycle:
        return DigraphSequence(graphs[0].vertex_count, lambda n: graphs[n % len(graphs)])
    return DigraphSequence(graphs[0].vertex_count, lambda n: graphs[n], horizon=len(graphs))


def check_b_connectivity(seq: DigraphSequence, window: int, windows: int) -> bool:
    """True iff each of ``windows`` consecutive length-``window`` slot unions is strongly connected."""
    if window < 1:
        raise ValueError("window length must be a positive integer")
    if windows < 1:
        raise ValueError("window count must be a positive integer")
    for k in range(windows):
        union = union_graph(seq[t] for t in range(k * window, (k + 1) * window))
        if not is_strongly_connected(union):
            return False
    return True


# -- generators --------------------------------------------------------------


def rotating_cycle_digraph(agent_count: int, slot: int, seed: int, extra_edges: int = 1) -> Digraph:
    """One slot of the simulated broadcast topology.

    Every agent gets one out-edge along a cycle whose vertex ordering is
    re-permuted each slot, plus ``extra_edges`` out-edges to uniformly chosen
    other agents.  Deterministic in ``(agent_count, slot, seed)``.
    """
    if agent_count < 3:
        raise ValueError("need at least 3 agents for the cycle topology")
    if extra_edges < 0 or extra_edges > agent_count - 2:
        raise ValueError("extra_edges must lie in [0, agent_count - 2]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(slot)]))
    order = rng.permutation(agent_count)
    edges = set()
    for k in range(agent_count):
        edges.add((int(order[k]) + 1, int(order[(k + 1) % agent_count]) + 1))
    for a in range(agent_count):
        targets = rng.choice(agent_count - 1, size=extra_edges, replace=False)
        for t in targets:
            t = int(t) + 1 if t >= a else int(t)
            edges.add((a + 1, t + 1))
    return Digraph(agent_count, frozenset(edges))


def rotating_cycle_sequence(agent_count: int, seed: int, extra_edges: int = 1) -> DigraphSequence:
    return DigraphSequence(
        agent_count, lambda n: rotating_cycle_digraph(agent_count, n, seed, extra_edges)
    )


def ring_digraph(agent_count: int) -> Digraph:
    """Static directed cycle 1 -> 2 -> ... -> I -> 1."""
    edges = {(k, k % agent_count + 1) for k in range(1, agent_count + 1)}
    return Digraph(agent_count, frozenset(edges))


def complete_digraph(agent_count: int) -> Digraph:
    edges = {
        (j, i)
        for j in range(1, agent_count + 1)
        for i in range(1, agent_count + 1)
        if i != j
    }
    return Digraph(agent_count, frozenset(edges))


def symmetric_ring_random_digraph(
    agent_count: int, slot: int, seed: int, extra_edges: int = 1
) -> Digraph:
    """Connected undirected (symmetric) graph: shuffled ring plus random chords."""
    if agent_count < 3:
        raise ValueError("need at least 3 agents")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(slot), 0x5D]))
    order = rng.permutation(agent_count)
    edges = set()
    for k in range(agent_count):
        a, b = int(order[k]) + 1, int(order[(k + 1) % agent_count]) + 1
        edges.add((a, b))
        edges.add((b, a))
    for _ in range(extra_edges):
        a, b = rng.choice(agent_count, size=2, replace=False)
        a, b = int(a) + 1, int(b) + 1
        edges.add((a, b))
        edges.add((b, a))
    return Digraph(agent_count, frozenset(edges))


def symmetric_ring_random_sequence(agent_count: int, seed: int, extra_edges: int = 1) -> DigraphSequence:
    return DigraphSequence(
        agent_count,
        lambda n: symmetric_ring_random_digraph(agent_count, n, seed, extra_edges),
    )


# -- replay files ------------------------------------------------------------
#
# Line-oriented text format, one line per slot:
#
#     vertices: 4
#     0: 1>2, 2>3, 3>1
#     1: 2>1
#
# Slot lines must be consecutive from 0.  An empty edge list is a bare "n:".


def sequence_to_lines(seq: DigraphSequence, slots: int) -> list:
    lines = [f"vertices: {seq.vertex_count}"]
    for n in range(slots):
        g = seq[n]
        parts = ", ".join(f"{j}>{i}" for j, i in sorted(g.edges))
        lines.append(f"{n}: {parts}" if parts else f"{n}:")
    return lines


def save_sequence(seq: DigraphSequence, path, slots: int):
    with open(path, "w") as fh:
        fh.write("\n".join(sequence_to_lines(seq, slots)) + "\n")


def lines_to_sequence(lines: Iterable[str]) -> DigraphSequence:
    lines = [ln.strip() for ln in lines if ln.strip()]
    if not lines or not lines[0].startswith("vertices:"):
        raise ValueError("replay text must start with a 'vertices: I' line")
    count = int(lines[0].split(":", 1)[1])
    graphs = []
    for expected, line in enumerate(lines[1:]):
        head, _, rest = line.partition(":")
        if int(head) != expected:
            raise ValueError(f"slot lines must be consecutive; got {head}, expected {expected}")
        edges = set()
        for token in rest.split(","):
            token = token.strip()
            if not token:
                continue
            j, _, i = token.partition(">")
            edges.add((int(j), int(i)))
        graphs.append(Digraph(count, frozenset(edges)))
    if not graphs:
        raise ValueError("replay text contains no slots")
    return sequence_from_list(graphs)


def load_sequence(path) -> DigraphSequence:
    with open(path) as fh:
        return lines_to_sequence(fh.readlines())
