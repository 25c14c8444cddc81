"""Column-stochastic weight matrices and the broadcast weights they induce.

A weight matrix ``A`` matching a digraph must have positive diagonal, positive
entries exactly on the receive pattern of the graph, and unit column sums, so
that mixing conserves the total mass of weighted quantities.  The broadcast
protocol propagates a positive weight vector ``phi`` through ``A`` and uses it
to form the row-stochastic combination matrix ``W`` actually applied to the
agents' iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .digraph import Digraph, out_degree, support_matrix

COLUMN_SUM_TOL = 1e-12
PHI_SUM_RTOL = 1e-9
PHI_UNDERFLOW = 1e-300


class WeightUnderflowError(RuntimeError):
    """A consensus weight collapsed below the representable range."""


@dataclass(frozen=True)
class MixingMatrix:
    """Column-stochastic weights ``A`` with realized positivity floor ``kappa``."""

    entries: np.ndarray
    kappa: float

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ConsensusWeights:
    """Positive broadcast weights ``phi``; their sum is conserved at the agent count."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 1:
            raise ValueError("phi must be a vector")
        if np.any(phi <= 0.0):
            raise ValueError("phi entries must be positive")
        n = phi.size
        if abs(phi.sum() - n) > PHI_SUM_RTOL * n:
            raise ValueError("phi must sum to the agent count")
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class RowMixingMatrix:
    """Row-stochastic combination weights induced by ``A`` and ``phi``."""

    entries: np.ndarray


def _realized_kappa(entries: np.ndarray, pattern: np.ndarray) -> float:
    return float(entries[pattern].min())


def push_sum_weights(g: Digraph) -> MixingMatrix:
    """Even broadcast split: ``a_ij = 1/d_j`` on the receive pattern of ``g``.

    ``d_j`` is the out-degree of ``j`` including itself, so every column sums
    to one exactly and the diagonal is positive.
    """
    n = g.vertex_count
    pattern = support_matrix(g)
    inv_deg = np.array([1.0 / out_degree(g, j) for j in range(1, n + 1)])
    entries = np.where(pattern, inv_deg[np.newaxis, :], 0.0)
    return MixingMatrix(entries, _realized_kappa(entries, pattern))


def metropolis_weights(g: Digraph) -> MixingMatrix:
    """Doubly stochastic weights for a symmetric graph.

    ``a_ij = 1/(1 + max(deg_i, deg_j))`` on edges, with the diagonal absorbing
    the remainder.
    """
    if not g.is_symmetric():
        raise ValueError("metropolis weights require a symmetric graph")
    n = g.vertex_count
    deg = np.zeros(n)
    for j, i in g.edges:
        deg[i - 1] += 0.5
        deg[j - 1] += 0.5
    entries = np.zeros((n, n))
    for j, i in g.edges:
        entries[i - 1, j - 1] = 1.0 / (1.0 + max(deg[i - 1], deg[j - 1]))
    for i in range(n):
        entries[i, i] = 1.0 - entries[i].sum()
    return MixingMatrix(entries, _realized_kappa(entries, support_matrix(g)))


def uniform_weights(g: Digraph) -> MixingMatrix:
    """Doubly stochastic weights ``a_ij = 1/I`` on edges of a symmetric graph."""
    if not g.is_symmetric():
        raise ValueError("uniform weights require a symmetric graph")
    n = g.vertex_count
    entries = np.zeros((n, n))
    for j, i in g.edges:
        entries[i - 1, j - 1] = 1.0 / n
    for i in range(n):
        entries[i, i] = 1.0 - entries[i].sum()
    return MixingMatrix(entries, _realized_kappa(entries, support_matrix(g)))


def laplacian_weights(g: Digraph) -> MixingMatrix:
    """Doubly stochastic weights ``I - L/(1 + max degree)`` for a symmetric graph."""
    if not g.is_symmetric():
        raise ValueError("laplacian weights require a symmetric graph")
    n = g.vertex_count
    adj = np.zeros((n, n))
    for j, i in g.edges:
        adj[i - 1, j - 1] = 1.0
    deg = adj.sum(axis=1)
    scale = 1.0 + deg.max()
    entries = np.eye(n) - (np.diag(deg) - adj) / scale
    return MixingMatrix(entries, _realized_kappa(entries, support_matrix(g)))


WEIGHT_RULES = {
    "push-sum": push_sum_weights,
    "metropolis": metropolis_weights,
    "uniform": uniform_weights,
    "laplacian": laplacian_weights,
}


def is_valid_mixing(entries: np.ndarray, g: Digraph, kappa: float | None = None) -> bool:
    """Check the weight-matrix contract against a graph.

    Positive diagonal and edge entries at floor ``kappa`` (the realized
    minimum when omitted), zeros off the receive pattern, and unit column
    sums within ``COLUMN_SUM_TOL``.
    """
    entries = np.asarray(entries, dtype=float)
    n = g.vertex_count
    if entries.shape != (n, n):
        raise ValueError(f"matrix shape {entries.shape} does not match {n} agents")
    pattern = support_matrix(g)
    if kappa is None:
        on = entries[pattern]
        kappa = float(on.min()) if on.size else 0.0
    if kappa <= 0.0:
        return False
    if np.any(entries[pattern] < kappa):
        return False
    if np.any(entries[~pattern] != 0.0):
        return False
    return bool(np.all(np.abs(entries.sum(axis=0) - 1.0) <= COLUMN_SUM_TOL))


def update_phi(a: MixingMatrix, weights: ConsensusWeights) -> ConsensusWeights:
    """Propagate the broadcast weights one slot: ``phi' = A phi``."""
    phi = weights.phi
    if np.any(phi <= 0.0):
        raise WeightUnderflowError("phi lost positivity before the update")
    new = a.entries @ phi
    if np.any(new < PHI_UNDERFLOW):
        raise WeightUnderflowError(
            "phi underflow: weight floor violated or graph effectively disconnected"
        )
    return ConsensusWeights(new)


def induced_row_matrix(
    a: MixingMatrix, phi_old: ConsensusWeights, phi_new: ConsensusWeights
) -> RowMixingMatrix:
    """Row-stochastic combination weights ``w_ij = a_ij phi_j / phi'_i``."""
    if np.any(phi_new.phi < PHI_UNDERFLOW):
        raise WeightUnderflowError("phi underflow in induced row weights")
    entries = a.entries * phi_old.phi[np.newaxis, :] / phi_new.phi[:, np.newaxis]
    return RowMixingMatrix(entries)


def matrix_to_csv(entries: np.ndarray, path):
    """Dump a dense matrix as row-major CSV at full precision (debugging aid)."""
    entries = np.asarray(entries, dtype=float)
    with open(path, "w") as fh:
        for row in entries:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
