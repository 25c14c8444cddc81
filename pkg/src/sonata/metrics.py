"""Omniscient-observer measurements of a network run.

These quantities (weighted-average iterate, optimality residual, consensus
error, conservation diagnostics) are computed by the harness over state
snapshots; no agent ever reads them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problems import ProblemInstance

CSV_COLUMNS = ("n", "alpha", "J", "D", "U_zbar", "phi_min", "phi_max", "mass_err", "tracking_err")


def weighted_average(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Network barycenter ``(1/I) sum_i phi_i x_i`` of stacked iterates."""
    phi = np.asarray(phi, dtype=float)
    return (phi[:, np.newaxis] * np.asarray(x, dtype=float)).sum(axis=0) / phi.size


def optimality_measure(problem: ProblemInstance, point: np.ndarray) -> float:
    """First-order stationarity residual at a point, in the max norm.

    For smooth unconstrained problems this is the max-norm of the total
    gradient; otherwise it is the composite residual
    ``||x - prox(proj(x - grad F(x)))||_inf``, which vanishes exactly at
    stationary points.
    """
    point = np.asarray(point, dtype=float)
    g = problem.smooth_grad(point)
    if problem.is_smooth_unconstrained():
        return float(np.abs(g).max())
    moved = problem.regularizer.prox(problem.feasible_set.project(point - g), 1.0)
    return float(np.abs(point - moved).max())


def consensus_error(x: np.ndarray, center: np.ndarray) -> float:
    """Mean squared distance of the agents' iterates from the barycenter."""
    d = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)[np.newaxis, :]
    return float((d * d).sum(axis=1).mean())


def mass_error(phi: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=float)
    return float(abs(phi.sum() - phi.size))


def tracking_error(phi: np.ndarray, y: np.ndarray, grads: np.ndarray) -> float:
    """Max-norm violation of the conservation law ``sum_i phi_i y_i = sum_i grad_i``."""
    lhs = (np.asarray(phi)[:, np.newaxis] * np.asarray(y)).sum(axis=0)
    return float(np.abs(lhs - np.asarray(grads).sum(axis=0)).max())


@dataclass(frozen=True)
class IterationMetrics:
    n: int
    alpha: float
    J: float
    D: float
    U_zbar: float
    phi_min: float
    phi_max: float
    mass_err: float
    tracking_err: float

    def row(self) -> str:
        vals = (self.alpha, self.J, self.D, self.U_zbar, self.phi_min, self.phi_max,
                self.mass_err, self.tracking_err)
        return ",".join([str(self.n)] + [repr(float(v)) for v in vals])


def measure(problem, x, phi, y, grads, n: int, alpha: float) -> IterationMetrics:
    """Snapshot all per-iteration metrics for stacked state arrays."""
    zbar = weighted_average(x, phi)
    return IterationMetrics(
        n=n,
        alpha=float(alpha),
        J=optimality_measure(problem, zbar),
        D=consensus_error(x, zbar),
        U_zbar=problem.objective(zbar),
        phi_min=float(np.min(phi)),
        phi_max=float(np.max(phi)),
        mass_err=mass_error(phi),
        tracking_err=tracking_error(phi, y, grads),
    )


@dataclass
class RunRecord:
    """Per-iteration metrics trace plus the configuration that produced it."""

    variant: str
    config: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    final_phi: np.ndarray | None = None
    states: list | None = None      # optional trajectory of stacked iterates
    error: str | None = None        # populated when a run aborts early
    transmissions_per_iteration: int = 2

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.iterations], dtype=float)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# variant={self.variant}\n")
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for m in self.iterations:
                fh.write(m.row() + "\n")
