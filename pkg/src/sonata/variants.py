"""Special-case algorithms as standalone stacked-matrix recursions.

Each runner re-implements its published recursion directly (no reuse of the
main engine), so that the reduction claims — e.g. that the tracking-based
first-order methods are parameterizations of the general scheme — can be
verified as executable trajectory tests.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import mixing
from .digraph import Digraph, DigraphSequence
from .engine import StepSizeSchedule
from .metrics import (
    IterationMetrics,
    RunRecord,
    consensus_error,
    measure,
    optimality_measure,
    weighted_average,
)
from .problems import ProblemInstance
from .surrogates import SubproblemSpec, solve_subproblem

DOUBLY_STOCHASTIC_TOL = 1e-9


def _grads(problem: ProblemInstance, x: np.ndarray) -> np.ndarray:
    return np.vstack([problem.local_costs[i].grad(x[i]) for i in range(x.shape[0])])


def _require_doubly_stochastic(entries: np.ndarray, where: str):
    bad_col = np.abs(entries.sum(axis=0) - 1.0).max()
    bad_row = np.abs(entries.sum(axis=1) - 1.0).max()
    if max(bad_col, bad_row) > DOUBLY_STOCHASTIC_TOL:
        raise ValueError(f"{where} requires doubly stochastic weights")


def _require_smooth_unconstrained(problem: ProblemInstance, where: str):
    if not problem.is_smooth_unconstrained():
        raise ValueError(f"{where} applies only to smooth unconstrained problems")


def _new_record(name: str, x0: np.ndarray, record_states: bool) -> RunRecord:
    return RunRecord(variant=name, states=[x0.copy()] if record_states else None)


def _finish(record: RunRecord, x: np.ndarray, phi: np.ndarray) -> RunRecord:
    record.final_x = x
    record.final_phi = phi
    return record


def run_sonata_next(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    weight_rule: Callable,
    surrogate_builder: Callable,
    schedule: StepSizeSchedule,
    iterations: int,
    x0: np.ndarray,
    direction: str = "atc",
    subproblem_tol: float = 1e-10,
    record_states: bool = False,
) -> RunRecord:
    """Doubly stochastic special case: the broadcast weights stay at one and
    the tracking update needs no weight correction."""
    count = problem.agent_count
    x = np.array(x0, dtype=float)
    g = _grads(problem, x)
    y = g.copy()
    ones = np.ones(count)
    record = _new_record(f"sonata-next-{direction}", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, ones, y, g, n, schedule.nominal(n)))
        w = weight_rule(graphs[n]).entries
        _require_doubly_stochastic(w, "this reduction")
        pi = count * y - g
        x_tilde = np.empty_like(x)
        for i in range(count):
            surrogate = surrogate_builder(problem.local_costs[i], x[i], g[i])
            spec = SubproblemSpec(surrogate, pi[i], problem.regularizer, problem.feasible_set)
            x_tilde[i] = solve_subproblem(spec, subproblem_tol)
        alpha = schedule.step(n)
        if direction == "atc":
            x_new = w @ (x + alpha * (x_tilde - x))
        else:
            x_new = w @ x + alpha * (x_tilde - x)
        g_new = _grads(problem, x_new)
        y = w @ y + g_new - g
        x, g = x_new, g_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(
        measure(problem, x, ones, y, g, iterations, schedule.nominal(iterations))
    )
    return _finish(record, x, ones)


def run_sonata_l(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    weight_rule: Callable,
    schedule: StepSizeSchedule,
    iterations: int,
    x0: np.ndarray,
    direction: str = "atc",
    record_states: bool = False,
) -> RunRecord:
    """Linearized instance with modulus equal to the agent count: the local
    best response is ``x - y``, so the whole iteration is one matrix recursion."""
    _require_smooth_unconstrained(problem, "the linearized recursion")
    x = np.array(x0, dtype=float)
    g = _grads(problem, x)
    y = g.copy()
    phi = np.ones(problem.agent_count)
    record = _new_record(f"sonata-l-{direction}", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, phi, y, g, n, schedule.nominal(n)))
        a = weight_rule(graphs[n]).entries
        phi_new = a @ phi
        w = a * phi[np.newaxis, :] / phi_new[:, np.newaxis]
        alpha = schedule.step(n)
        if direction == "atc":
            x_new = w @ (x - alpha * y)
        else:
            x_new = w @ x - alpha * y
        g_new = _grads(problem, x_new)
        y = w @ y + (g_new - g) / phi_new[:, np.newaxis]
        x, g, phi = x_new, g_new, phi_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(
        measure(problem, x, phi, y, g, iterations, schedule.nominal(iterations))
    )
    return _finish(record, x, phi)


def run_aug_dgm(
    problem: ProblemInstance,
    graph: Digraph,
    weight_rule: Callable,
    step_sizes,
    iterations: int,
    x0: np.ndarray,
    premix_gradient_difference: bool = True,
    record_states: bool = False,
) -> RunRecord:
    """Static undirected graph, doubly stochastic weights, per-agent steps.

    ``premix_gradient_difference`` selects between the two published
    tracker updates: the gradient difference entering before the mixing, or
    being added after it (the coordinated-step variant).
    """
    _require_smooth_unconstrained(problem, "this scheme")
    if not graph.is_symmetric():
        raise ValueError("this scheme requires a static undirected graph")
    w = weight_rule(graph).entries
    _require_doubly_stochastic(w, "this scheme")
    alpha = np.asarray(step_sizes, dtype=float)
    scale = alpha if alpha.ndim == 0 else alpha[:, np.newaxis]
    x = np.array(x0, dtype=float)
    g = _grads(problem, x)
    y = g.copy()
    ones = np.ones(problem.agent_count)
    nominal = float(np.max(alpha))
    record = _new_record("aug-dgm", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, ones, y, g, n, nominal))
        x_new = w @ (x - scale * y)
        g_new = _grads(problem, x_new)
        if premix_gradient_difference:
            y = w @ (y + g_new - g)
        else:
            y = w @ y + g_new - g
        x, g = x_new, g_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(measure(problem, x, ones, y, g, iterations, nominal))
    return _finish(record, x, ones)


def run_diging(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    weight_rule: Callable,
    step: float,
    iterations: int,
    x0: np.ndarray,
    record_states: bool = False,
) -> RunRecord:
    """Mix-then-step gradient tracking over doubly stochastic weights."""
    _require_smooth_unconstrained(problem, "this scheme")
    x = np.array(x0, dtype=float)
    g = _grads(problem, x)
    y = g.copy()
    ones = np.ones(problem.agent_count)
    record = _new_record("diging", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, ones, y, g, n, step))
        w = weight_rule(graphs[n]).entries
        _require_doubly_stochastic(w, "this scheme")
        x_new = w @ x - step * y
        g_new = _grads(problem, x_new)
        y = w @ y + g_new - g
        x, g = x_new, g_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(measure(problem, x, ones, y, g, iterations, step))
    return _finish(record, x, ones)


def run_push_diging(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    step: float,
    iterations: int,
    x0: np.ndarray,
    record_states: bool = False,
) -> RunRecord:
    """Directed-graph tracking with even broadcast splits and weight correction."""
    _require_smooth_unconstrained(problem, "this scheme")
    x = np.array(x0, dtype=float)
    g = _grads(problem, x)
    y = g.copy()
    phi = np.ones(problem.agent_count)
    record = _new_record("push-diging", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, phi, y, g, n, step))
        a = mixing.push_sum_weights(graphs[n]).entries
        phi_new = a @ phi
        w = a * phi[np.newaxis, :] / phi_new[:, np.newaxis]
        x_new = w @ (x - step * y)
        g_new = _grads(problem, x_new)
        y = w @ y + (g_new - g) / phi_new[:, np.newaxis]
        x, g, phi = x_new, g_new, phi_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(measure(problem, x, phi, y, g, iterations, step))
    return _finish(record, x, phi)


def run_add_opt(
    problem: ProblemInstance,
    graph: Digraph,
    weight_rule: Callable,
    step: float,
    iterations: int,
    x0: np.ndarray,
    record_states: bool = False,
) -> RunRecord:
    """Static-digraph scheme mixing raw weighted iterates ``z`` and rescaling
    by the broadcast weights afterwards."""
    _require_smooth_unconstrained(problem, "this scheme")
    a = weight_rule(graph).entries
    x = np.array(x0, dtype=float)
    z = x.copy()
    phi = np.ones(problem.agent_count)
    g = _grads(problem, x)
    y_raw = g.copy()
    record = _new_record("add-opt", x, record_states)
    for n in range(iterations):
        record.iterations.append(
            measure(problem, x, phi, y_raw / phi[:, np.newaxis], g, n, step)
        )
        z = a @ z - step * y_raw
        phi = a @ phi
        x_new = z / phi[:, np.newaxis]
        g_new = _grads(problem, x_new)
        y_raw = a @ y_raw + g_new - g
        x, g = x_new, g_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(
        measure(problem, x, phi, y_raw / phi[:, np.newaxis], g, iterations, step)
    )
    return _finish(record, x, phi)


def run_add_opt_ratio(
    problem: ProblemInstance,
    graph: Digraph,
    weight_rule: Callable,
    step: float,
    iterations: int,
    x0: np.ndarray,
    record_states: bool = False,
) -> RunRecord:
    """Algebraically equivalent form of :func:`run_add_opt` written over the
    bias-corrected variables, with the step rescaled by the weight ratio."""
    _require_smooth_unconstrained(problem, "this scheme")
    a = weight_rule(graph).entries
    x = np.array(x0, dtype=float)
    phi = np.ones(problem.agent_count)
    g = _grads(problem, x)
    y = g.copy()
    record = _new_record("add-opt-ratio", x, record_states)
    for n in range(iterations):
        record.iterations.append(measure(problem, x, phi, y, g, n, step))
        phi_new = a @ phi
        w = a * phi[np.newaxis, :] / phi_new[:, np.newaxis]
        ratio = (phi / phi_new)[:, np.newaxis]
        x_new = w @ x - step * ratio * y
        g_new = _grads(problem, x_new)
        y = w @ y + (g_new - g) / phi_new[:, np.newaxis]
        x, g, phi = x_new, g_new, phi_new
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(measure(problem, x, phi, y, g, iterations, step))
    return _finish(record, x, phi)


def run_subgradient_push(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    schedule: StepSizeSchedule,
    iterations: int,
    x0: np.ndarray,
    rounds_per_iteration: int = 2,
    record_states: bool = False,
) -> RunRecord:
    """Perturbed push-sum baseline: gradients are injected into the mixed
    weighted values, and the weight division de-biases the estimate.

    Runs ``rounds_per_iteration`` mixing rounds per recorded iteration (the
    reference scheme uses one exchange per round, the tracking schemes two, so
    two rounds make iteration counts comparable).  With a zero step this is
    plain average consensus.
    """
    _require_smooth_unconstrained(problem, "the push baseline")
    x = np.array(x0, dtype=float)
    z = x.copy()
    phi = np.ones(problem.agent_count)
    record = _new_record("subgradient-push", x, record_states)
    record.transmissions_per_iteration = rounds_per_iteration

    def snapshot(n):
        zbar = weighted_average(x, phi)
        return IterationMetrics(
            n=n,
            alpha=schedule.nominal(n),
            J=optimality_measure(problem, zbar),
            D=consensus_error(x, zbar),
            U_zbar=problem.objective(zbar),
            phi_min=float(phi.min()),
            phi_max=float(phi.max()),
            mass_err=abs(float(phi.sum()) - phi.size),
            tracking_err=0.0,  # no tracker in this baseline
        )

    for n in range(iterations):
        record.iterations.append(snapshot(n))
        alpha = schedule.step(n)
        for _ in range(rounds_per_iteration):
            a = mixing.push_sum_weights(graphs[n]).entries
            g = _grads(problem, x)
            z = a @ (z - alpha * g)
            phi = a @ phi
            x = z / phi[:, np.newaxis]
        if record_states:
            record.states.append(x.copy())
    record.iterations.append(snapshot(iterations))
    return _finish(record, x, phi)
