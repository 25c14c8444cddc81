"""Core synchronous iteration engine.

Each round: every agent solves its strongly convex local subproblem, takes a
relaxed step, broadcasts weighted values over the current digraph, and updates
its gradient-tracking state.  Mixing uses column-stochastic weights and the
broadcast weight vector ``phi``; the induced row-stochastic combination keeps
iterates feasible in the adapt-then-combine ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import mixing
from .digraph import DigraphSequence
from .metrics import RunRecord, measure
from .problems import FullSpace, ProblemInstance, sample_feasible
from .surrogates import SubproblemSpec, solve_subproblem


class EngineError(RuntimeError):
    """A run aborted; carries the partial record under ``.record``."""

    def __init__(self, message: str, record: RunRecord):
        super().__init__(message)
        self.record = record


# -- step-size schedules --------------------------------------------------------


class StepSizeSchedule:
    """Maps the iteration index (and optionally the broadcast weights) to a step."""

    kind = "abstract"

    def step(self, n: int, phi_old=None, phi_new=None):
        raise NotImplementedError

    def nominal(self, n: int) -> float:
        """Scalar recorded in traces; equals ``step`` for scalar schedules."""
        s = self.step(n)
        return float(np.max(s))


class PolynomialSchedule(StepSizeSchedule):
    """``alpha0 / (n+1)**beta`` with ``alpha0 in (0,1]`` and ``beta in (0.5, 1]``."""

    kind = "polynomial"

    def __init__(self, alpha0: float, beta: float):
        if not 0 < alpha0 <= 1:
            raise ValueError("alpha0 must lie in (0, 1]")
        if not 0.5 < beta <= 1:
            raise ValueError("beta must lie in (0.5, 1]")
        self.alpha0, self.beta = float(alpha0), float(beta)

    def step(self, n, phi_old=None, phi_new=None):
        return self.alpha0 / (n + 1) ** self.beta


class RecursiveSchedule(StepSizeSchedule):
    """``alpha[n] = alpha[n-1] (1 - mu alpha[n-1])`` from ``alpha[0] in (0,1]``."""

    kind = "recursive"

    def __init__(self, alpha0: float, mu: float):
        if not 0 < alpha0 <= 1:
            raise ValueError("alpha0 must lie in (0, 1]")
        if not 0 < mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        self.alpha0, self.mu = float(alpha0), float(mu)
        self._memo = [self.alpha0]

    def step(self, n, phi_old=None, phi_new=None):
        while len(self._memo) <= n:
            a = self._memo[-1]
            self._memo.append(a * (1.0 - self.mu * a))
        return self._memo[n]


class ConstantSchedule(StepSizeSchedule):
    """A constant step, optionally a per-agent vector (uncoordinated steps).

    Zero is admitted as a degenerate value for pure-consensus diagnostics.
    """

    kind = "constant"

    def __init__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("constant steps must lie in [0, 1]")
        self.alpha = float(a) if a.ndim == 0 else a

    def step(self, n, phi_old=None, phi_new=None):
        return self.alpha


class PhiRatioSchedule(StepSizeSchedule):
    """Per-agent step ``alpha * phi_i[n] / phi_i[n+1]``.

    Reproduces static-digraph schemes that mix the raw (weight-scaled)
    iterates instead of the bias-corrected ones.
    """

    kind = "phi-ratio"

    def __init__(self, alpha: float):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = float(alpha)

    def step(self, n, phi_old=None, phi_new=None):
        if phi_old is None or phi_new is None:
            return self.alpha
        return self.alpha * np.asarray(phi_old, float) / np.asarray(phi_new, float)

    def nominal(self, n):
        return self.alpha


SCHEDULES = {
    "polynomial": PolynomialSchedule,
    "recursive": RecursiveSchedule,
    "constant": ConstantSchedule,
}


# -- state ------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentState:
    """One agent's view of its iteration variables."""

    x: np.ndarray
    v: np.ndarray | None
    y: np.ndarray
    phi: float
    pi_tilde: np.ndarray
    last_grad: np.ndarray


@dataclass(frozen=True)
class NetworkState:
    """Stacked per-agent state; rows index agents."""

    x: np.ndarray                       # (I, m) iterates, feasible
    y: np.ndarray                       # (I, m) tracked average gradients
    phi: np.ndarray                     # (I,) broadcast weights
    pi_tilde: np.ndarray                # (I, m) tracked other-agents gradients
    grad: np.ndarray                    # (I, m) own gradients at x
    x_tilde: np.ndarray | None = None   # (I, m) latest subproblem solutions
    v: np.ndarray | None = None         # (I, m) latest relaxed steps

    @property
    def agent_count(self) -> int:
        return self.x.shape[0]

    def agent(self, i: int) -> AgentState:
        k = i - 1
        if not 0 <= k < self.agent_count:
            raise ValueError(f"agent {i} out of range 1..{self.agent_count}")
        return AgentState(
            x=self.x[k],
            v=None if self.v is None else self.v[k],
            y=self.y[k],
            phi=float(self.phi[k]),
            pi_tilde=self.pi_tilde[k],
            last_grad=self.grad[k],
        )


def initialize(
    problem: ProblemInstance,
    x0: np.ndarray,
    project_start: bool = False,
    tracking_init: str = "local",
) -> NetworkState:
    """Initial network state from per-agent feasible starting points.

    Tracking starts from each agent's own gradient (``"local"``, the standard
    rule) or from the network-average gradient (``"average"``; the tracking
    fixed point, used to seat the iteration exactly at a stationary state).
    """
    x0 = np.array(x0, dtype=float)
    if x0.shape != (problem.agent_count, problem.dimension):
        raise ValueError(f"x0 must have shape {(problem.agent_count, problem.dimension)}")
    fs = problem.feasible_set
    if project_start:
        x0 = np.vstack([fs.project(row) for row in x0])
    elif not all(fs.contains(row) for row in x0):
        raise ValueError("infeasible starting point (set project_start=True to clamp)")
    grads = np.vstack([problem.local_costs[i].grad(x0[i]) for i in range(problem.agent_count)])
    if tracking_init == "local":
        y = grads.copy()
    elif tracking_init == "average":
        y = np.tile(grads.mean(axis=0), (problem.agent_count, 1))
    else:
        raise ValueError("tracking_init must be 'local' or 'average'")
    count = problem.agent_count
    return NetworkState(
        x=x0,
        y=y,
        phi=np.ones(count),
        pi_tilde=count * y - grads,
        grad=grads,
    )


# -- the four sub-steps -------------------------------------------------------------


def solve_local_subproblems(
    state: NetworkState,
    problem: ProblemInstance,
    surrogate_builder: Callable,
    tol: float,
    force_generic: bool = False,
) -> np.ndarray:
    """Per-agent best responses at the current anchors (stacked)."""
    out = np.empty_like(state.x)
    for i in range(state.agent_count):
        surrogate = surrogate_builder(problem.local_costs[i], state.x[i], state.grad[i])
        spec = SubproblemSpec(
            surrogate, state.pi_tilde[i], problem.regularizer, problem.feasible_set
        )
        out[i] = solve_subproblem(spec, tol, force_generic=force_generic)
    return out


def local_sca_step(
    state: NetworkState,
    problem: ProblemInstance,
    surrogate_builder: Callable,
    alpha,
    tol: float = 1e-10,
) -> NetworkState:
    """Solve the subproblems and take the relaxed step ``v = x + alpha (xt - x)``."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    x_tilde = solve_local_subproblems(state, problem, surrogate_builder, tol)
    scale = alpha if alpha.ndim == 0 else alpha[:, np.newaxis]
    v = state.x + scale * (x_tilde - state.x)
    return replace(state, x_tilde=x_tilde, v=v)


def consensus_step(state: NetworkState, a: mixing.MixingMatrix, direction: str, alpha=None):
    """Advance the broadcast weights and mix the iterates.

    Adapt-then-combine mixes the relaxed points ``v``; combine-then-adapt
    mixes the raw iterates and then adds the local step scaled by ``alpha``
    (scalar or per-agent).  Returns ``(phi_new, x_new, w)``.
    """
    phi_old = mixing.ConsensusWeights(state.phi)
    phi_new = mixing.update_phi(a, phi_old)
    w = mixing.induced_row_matrix(a, phi_old, phi_new).entries
    if direction == "atc":
        if state.v is None:
            raise ValueError("run the local step before an adapt-then-combine round")
        x_new = w @ state.v
    elif direction == "cta":
        if state.x_tilde is None:
            raise ValueError("run the local step before a combine-then-adapt round")
        alpha = np.asarray(0.0 if alpha is None else alpha, dtype=float)
        scale = alpha if alpha.ndim == 0 else alpha[:, np.newaxis]
        x_new = w @ state.x + scale * (state.x_tilde - state.x)
    else:
        raise ValueError("direction must be 'atc' or 'cta'")
    return phi_new.phi, x_new, w


def tracking_step(
    state: NetworkState,
    problem: ProblemInstance,
    w: np.ndarray,
    phi_new: np.ndarray,
    x_new: np.ndarray,
):
    """Gradient-tracking update; returns ``(y_new, pi_new, grad_new)``."""
    grad_new = np.vstack(
        [problem.local_costs[i].grad(x_new[i]) for i in range(state.agent_count)]
    )
    y_new = w @ state.y + (grad_new - state.grad) / phi_new[:, np.newaxis]
    pi_new = state.agent_count * y_new - grad_new
    return y_new, pi_new, grad_new


# -- configuration and the main loop ---------------------------------------------


@dataclass
class IterationConfig:
    """Knobs of one engine run."""

    surrogate_builder: Callable
    schedule: StepSizeSchedule
    max_iterations: int
    direction: str = "atc"
    termination_j: float | None = 1e-6
    termination_d: float | None = 1e-8
    subproblem_tol: float = 1e-10
    validate_mixing: bool = True
    project_start: bool = False
    tracking_init: str = "local"
    record_states: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.direction not in ("atc", "cta"):
            raise ValueError("direction must be 'atc' or 'cta'")


def _should_stop(cfg: IterationConfig, j: float, d: float) -> bool:
    if cfg.termination_j is None and cfg.termination_d is None:
        return False
    if cfg.termination_j is not None and j > cfg.termination_j:
        return False
    if cfg.termination_d is not None and d > cfg.termination_d:
        return False
    return True


def run(
    problem: ProblemInstance,
    graphs: DigraphSequence,
    weight_rule: Callable,
    config: IterationConfig,
    seed: int = 0,
    x0: np.ndarray | None = None,
) -> RunRecord:
    """Execute the full iteration and record per-round metrics.

    Deterministic in ``(seed, config)``: the only randomness is the draw of
    the starting points when ``x0`` is not supplied.
    """
    if config.direction == "cta" and not isinstance(problem.feasible_set, FullSpace):
        raise ValueError(
            "combine-then-adapt updates do not preserve feasibility; "
            "use the adapt-then-combine direction on constrained problems"
        )
    if x0 is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0]))
        x0 = np.vstack([sample_feasible(problem, rng) for _ in range(problem.agent_count)])
    state = initialize(
        problem, x0, project_start=config.project_start, tracking_init=config.tracking_init
    )
    record = RunRecord(
        variant=f"sonata-{config.direction}",
        config={"schedule": config.schedule.kind, "max_iterations": config.max_iterations},
        states=[state.x.copy()] if config.record_states else None,
    )
    constrained = not isinstance(problem.feasible_set, FullSpace)
    try:
        for n in range(config.max_iterations):
            m = measure(
                problem, state.x, state.phi, state.y, state.grad, n, config.schedule.nominal(n)
            )
            record.iterations.append(m)
            if _should_stop(config, m.J, m.D):
                break

            a = weight_rule(graphs[n])
            if config.validate_mixing and not mixing.is_valid_mixing(a.entries, graphs[n]):
                raise ValueError(f"weight matrix violates the mixing contract at round {n}")
            x_tilde = solve_local_subproblems(
                state, problem, config.surrogate_builder, config.subproblem_tol
            )
            phi_old = mixing.ConsensusWeights(state.phi)
            phi_new = mixing.update_phi(a, phi_old)
            w = mixing.induced_row_matrix(a, phi_old, phi_new).entries
            alpha = np.asarray(config.schedule.step(n, state.phi, phi_new.phi), dtype=float)
            if constrained and np.any(alpha > 1.0):
                raise ValueError("steps above 1 break feasibility on constrained problems")
            scale = alpha if alpha.ndim == 0 else alpha[:, np.newaxis]
            if config.direction == "atc":
                v = state.x + scale * (x_tilde - state.x)
                x_new = w @ v
            else:
                v = None
                x_new = w @ state.x + scale * (x_tilde - state.x)
            grad_new = np.vstack(
                [problem.local_costs[i].grad(x_new[i]) for i in range(state.agent_count)]
            )
            y_new = w @ state.y + (grad_new - state.grad) / phi_new.phi[:, np.newaxis]
            state = NetworkState(
                x=x_new,
                y=y_new,
                phi=phi_new.phi,
                pi_tilde=state.agent_count * y_new - grad_new,
                grad=grad_new,
                x_tilde=x_tilde,
                v=v,
            )
            if config.record_states:
                record.states.append(state.x.copy())
        else:
            n = config.max_iterations
            record.iterations.append(
                measure(
                    problem, state.x, state.phi, state.y, state.grad, n,
                    config.schedule.nominal(n),
                )
            )
    except Exception as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        record.final_x = state.x
        record.final_phi = state.phi
        raise EngineError(str(exc), record) from exc
    record.final_x = state.x
    record.final_phi = state.phi
    return record
