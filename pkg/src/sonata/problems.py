"""Separable optimization problems: per-agent smooth costs, a shared convex
regularizer, and a convex feasible set.

Built-in instances: Huber-loss robust linear regression, squared-range target
localization over a box, and a convex quadratic oracle with a centrally
computed solution used as ground truth in tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class GenerationError(RuntimeError):
    """A problem generator exhausted its retry budget."""


# -- regularizers and feasible sets -------------------------------------------


class ZeroRegularizer:
    """The absent regularizer: value 0, prox is the identity."""

    def value(self, x) -> float:
        return 0.0

    def prox(self, x, weight: float):
        return np.asarray(x, dtype=float)


class L1Regularizer:
    """``weight * ||x||_1`` with the soft-threshold prox."""

    def __init__(self, weight: float):
        if weight <= 0:
            raise ValueError("l1 weight must be positive")
        self.weight = weight

    def value(self, x) -> float:
        return self.weight * float(np.abs(x).sum())

    def prox(self, x, weight: float):
        x = np.asarray(x, dtype=float)
        t = self.weight * weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


class FullSpace:
    """Unconstrained feasible set."""

    bounded = False

    def project(self, x):
        return np.asarray(x, dtype=float)

    def contains(self, x, tol: float = 1e-12) -> bool:
        return bool(np.all(np.isfinite(x)))


class Box:
    """Axis-aligned box; bounds may be scalars or per-coordinate vectors."""

    bounded = True

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


# -- smooth costs --------------------------------------------------------------


class CallableCost:
    """Smooth cost defined by explicit value/gradient callables."""

    def __init__(self, value: Callable, grad: Callable):
        self._value = value
        self._grad = grad

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x):
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)


def huber_value(r, cutoff: float):
    """Huber loss: ``r**2`` for ``|r| <= cutoff``, linear growth ``c(2|r|-c)`` beyond.

    Continuously differentiable; both branches meet with slope ``2c`` at the knee.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    out = np.where(a <= cutoff, r * r, cutoff * (2.0 * a - cutoff))
    return float(out) if out.ndim == 0 else out


def huber_derivative(r, cutoff: float):
    """Derivative of :func:`huber_value`: ``2r`` inside, ``2c sign(r)`` outside."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    r = np.asarray(r, dtype=float)
    out = np.where(np.abs(r) <= cutoff, 2.0 * r, 2.0 * cutoff * np.sign(r))
    return float(out) if out.ndim == 0 else out


class HuberAgentCost:
    """Sum of Huber losses of the residuals ``rows @ x - targets``."""

    def __init__(self, rows: np.ndarray, targets: np.ndarray, cutoff: float):
        self.rows = np.asarray(rows, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        if cutoff <= 0:
            raise ValueError("cutoff must be positive")
        self.cutoff = float(cutoff)

    def residuals(self, x):
        return self.rows @ x - self.targets

    def value(self, x) -> float:
        return float(huber_value(self.residuals(x), self.cutoff).sum())

    def grad(self, x):
        return self.rows.T @ huber_derivative(self.residuals(x), self.cutoff)


class QuadraticAgentCost:
    """``0.5 * ||Q x - c||^2``."""

    def __init__(self, design: np.ndarray, offset: np.ndarray):
        self.design = np.asarray(design, dtype=float)
        self.offset = np.asarray(offset, dtype=float)

    def value(self, x) -> float:
        r = self.design @ x - self.offset
        return 0.5 * float(r @ r)

    def grad(self, x):
        return self.design.T @ (self.design @ x - self.offset)


class LocalizationAgentCost:
    """Squared mismatch between measured and candidate squared ranges.

    The variable stacks the per-target 2-D positions; only targets with an
    active mask entry contribute.
    """

    def __init__(self, sensor: np.ndarray, ranges: np.ndarray, mask: np.ndarray):
        self.sensor = np.asarray(sensor, dtype=float)
        self.ranges = np.asarray(ranges, dtype=float)
        self.mask = np.asarray(mask, dtype=float)
        self.targets = self.ranges.size

    def _blocks(self, x):
        return np.asarray(x, dtype=float).reshape(self.targets, 2)

    def value(self, x) -> float:
        diff = self._blocks(x) - self.sensor
        gap = self.ranges - (diff * diff).sum(axis=1)
        return float((self.mask * gap * gap).sum())

    def grad(self, x):
        diff = self._blocks(x) - self.sensor
        gap = self.ranges - (diff * diff).sum(axis=1)
        g = -4.0 * (self.mask * gap)[:, np.newaxis] * diff
        return g.reshape(-1)


# -- problem container ---------------------------------------------------------


@dataclass
class ProblemInstance:
    """Agents' smooth costs plus shared regularizer and feasible set."""

    name: str
    agent_count: int
    dimension: int
    local_costs: Sequence
    regularizer: object
    feasible_set: object
    gradient_bound: float | None = None
    metadata: dict = field(default_factory=dict)

    def smooth_value(self, x) -> float:
        return float(sum(c.value(x) for c in self.local_costs))

    def smooth_grad(self, x):
        g = np.zeros(self.dimension)
        for c in self.local_costs:
            g += c.grad(x)
        return g

    def objective(self, x) -> float:
        return self.smooth_value(x) + self.regularizer.value(x)

    def is_smooth_unconstrained(self) -> bool:
        return isinstance(self.regularizer, ZeroRegularizer) and isinstance(
            self.feasible_set, FullSpace
        )


def sample_feasible(problem: ProblemInstance, rng: np.random.Generator) -> np.ndarray:
    """A random point of the feasible set (used for starts and audits)."""
    fs = problem.feasible_set
    if isinstance(fs, Box):
        lo = np.broadcast_to(fs.lower, (problem.dimension,))
        hi = np.broadcast_to(fs.upper, (problem.dimension,))
        return rng.uniform(lo, hi)
    return fs.project(rng.standard_normal(problem.dimension))


# -- data containers for the applications --------------------------------------


@dataclass(frozen=True)
class HuberRegressionData:
    rows: tuple          # per agent, (n_i, m) measurement matrix
    targets: tuple       # per agent, length-n_i measurements
    cutoff: float


@dataclass(frozen=True)
class LocalizationData:
    sensors: np.ndarray   # (I, 2) sensor positions
    ranges: np.ndarray    # (I, T) measured squared distances
    mask: np.ndarray      # (I, T) 0/1 observation pattern
    targets: int
    box_low: float
    box_high: float


# -- builders -------------------------------------------------------------------


def build_huber_regression(
    seed: int,
    agent_count: int = 30,
    measurements: int = 20,
    dimension: int = 200,
    noise_sigma: float = 0.1,
    outlier_scale: float = 5.0,
    cutoff: float | None = None,
    signal_seed: int | None = None,
) -> ProblemInstance:
    """Robust linear regression: each agent holds unit-norm measurement rows of a
    shared signal, Gaussian noise, and one outlier-corrupted measurement.

    The true signal is drawn from ``signal_seed`` (defaulting to ``seed``) so
    Monte-Carlo repetitions can re-draw measurements while keeping it fixed.
    The Huber cutoff defaults to three noise standard deviations.
    """
    if min(agent_count, measurements, dimension) < 1:
        raise ValueError("sizes must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    if cutoff is None:
        cutoff = 3.0 * noise_sigma
    if cutoff <= 0:
        raise ValueError("cutoff must be positive (pass it explicitly when noise_sigma=0)")
    sig_rng = np.random.default_rng(
        np.random.SeedSequence([int(seed if signal_seed is None else signal_seed), 0x51])
    )
    signal = sig_rng.uniform(-1.0, 1.0, dimension)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x52]))
    rows, targets, costs = [], [], []
    for _ in range(agent_count):
        a = rng.standard_normal((measurements, dimension))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b = a @ signal + rng.normal(0.0, noise_sigma, measurements)
        b[rng.integers(measurements)] += rng.normal(0.0, outlier_scale * noise_sigma)
        rows.append(a)
        targets.append(b)
        costs.append(HuberAgentCost(a, b, cutoff))
    data = HuberRegressionData(tuple(rows), tuple(targets), cutoff)
    return ProblemInstance(
        name="huber",
        agent_count=agent_count,
        dimension=dimension,
        local_costs=costs,
        regularizer=ZeroRegularizer(),
        feasible_set=FullSpace(),
        gradient_bound=2.0 * cutoff * measurements * agent_count,
        metadata={"signal": signal, "data": data, "noise_sigma": noise_sigma},
    )


def build_localization(
    seed: int,
    agent_count: int = 30,
    targets: int = 5,
    noise_scale: float = 1.0,
    box_low: float = 0.0,
    box_high: float = 1.0,
    retry_budget: int = 1000,
) -> ProblemInstance:
    """Cooperative target localization from noisy squared-range measurements.

    Sensors and targets live in the unit square; each sensor observes each
    target with probability 1/2 (masks are re-drawn until every target is
    observed).  Measurement noise is Gaussian with standard deviation equal to
    the smallest sensor-target distance, scaled by ``noise_scale``.
    """
    if agent_count < 1 or targets < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x10C]))
    sensors = rng.uniform(box_low, box_high, (agent_count, 2))
    truth = rng.uniform(box_low, box_high, (targets, 2))
    for attempt in range(retry_budget + 1):
        mask = rng.integers(0, 2, (agent_count, targets)).astype(float)
        if np.all(mask.sum(axis=0) >= 1):
            break
    else:
        raise GenerationError(f"no full-coverage mask within {retry_budget} draws")
    diff = truth[np.newaxis, :, :] - sensors[:, np.newaxis, :]
    sq_dist = (diff * diff).sum(axis=2)
    noise_std = float(np.sqrt(sq_dist).min()) * noise_scale
    ranges = sq_dist + rng.normal(0.0, noise_std, sq_dist.shape) if noise_std > 0 else sq_dist
    costs = [
        LocalizationAgentCost(sensors[i], ranges[i], mask[i]) for i in range(agent_count)
    ]
    data = LocalizationData(sensors, ranges, mask, targets, box_low, box_high)
    return ProblemInstance(
        name="localization",
        agent_count=agent_count,
        dimension=2 * targets,
        local_costs=costs,
        regularizer=ZeroRegularizer(),
        feasible_set=Box(box_low, box_high),
        metadata={"truth": truth.reshape(-1), "data": data, "noise_std": noise_std},
    )


def build_quadratic_oracle(
    seed: int,
    agent_count: int,
    dimension: int,
    l1_weight: float = 0.0,
    box_halfwidth: float | None = None,
) -> ProblemInstance:
    """Convex quadratic test problem with a centrally computed minimizer.

    Per-agent costs ``0.5 ||Q_i x - c_i||^2`` with controlled singular values,
    so the summed curvature is well conditioned.  The solution stored under
    ``metadata["x_star"]`` comes from the normal equations (smooth case) or an
    internal proximal-gradient solve (l1/box variants).
    """
    if agent_count < 1 or dimension < 1:
        raise ValueError("sizes must be positive")
    if l1_weight > 0 and box_halfwidth is not None:
        raise ValueError("choose at most one of l1_weight and box_halfwidth")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0A]))
    ref = rng.standard_normal(dimension)
    costs = []
    gram = np.zeros((dimension, dimension))
    rhs = np.zeros(dimension)
    for _ in range(agent_count):
        u, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
        v, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
        s = rng.uniform(1.5, 2.2, dimension)
        q = u @ (s[:, np.newaxis] * v.T)
        if np.linalg.cond(q) > 1e8:
            raise GenerationError("ill-conditioned design drawn for the oracle")
        c = q @ ref + 0.1 * rng.standard_normal(dimension)
        costs.append(QuadraticAgentCost(q, c))
        gram += q.T @ q
        rhs += q.T @ c
    x_star = np.linalg.solve(gram, rhs)
    x_star += np.linalg.solve(gram, rhs - gram @ x_star)  # one refinement pass

    regularizer, feasible = ZeroRegularizer(), FullSpace()
    if l1_weight > 0:
        regularizer = L1Regularizer(l1_weight)
    if box_halfwidth is not None:
        feasible = Box(-box_halfwidth, box_halfwidth)
    problem = ProblemInstance(
        name="quadratic",
        agent_count=agent_count,
        dimension=dimension,
        local_costs=costs,
        regularizer=regularizer,
        feasible_set=feasible,
        metadata={"hessian": gram, "rhs": rhs},
    )
    if l1_weight > 0 or box_halfwidth is not None:
        x_star = _centralized_prox_gradient(problem, x_star, tol=1e-12)
    problem.metadata["x_star"] = x_star
    return problem


def _centralized_prox_gradient(
    problem: ProblemInstance, start: np.ndarray, tol: float, max_iter: int = 200_000
) -> np.ndarray:
    """Accelerated proximal gradient on the full (centralized) objective."""
    gram = problem.metadata["hessian"]
    lips = float(np.linalg.eigvalsh(gram).max())
    step = 1.0 / lips
    fs, reg = problem.feasible_set, problem.regularizer
    x = fs.project(start)
    z, t = x.copy(), 1.0
    for _ in range(max_iter):
        g = problem.smooth_grad(z)
        x_new = reg.prox(fs.project(z - step * g), step)
        resid = np.linalg.norm(
            x_new - reg.prox(fs.project(x_new - problem.smooth_grad(x_new)), 1.0)
        )
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if resid <= tol:
            return x
    return x


# -- audits ---------------------------------------------------------------------


def gradient_fd_error(cost, x: np.ndarray, step_scale: float = 1e-6) -> float:
    """Relative deviation of the analytic gradient from central differences."""
    x = np.asarray(x, dtype=float)
    g = cost.grad(x)
    fd = np.empty_like(g)
    for k in range(x.size):
        h = step_scale * (1.0 + abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        fd[k] = (cost.value(x + e) - cost.value(x - e)) / (2.0 * h)
    return float(np.abs(fd - g).max() / (1.0 + np.abs(g).max()))


def audit_gradients(
    problem: ProblemInstance, points: int = 20, seed: int = 0, rel_tol: float = 1e-5
) -> float:
    """Finite-difference audit of every local cost at random feasible points.

    Returns the worst relative error; raises if it exceeds ``rel_tol``.  Warns
    (never rejects) when the feasible set is unbounded and no gradient bound
    is declared, since total-gradient boundedness cannot be certified then.
    """
    if not problem.feasible_set.bounded and problem.gradient_bound is None:
        warnings.warn(
            f"problem {problem.name!r}: gradient boundedness not certifiable on an "
            "unbounded feasible set",
            stacklevel=2,
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xFD]))
    worst = 0.0
    for _ in range(points):
        x = sample_feasible(problem, rng)
        for cost in problem.local_costs:
            worst = max(worst, gradient_fd_error(cost, x))
    if worst > rel_tol:
        raise AssertionError(f"gradient audit failed: fd mismatch {worst:.3e} > {rel_tol:.0e}")
    return worst


# -- plain-text serialization -----------------------------------------------------


def _write_matrix(fh, tag: str, a: np.ndarray):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    fh.write(f"{tag} {a.shape[0]} {a.shape[1]}\n")
    for row in a:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_matrix(lines, tag: str) -> np.ndarray:
    head = next(lines).split()
    if head[0] != tag:
        raise ValueError(f"expected section {tag!r}, found {head[0]!r}")
    r, c = int(head[1]), int(head[2])
    return np.array([[float(v) for v in next(lines).split()] for _ in range(r)]).reshape(r, c)


def save_problem(problem: ProblemInstance, path):
    """Write a problem instance to a self-describing text file."""
    with open(path, "w") as fh:
        fh.write(f"problem {problem.name}\n")
        fh.write(f"agents {problem.agent_count}\n")
        fh.write(f"dimension {problem.dimension}\n")
        if problem.name == "huber":
            data = problem.metadata["data"]
            fh.write(f"cutoff {data.cutoff!r}\n")
            for a, b in zip(data.rows, data.targets):
                _write_matrix(fh, "rows", a)
                _write_matrix(fh, "targets", b)
        elif problem.name == "localization":
            data = problem.metadata["data"]
            fh.write(f"targets {data.targets}\n")
            fh.write(f"box {data.box_low!r} {data.box_high!r}\n")
            _write_matrix(fh, "sensors", data.sensors)
            _write_matrix(fh, "ranges", data.ranges)
            _write_matrix(fh, "mask", data.mask)
        elif problem.name == "quadratic":
            reg = problem.regularizer
            fh.write(f"l1 {getattr(reg, 'weight', 0.0)!r}\n")
            fs = problem.feasible_set
            if isinstance(fs, Box):
                fh.write(f"box {float(np.min(fs.lower))!r} {float(np.max(fs.upper))!r}\n")
            else:
                fh.write("box none\n")
            for cost in problem.local_costs:
                _write_matrix(fh, "design", cost.design)
                _write_matrix(fh, "offset", cost.offset)
        else:
            raise ValueError(f"cannot serialize problem kind {problem.name!r}")


def load_problem(path) -> ProblemInstance:
    """Read back a problem written by :func:`save_problem`."""
    with open(path) as fh:
        lines = iter(ln.rstrip("\n") for ln in fh)
        kind = next(lines).split()[1]
        agents = int(next(lines).split()[1])
        dim = int(next(lines).split()[1])
        if kind == "huber":
            cutoff = float(next(lines).split()[1])
            rows, targets, costs = [], [], []
            for _ in range(agents):
                a = _read_matrix(lines, "rows")
                b = _read_matrix(lines, "targets").reshape(-1)
                rows.append(a)
                targets.append(b)
                costs.append(HuberAgentCost(a, b, cutoff))
            data = HuberRegressionData(tuple(rows), tuple(targets), cutoff)
            return ProblemInstance(
                "huber", agents, dim, costs, ZeroRegularizer(), FullSpace(),
                gradient_bound=2.0 * cutoff * sum(len(b) for b in targets),
                metadata={"data": data},
            )
        if kind == "localization":
            targets = int(next(lines).split()[1])
            _, lo, hi = next(lines).split()
            lo, hi = float(lo), float(hi)
            sensors = _read_matrix(lines, "sensors")
            ranges = _read_matrix(lines, "ranges")
            mask = _read_matrix(lines, "mask")
            costs = [LocalizationAgentCost(sensors[i], ranges[i], mask[i]) for i in range(agents)]
            data = LocalizationData(sensors, ranges, mask, targets, lo, hi)
            return ProblemInstance(
                "localization", agents, dim, costs, ZeroRegularizer(), Box(lo, hi),
                metadata={"data": data},
            )
        if kind == "quadratic":
            l1 = float(next(lines).split()[1])
            box_tokens = next(lines).split()[1:]
            costs = []
            gram = np.zeros((dim, dim))
            rhs = np.zeros(dim)
            for _ in range(agents):
                q = _read_matrix(lines, "design")
                c = _read_matrix(lines, "offset").reshape(-1)
                costs.append(QuadraticAgentCost(q, c))
                gram += q.T @ q
                rhs += q.T @ c
            reg = L1Regularizer(l1) if l1 > 0 else ZeroRegularizer()
            fs = FullSpace() if box_tokens[0] == "none" else Box(float(box_tokens[0]), float(box_tokens[1]))
            return ProblemInstance(
                "quadratic", agents, dim, costs, reg, fs,
                metadata={"hessian": gram, "rhs": rhs},
            )
        raise ValueError(f"unknown problem kind {kind!r}")
