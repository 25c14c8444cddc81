"""Strongly convex local models and the per-agent subproblem solver.

A surrogate approximates one agent's smooth cost around an anchor point: its
gradient matches the cost's gradient at the anchor, and it is strongly convex
with a known modulus.  The agent's update solves

    minimize  surrogate(x) + linear . (x - anchor) + regularizer(x)
    over the feasible set,

where the linear term carries the tracked estimate of the other agents'
gradients.  Closed forms are dispatched where available; otherwise an
accelerated projected/proximal gradient handles the solve.
"""

from __future__ import annotations

import numpy as np

from .problems import (
    Box,
    FullSpace,
    HuberAgentCost,
    L1Regularizer,
    LocalizationAgentCost,
    ZeroRegularizer,
    huber_value,
)


class SubproblemError(RuntimeError):
    """Inner solver failed to reach the requested stationarity residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def composite_step(v, regularizer, feasible_set, weight: float):
    """Apply the projection, then the prox, to a candidate point.

    Exact whenever at most one of the two operators is nontrivial (all
    built-in problems), and for separable box/l1 combinations.
    """
    return regularizer.prox(feasible_set.project(v), weight)


# -- surrogate types ----------------------------------------------------------


class Surrogate:
    """Base: an anchored strongly convex model with value/gradient access."""

    anchor: np.ndarray
    strong_convexity: float

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def solve_exact(self, linear, regularizer, feasible_set):
        """Closed-form subproblem solution, or None when there is no closed form."""
        return None


class LinearizationSurrogate(Surrogate):
    """First-order model plus a proximal term: the plain-gradient surrogate."""

    def __init__(self, cost, anchor, tau: float, anchor_grad=None):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.cost = cost
        self.anchor = np.asarray(anchor, dtype=float)
        self.strong_convexity = float(tau)
        self.anchor_grad = (
            cost.grad(self.anchor) if anchor_grad is None else np.asarray(anchor_grad, float)
        )
        self._anchor_value = None

    def _f0(self) -> float:
        if self._anchor_value is None:
            self._anchor_value = self.cost.value(self.anchor)
        return self._anchor_value

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.anchor
        return self._f0() + self.anchor_grad @ d + 0.5 * self.strong_convexity * (d @ d)

    def grad(self, x):
        return self.anchor_grad + self.strong_convexity * (np.asarray(x, float) - self.anchor)

    def solve_exact(self, linear, regularizer, feasible_set):
        tau = self.strong_convexity
        v = self.anchor - (self.anchor_grad + linear) / tau
        if isinstance(regularizer, ZeroRegularizer):
            if isinstance(feasible_set, FullSpace):
                return v
            if isinstance(feasible_set, Box):
                return feasible_set.project(v)
        if isinstance(regularizer, L1Regularizer) and isinstance(feasible_set, (FullSpace, Box)):
            # separable: clipping the soft-thresholded point is exact per coordinate
            return feasible_set.project(regularizer.prox(v, 1.0 / tau))
        return None


class PartialLinearizationSurrogate(Surrogate):
    """Keeps a convex component exact, linearizes the nonconvex remainder."""

    def __init__(self, convex_cost, nonconvex_cost, anchor, tau: float):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.convex_cost = convex_cost
        self.nonconvex_cost = nonconvex_cost
        self.anchor = np.asarray(anchor, dtype=float)
        self.strong_convexity = float(tau)
        self._g2 = nonconvex_cost.grad(self.anchor)
        self._f2 = nonconvex_cost.value(self.anchor)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        d = x - self.anchor
        return (
            self.convex_cost.value(x)
            + self._f2
            + self._g2 @ d
            + 0.5 * self.strong_convexity * (d @ d)
        )

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.convex_cost.grad(x) + self._g2 + self.strong_convexity * (x - self.anchor)


class BlockConvexificationSurrogate(Surrogate):
    """Exact in a convex coordinate block, linearized in the remaining block.

    A small proximal term (``epsilon``) on the exact block keeps the model
    uniformly strongly convex even when the cost is merely convex there.
    """

    def __init__(self, cost, block1, block2, anchor, tau: float, epsilon: float = 1e-8):
        if tau <= 0 or epsilon <= 0:
            raise ValueError("tau and epsilon must be positive")
        self.cost = cost
        self.anchor = np.asarray(anchor, dtype=float)
        b1 = np.asarray(block1, dtype=int)
        b2 = np.asarray(block2, dtype=int)
        joined = np.sort(np.concatenate([b1, b2]))
        if not np.array_equal(joined, np.arange(self.anchor.size)):
            raise ValueError("blocks must partition the coordinates")
        self.block1, self.block2 = b1, b2
        self.tau = float(tau)
        self.epsilon = float(epsilon)
        if b1.size == 0:
            self.strong_convexity = self.tau
        elif b2.size == 0:
            self.strong_convexity = self.epsilon
        else:
            self.strong_convexity = min(self.tau, self.epsilon)
        self._g2_anchor = cost.grad(self.anchor)[self.block2]

    def _compose(self, x):
        z = self.anchor.copy()
        z[self.block1] = np.asarray(x, dtype=float)[self.block1]
        return z

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        d1 = x[self.block1] - self.anchor[self.block1]
        d2 = x[self.block2] - self.anchor[self.block2]
        return (
            self.cost.value(self._compose(x))
            + self._g2_anchor @ d2
            + 0.5 * self.tau * (d2 @ d2)
            + 0.5 * self.epsilon * (d1 @ d1)
        )

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = np.empty_like(x)
        g[self.block1] = self.cost.grad(self._compose(x))[self.block1] + self.epsilon * (
            x[self.block1] - self.anchor[self.block1]
        )
        g[self.block2] = self._g2_anchor + self.tau * (
            x[self.block2] - self.anchor[self.block2]
        )
        return g


class HuberMajorizationSurrogate(Surrogate):
    """Quadratic majorizer of a Huber regression cost.

    Each residual term keeps its quadratic form inside the cutoff and is
    replaced by the tangent quadratic ``(c/|r|) r(x)^2 + const`` beyond it, so
    the model touches the cost at the anchor and majorizes it everywhere.
    """

    def __init__(self, cost: HuberAgentCost, anchor, tau: float):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.cost = cost
        self.anchor = np.asarray(anchor, dtype=float)
        self.strong_convexity = float(tau)
        r0 = cost.residuals(self.anchor)
        c = cost.cutoff
        self.weights = np.minimum(1.0, c / np.maximum(np.abs(r0), c))
        self.constants = float((huber_value(r0, c) - self.weights * r0 * r0).sum())

    def value(self, x) -> float:
        r = self.cost.residuals(x)
        d = np.asarray(x, dtype=float) - self.anchor
        return float(
            (self.weights * r * r).sum()
            + self.constants
            + 0.5 * self.strong_convexity * (d @ d)
        )

    def grad(self, x):
        r = self.cost.residuals(x)
        return 2.0 * self.cost.rows.T @ (self.weights * r) + self.strong_convexity * (
            np.asarray(x, float) - self.anchor
        )

    def solve_exact(self, linear, regularizer, feasible_set):
        if not (isinstance(regularizer, ZeroRegularizer) and isinstance(feasible_set, FullSpace)):
            return None
        tau = self.strong_convexity
        rows, b, w = self.cost.rows, self.cost.targets, self.weights
        v = tau * self.anchor - linear + 2.0 * rows.T @ (w * b)
        n, m = rows.shape
        if n < m:
            # rank-n update: solve through the small Gram system
            scaled = np.sqrt(2.0 * w)[:, np.newaxis] * rows
            small = tau * np.eye(n) + scaled @ scaled.T
            return (v - scaled.T @ np.linalg.solve(small, scaled @ v)) / tau
        return np.linalg.solve(2.0 * rows.T @ (w[:, np.newaxis] * rows) + tau * np.eye(m), v)


class LocalizationSurrogate(Surrogate):
    """Block-separable quadratic model of the squared-range localization cost.

    Per observed target, the quartic term is replaced by a convex quadratic
    whose gradient matches at the anchor; the proximal term covers every
    target block (observed or not) so the model stays uniformly strongly
    convex.
    """

    def __init__(self, cost: LocalizationAgentCost, anchor, tau: float):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.cost = cost
        self.anchor = np.asarray(anchor, dtype=float)
        self.strong_convexity = float(tau)
        s = cost.sensor
        self.curvature = 4.0 * np.outer(s, s) + 2.0 * (s @ s) * np.eye(2)
        a = self.anchor.reshape(cost.targets, 2)
        sq_anchor = (a * a).sum(axis=1)
        # per-target linear coefficient of the quadratic model
        self.slopes = (
            4.0 * (s @ s) * s[np.newaxis, :]
            - 4.0 * ((sq_anchor - cost.ranges))[:, np.newaxis] * (a - s)
            + 8.0 * (a @ s)[:, np.newaxis] * a
        )

    def _parts(self, x):
        xt = np.asarray(x, dtype=float).reshape(self.cost.targets, 2)
        at = self.anchor.reshape(self.cost.targets, 2)
        return xt, at

    def value(self, x) -> float:
        xt, at = self._parts(x)
        quad = (xt @ self.curvature * xt).sum(axis=1)
        lin = (self.slopes * (xt - at)).sum(axis=1)
        d = xt - at
        return float(
            (self.cost.mask * (quad - lin)).sum()
            + 0.5 * self.strong_convexity * (d * d).sum()
        )

    def grad(self, x):
        xt, at = self._parts(x)
        g = self.cost.mask[:, np.newaxis] * (2.0 * xt @ self.curvature - self.slopes)
        g = g + self.strong_convexity * (xt - at)
        return g.reshape(-1)

    def solve_exact(self, linear, regularizer, feasible_set):
        if not isinstance(regularizer, ZeroRegularizer):
            return None
        if not isinstance(feasible_set, (FullSpace, Box)):
            return None
        tau = self.strong_convexity
        t = self.cost.targets
        mask = self.cost.mask
        at = self.anchor.reshape(t, 2)
        pi = np.asarray(linear, dtype=float).reshape(t, 2)
        # per-target quadratic: 0.5 x' H x + c' x, all targets batched
        hess = 2.0 * mask[:, np.newaxis, np.newaxis] * self.curvature + tau * np.eye(2)
        coef = -mask[:, np.newaxis] * self.slopes - tau * at + pi
        det = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] * hess[:, 1, 0]
        free = np.empty((t, 2))
        free[:, 0] = (-coef[:, 0] * hess[:, 1, 1] + coef[:, 1] * hess[:, 0, 1]) / det
        free[:, 1] = (-coef[:, 1] * hess[:, 0, 0] + coef[:, 0] * hess[:, 1, 0]) / det
        if isinstance(feasible_set, FullSpace):
            return free.reshape(-1)
        lo = np.broadcast_to(feasible_set.lower, (2 * t,)).reshape(t, 2)
        hi = np.broadcast_to(feasible_set.upper, (2 * t,)).reshape(t, 2)
        inside = np.all((free >= lo) & (free <= hi), axis=1)
        if np.all(inside):
            return free.reshape(-1)

        def q_of(x):
            return 0.5 * (x[:, :, np.newaxis] * hess * x[:, np.newaxis, :]).sum(
                axis=(1, 2)
            ) + (coef * x).sum(axis=1)

        # edge candidates: fix one coordinate at a bound, minimize the other, clamp
        candidates = []
        for axis in (0, 1):
            other = 1 - axis
            for bound in (lo, hi):
                x = np.empty((t, 2))
                x[:, axis] = bound[:, axis]
                opt = -(coef[:, other] + hess[:, other, axis] * bound[:, axis]) / hess[
                    :, other, other
                ]
                x[:, other] = np.clip(opt, lo[:, other], hi[:, other])
                candidates.append(x)
        stack = np.stack(candidates)                      # (4, t, 2)
        values = np.stack([q_of(x) for x in candidates])  # (4, t)
        best = stack[values.argmin(axis=0), np.arange(t)]
        out = np.where(inside[:, np.newaxis], free, best)
        return out.reshape(-1)


# -- constructors matching the engine's builder protocol -----------------------


def linearization_surrogate(cost, anchor, tau: float, anchor_grad=None) -> Surrogate:
    return LinearizationSurrogate(cost, anchor, tau, anchor_grad)


def partial_linearization_surrogate(convex_cost, nonconvex_cost, anchor, tau: float) -> Surrogate:
    return PartialLinearizationSurrogate(convex_cost, nonconvex_cost, anchor, tau)


def convexification_surrogate(
    cost, block1, block2, anchor, tau: float, epsilon: float = 1e-8
) -> Surrogate:
    return BlockConvexificationSurrogate(cost, block1, block2, anchor, tau, epsilon)


def huber_sca_surrogate(cost: HuberAgentCost, anchor, tau: float) -> Surrogate:
    return HuberMajorizationSurrogate(cost, anchor, tau)


def localization_surrogate(cost: LocalizationAgentCost, anchor, tau: float) -> Surrogate:
    return LocalizationSurrogate(cost, anchor, tau)


def linearization_builder(tau: float):
    """Builder returning the plain-gradient surrogate at the given modulus."""

    def build(cost, anchor, anchor_grad=None):
        return LinearizationSurrogate(cost, anchor, tau, anchor_grad)

    return build


def huber_sca_builder(tau: float):
    def build(cost, anchor, anchor_grad=None):
        return HuberMajorizationSurrogate(cost, anchor, tau)

    return build


def localization_pl_builder(tau: float):
    def build(cost, anchor, anchor_grad=None):
        return LocalizationSurrogate(cost, anchor, tau)

    return build


SURROGATE_BUILDERS = {
    "linearization": linearization_builder,
    "huber-sca": huber_sca_builder,
    "localization-pl": localization_pl_builder,
}


# -- subproblem ------------------------------------------------------------------


class SubproblemSpec:
    """One agent's strongly convex subproblem."""

    def __init__(self, surrogate: Surrogate, linear, regularizer, feasible_set):
        self.surrogate = surrogate
        self.linear = np.asarray(linear, dtype=float)
        self.regularizer = regularizer
        self.feasible_set = feasible_set


def subproblem_residual(spec: SubproblemSpec, x) -> float:
    """Unit-step composite stationarity residual at ``x``."""
    x = np.asarray(x, dtype=float)
    g = spec.surrogate.grad(x) + spec.linear
    return float(np.linalg.norm(x - composite_step(x - g, spec.regularizer, spec.feasible_set, 1.0)))


def solve_subproblem(spec: SubproblemSpec, tol: float = 1e-10, force_generic: bool = False):
    """Minimize the subproblem; closed forms are used when available.

    ``force_generic`` bypasses the closed forms (used to cross-check them).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not force_generic:
        x = spec.surrogate.solve_exact(spec.linear, spec.regularizer, spec.feasible_set)
        if x is not None:
            return x
    return _accelerated_solve(spec, tol)


def _accelerated_solve(spec: SubproblemSpec, tol: float, max_iter: int = 10_000):
    sur, pi = spec.surrogate, spec.linear
    reg, fs = spec.regularizer, spec.feasible_set
    anchor = sur.anchor
    rng = np.random.default_rng(np.random.SeedSequence([0x5CA]))
    lips = sur.strong_convexity
    for _ in range(6):
        u = anchor + rng.standard_normal(anchor.shape)
        v = anchor + rng.standard_normal(anchor.shape)
        gap = np.linalg.norm(u - v)
        if gap > 0:
            lips = max(lips, np.linalg.norm(sur.grad(u) - sur.grad(v)) / gap)
    step = 1.0 / (lips + sur.strong_convexity)

    def objective(x):
        return sur.value(x) + pi @ (x - anchor) + reg.value(x)

    x = composite_step(anchor, reg, fs, step)
    z, t, best = x, 1.0, objective(x)
    residual = np.inf
    for _ in range(max_iter):
        x_new = composite_step(z - step * (sur.grad(z) + pi), reg, fs, step)
        g_new = sur.grad(x_new) + pi
        residual = float(np.linalg.norm(x_new - composite_step(x_new - g_new, reg, fs, 1.0)))
        if residual <= tol:
            return x_new
        val = objective(x_new)
        if val > best:  # restart the momentum on non-descent
            z, t = x_new, 1.0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x, best = x_new, min(best, val)
    raise SubproblemError(
        f"inner solver stalled at residual {residual:.3e} (target {tol:.0e})", residual
    )


# -- surrogate audits --------------------------------------------------------------


def anchor_consistency_error(surrogate: Surrogate, cost) -> float:
    """Max-norm gap between surrogate and cost gradients at the anchor."""
    return float(
        np.abs(surrogate.grad(surrogate.anchor) - cost.grad(surrogate.anchor)).max()
    )


def monotonicity_modulus(surrogate: Surrogate, pairs: int = 100, seed: int = 0, scale: float = 1.0) -> float:
    """Smallest sampled ratio ``(g(u)-g(v)).(u-v) / ||u-v||^2``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC2]))
    worst = np.inf
    a = surrogate.anchor
    for _ in range(pairs):
        u = a + scale * rng.standard_normal(a.shape)
        v = a + scale * rng.standard_normal(a.shape)
        d = u - v
        nd = d @ d
        if nd == 0:
            continue
        worst = min(worst, ((surrogate.grad(u) - surrogate.grad(v)) @ d) / nd)
    return float(worst)
