import numpy as np
import pytest

from sonata.problems import (
    Box,
    CallableCost,
    FullSpace,
    GenerationError,
    L1Regularizer,
    ZeroRegularizer,
    audit_gradients,
    build_huber_regression,
    build_localization,
    build_quadratic_oracle,
    gradient_fd_error,
    huber_derivative,
    huber_value,
    load_problem,
    sample_feasible,
    save_problem,
)


# -- huber loss ----------------------------------------------------------------


def test_huber_zero_residual():
    assert huber_value(0.0, 0.3) == 0.0


def test_huber_quadratic_branch():
    assert huber_value(0.1, 0.3) == pytest.approx(0.01)


def test_huber_linear_branch_and_knee_continuity():
    assert huber_value(1.0, 0.3) == pytest.approx(0.3 * (2.0 - 0.3))
    c = 0.3
    assert huber_value(c - 1e-12, c) == pytest.approx(huber_value(c + 1e-12, c), abs=1e-10)


def test_huber_derivative_matches_at_knee():
    c = 0.7
    h = 1e-7
    left = (huber_value(c, c) - huber_value(c - h, c)) / h
    right = (huber_value(c + h, c) - huber_value(c, c)) / h
    assert left == pytest.approx(2 * c, rel=1e-5)
    assert right == pytest.approx(2 * c, rel=1e-5)
    assert huber_derivative(-c, c) == pytest.approx(-2 * c)


def test_huber_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        huber_value(1.0, 0.0)


# -- regularizers and sets -------------------------------------------------------


def test_l1_prox_soft_threshold_and_weight_zero_identity():
    reg = L1Regularizer(2.0)
    x = np.array([3.0, -0.5, 0.1])
    assert reg.prox(x, 1.0) == pytest.approx([1.0, 0.0, 0.0])
    assert reg.prox(x, 0.0) == pytest.approx(x)


def test_prox_nonexpansive_sampled():
    rng = np.random.default_rng(0)
    reg = L1Regularizer(0.7)
    for _ in range(50):
        u, v = rng.standard_normal((2, 6))
        pu, pv = reg.prox(u, 0.9), reg.prox(v, 0.9)
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


def test_l1_convexity_midpoint_sampled():
    rng = np.random.default_rng(1)
    reg = L1Regularizer(1.3)
    for _ in range(50):
        u, v = rng.standard_normal((2, 5))
        mid = reg.value((u + v) / 2)
        assert mid <= (reg.value(u) + reg.value(v)) / 2 + 1e-12


def test_box_projection_idempotent_and_nonexpansive():
    rng = np.random.default_rng(2)
    box = Box(0.0, 1.0)
    for _ in range(50):
        u, v = 3 * rng.standard_normal((2, 4))
        pu = box.project(u)
        assert box.project(pu) == pytest.approx(pu)
        assert box.contains(pu)
        assert np.linalg.norm(pu - box.project(v)) <= np.linalg.norm(u - v) + 1e-12


def test_zero_regularizer_trivial():
    reg = ZeroRegularizer()
    x = np.array([1.0, -2.0])
    assert reg.value(x) == 0.0
    assert reg.prox(x, 5.0) == pytest.approx(x)


# -- huber regression builder -----------------------------------------------------


def test_huber_rows_are_unit_norm():
    p = build_huber_regression(1, agent_count=4, measurements=6, dimension=12)
    for a in p.metadata["data"].rows:
        assert np.abs(np.linalg.norm(a, axis=1) - 1.0).max() <= 1e-12


def test_huber_gradient_fd():
    p = build_huber_regression(2, agent_count=3, measurements=5, dimension=8)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.standard_normal(8)
        for cost in p.local_costs:
            assert gradient_fd_error(cost, x) <= 1e-5


def test_huber_noiseless_signal_is_stationary():
    p = build_huber_regression(
        3, agent_count=4, measurements=6, dimension=10, noise_sigma=0.0, cutoff=0.3
    )
    assert np.abs(p.smooth_grad(p.metadata["signal"])).max() == 0.0


def test_huber_signal_fixed_across_measurement_seeds():
    a = build_huber_regression(10, agent_count=3, measurements=4, dimension=6, signal_seed=99)
    b = build_huber_regression(11, agent_count=3, measurements=4, dimension=6, signal_seed=99)
    assert a.metadata["signal"] == pytest.approx(b.metadata["signal"], abs=0.0)
    assert not np.allclose(a.metadata["data"].targets[0], b.metadata["data"].targets[0])


def test_huber_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_huber_regression(0, agent_count=0)
    with pytest.raises(ValueError):
        build_huber_regression(0, noise_sigma=0.0)  # cutoff must then be explicit


# -- localization builder -----------------------------------------------------------


def test_localization_gradient_formula_and_fd():
    p = build_localization(5, agent_count=4, targets=3)
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, 6)
    for cost in p.local_costs:
        blocks = x.reshape(3, 2)
        diff = blocks - cost.sensor
        gap = cost.ranges - (diff * diff).sum(axis=1)
        manual = (-4.0 * (cost.mask * gap)[:, np.newaxis] * diff).reshape(-1)
        assert cost.grad(x) == pytest.approx(manual)
        assert gradient_fd_error(cost, x) <= 1e-5


def test_localization_empty_mask_zero_gradient():
    p = build_localization(6, agent_count=3, targets=2)
    cost = p.local_costs[0]
    cost.mask[:] = 0.0
    x = np.array([0.3, 0.4, 0.5, 0.6])
    assert cost.grad(x) == pytest.approx(np.zeros(4))
    assert cost.value(x) == 0.0


def test_localization_noiseless_truth_is_global_minimum():
    p = build_localization(7, agent_count=5, targets=2, noise_scale=0.0)
    truth = p.metadata["truth"]
    assert p.smooth_value(truth) == pytest.approx(0.0, abs=1e-24)
    rng = np.random.default_rng(5)
    for _ in range(10):
        assert p.smooth_value(sample_feasible(p, rng)) >= 0.0


def test_localization_every_target_observed():
    for seed in range(6):
        p = build_localization(seed, agent_count=6, targets=4)
        assert p.metadata["data"].mask.sum(axis=0).min() >= 1


def test_localization_mask_retry_exhaustion():
    with pytest.raises(GenerationError):
        build_localization(0, agent_count=1, targets=40, retry_budget=3)


# -- quadratic oracle ----------------------------------------------------------------


def test_oracle_single_agent_normal_equations():
    p = build_quadratic_oracle(8, agent_count=1, dimension=4)
    cost = p.local_costs[0]
    x_star, *_ = np.linalg.lstsq(cost.design, cost.offset, rcond=None)
    assert p.metadata["x_star"] == pytest.approx(x_star)
    assert np.abs(cost.grad(p.metadata["x_star"])).max() <= 1e-10


def test_oracle_stored_solution_is_stationary():
    p = build_quadratic_oracle(9, agent_count=6, dimension=5)
    assert np.abs(p.smooth_grad(p.metadata["x_star"])).max() <= 1e-10


def test_oracle_solution_matches_stacked_least_squares():
    p = build_quadratic_oracle(12, agent_count=5, dimension=4)
    stack = np.vstack([c.design for c in p.local_costs])
    rhs = np.concatenate([c.offset for c in p.local_costs])
    x_ls, *_ = np.linalg.lstsq(stack, rhs, rcond=None)
    assert p.metadata["x_star"] == pytest.approx(x_ls, abs=1e-10)


def test_oracle_l1_variant_satisfies_subdifferential_optimality():
    lam = 0.5
    p = build_quadratic_oracle(10, agent_count=4, dimension=6, l1_weight=lam)
    x = p.metadata["x_star"]
    g = p.smooth_grad(x)
    # independent check of 0 in the subdifferential, coordinate by coordinate
    for k in range(6):
        if abs(x[k]) > 1e-9:
            assert g[k] + lam * np.sign(x[k]) == pytest.approx(0.0, abs=1e-8)
        else:
            assert abs(g[k]) <= lam + 1e-8


def test_oracle_box_variant_projected_stationarity():
    p = build_quadratic_oracle(11, agent_count=4, dimension=5, box_halfwidth=0.2)
    x = p.metadata["x_star"]
    moved = p.feasible_set.project(x - p.smooth_grad(x))
    assert np.abs(x - moved).max() <= 1e-8
    assert p.feasible_set.contains(x)


def test_oracle_rejects_joint_variants():
    with pytest.raises(ValueError):
        build_quadratic_oracle(0, 2, 3, l1_weight=0.1, box_halfwidth=1.0)


# -- audits and serialization -----------------------------------------------------------


@pytest.mark.parametrize(
    "problem",
    [
        build_huber_regression(21, agent_count=3, measurements=5, dimension=7),
        build_localization(22, agent_count=4, targets=2),
        build_quadratic_oracle(23, agent_count=3, dimension=4),
    ],
    ids=["huber", "localization", "quadratic"],
)
@pytest.mark.filterwarnings("ignore::UserWarning")
def test_gradient_audit_twenty_points(problem):
    with np.errstate(all="raise"):
        worst = audit_gradients(problem, points=20, seed=1)
    assert worst <= 1e-5


def test_audit_warns_on_unbounded_gradient_without_bound():
    p = build_quadratic_oracle(24, agent_count=2, dimension=3)
    with pytest.warns(UserWarning):
        audit_gradients(p, points=2, seed=0)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_audit_catches_wrong_gradient():
    bad = CallableCost(lambda x: float(x @ x), lambda x: 3.0 * x)
    p = build_quadratic_oracle(25, agent_count=1, dimension=3)
    p.local_costs = [bad]
    with pytest.raises(AssertionError):
        audit_gradients(p, points=3, seed=0)


@pytest.mark.parametrize(
    "problem",
    [
        build_huber_regression(31, agent_count=3, measurements=4, dimension=5),
        build_localization(32, agent_count=3, targets=2),
        build_quadratic_oracle(33, agent_count=2, dimension=3, l1_weight=0.4),
        build_quadratic_oracle(34, agent_count=2, dimension=3, box_halfwidth=1.5),
    ],
    ids=["huber", "localization", "quadratic-l1", "quadratic-box"],
)
def test_problem_serialization_round_trip(problem, tmp_path):
    path = tmp_path / "problem.txt"
    save_problem(problem, path)
    loaded = load_problem(path)
    assert loaded.agent_count == problem.agent_count
    assert loaded.dimension == problem.dimension
    rng = np.random.default_rng(9)
    for _ in range(5):
        x = sample_feasible(problem, rng)
        assert loaded.smooth_value(x) == pytest.approx(problem.smooth_value(x), abs=0.0)
        assert loaded.smooth_grad(x) == pytest.approx(problem.smooth_grad(x), abs=0.0)
        assert loaded.regularizer.value(x) == pytest.approx(problem.regularizer.value(x))
        assert loaded.feasible_set.project(2 * x) == pytest.approx(
            problem.feasible_set.project(2 * x)
        )


def test_sample_feasible_respects_box():
    p = build_localization(35, agent_count=3, targets=2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert p.feasible_set.contains(sample_feasible(p, rng))
