"""Experiment harness: configs, presets, deterministic Monte-Carlo batches.

Configs are flat ``key = value`` sections in plain text.  One master seed
drives everything; per-run seeds come from a splitmix-style derivation so
adding runs never perturbs earlier ones.  Outputs are per-run CSV traces, an
aggregate CSV, and (optionally) a rendered figure.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import digraph, engine, mixing, variants
from .metrics import RunRecord
from .problems import (
    ProblemInstance,
    build_huber_regression,
    build_localization,
    build_quadratic_oracle,
    sample_feasible,
)
from .surrogates import SURROGATE_BUILDERS

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """One splitmix64 scramble of a 64-bit value."""
    z = (value + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, index: int) -> int:
    """Seed for stream ``index``: pure in ``(master, index)``."""
    return splitmix64((int(master) + (int(index) + 1) * _GOLDEN) & _MASK)


class ConfigError(ValueError):
    """Invalid experiment configuration; all violations are listed."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"- {v}" for v in self.violations))


PROBLEMS = ("huber", "localization", "quadratic")
GRAPH_KINDS = ("cycle-random", "symmetric-random", "replay")
VARIANTS = (
    "sonata",
    "sonata-next",
    "sonata-l",
    "aug-dgm",
    "diging",
    "push-diging",
    "add-opt",
    "subgradient-push",
)
_NEEDS_DOUBLY_STOCHASTIC = ("sonata-next", "aug-dgm", "diging")
_NEEDS_STATIC_GRAPH = ("aug-dgm", "add-opt")
_NEEDS_CONSTANT_STEP = ("aug-dgm", "diging", "add-opt", "push-diging")
_USES_SURROGATE = ("sonata", "sonata-next")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, validated against the module contracts."""

    name: str = "experiment"
    problem: str = "quadratic"
    problem_params: dict = field(default_factory=dict)
    problem_seed: int | None = None
    graph_kind: str = "cycle-random"
    graph_params: dict = field(default_factory=dict)
    connectivity_window: int = 1
    mixing_rule: str = "push-sum"
    variant: str = "sonata"
    direction: str = "atc"
    surrogate: str = "linearization"
    tau: float = 1.0
    schedule_kind: str = "polynomial"
    schedule_params: dict = field(default_factory=lambda: {"alpha0": 0.1, "beta": 1.0})
    iterations: int = 1000
    monte_carlo: int = 1
    seed: int = 1
    termination_j: float | None = None
    termination_d: float | None = None
    out_dir: str = "out"
    svg: bool = False


_SECTION_KEYS = {
    "problem": {"name", "seed", "agents", "dimension", "measurements", "noise_sigma",
                "targets", "noise_scale", "l1_weight", "box_halfwidth", "cutoff"},
    "graph": {"kind", "extra_edges", "file", "static", "connectivity_window"},
    "mixing": {"rule"},
    "algorithm": {"variant", "direction", "surrogate", "tau"},
    "schedule": {"kind", "alpha0", "beta", "mu", "alpha"},
    "run": {"iterations", "monte_carlo", "seed", "termination_j", "termination_d"},
    "output": {"directory", "svg"},
}

_PROBLEM_PARAM_KEYS = {
    "huber": {"agents", "dimension", "measurements", "noise_sigma", "cutoff"},
    "localization": {"agents", "targets", "noise_scale"},
    "quadratic": {"agents", "dimension", "l1_weight", "box_halfwidth"},
}


def validate_config(cfg: ExperimentConfig) -> list:
    """All contract violations of a config (empty when it is runnable)."""
    bad = []
    if cfg.problem not in PROBLEMS:
        bad.append(f"unknown problem {cfg.problem!r}; choose from {PROBLEMS}")
    if cfg.graph_kind not in GRAPH_KINDS:
        bad.append(f"unknown graph kind {cfg.graph_kind!r}; choose from {GRAPH_KINDS}")
    if cfg.mixing_rule not in mixing.WEIGHT_RULES:
        bad.append(f"unknown mixing rule {cfg.mixing_rule!r}")
    if cfg.variant not in VARIANTS:
        bad.append(f"unknown variant {cfg.variant!r}; choose from {VARIANTS}")
    if cfg.direction not in ("atc", "cta"):
        bad.append("direction must be 'atc' or 'cta'")
    if cfg.variant in _USES_SURROGATE and cfg.surrogate not in SURROGATE_BUILDERS:
        bad.append(f"unknown surrogate {cfg.surrogate!r}")
    if cfg.tau <= 0:
        bad.append("tau must be positive")
    if cfg.schedule_kind not in engine.SCHEDULES:
        bad.append(f"unknown schedule {cfg.schedule_kind!r}")
    else:
        try:
            engine.SCHEDULES[cfg.schedule_kind](**cfg.schedule_params)
        except (TypeError, ValueError) as exc:
            bad.append(f"schedule: {exc}")
    if cfg.iterations < 1:
        bad.append("iterations must be at least 1")
    if cfg.monte_carlo < 1:
        bad.append("monte_carlo must be at least 1")
    if cfg.connectivity_window < 0:
        bad.append("connectivity_window must be nonnegative (0 disables the check)")
    if cfg.problem in _PROBLEM_PARAM_KEYS:
        extra = set(cfg.problem_params) - _PROBLEM_PARAM_KEYS[cfg.problem]
        if extra:
            bad.append(f"problem keys {sorted(extra)} do not apply to {cfg.problem!r}")

    constrained = cfg.problem == "localization" or (
        cfg.problem == "quadratic" and cfg.problem_params.get("box_halfwidth") is not None
    )
    composite = cfg.problem == "quadratic" and cfg.problem_params.get("l1_weight", 0) > 0
    if cfg.direction == "cta" and constrained and cfg.variant in ("sonata", "sonata-next"):
        bad.append("combine-then-adapt updates cannot run on constrained problems")
    if cfg.variant in _NEEDS_DOUBLY_STOCHASTIC:
        if cfg.mixing_rule == "push-sum":
            bad.append(f"{cfg.variant} needs doubly stochastic weights; push-sum is not")
        if cfg.graph_kind == "cycle-random":
            bad.append(f"{cfg.variant} needs a symmetric graph; use kind = symmetric-random")
    if cfg.variant in _NEEDS_STATIC_GRAPH and not cfg.graph_params.get("static", False):
        bad.append(f"{cfg.variant} requires a static graph (set static = true)")
    if cfg.variant in _NEEDS_CONSTANT_STEP and cfg.schedule_kind != "constant":
        bad.append(f"{cfg.variant} uses a constant step (set schedule kind = constant)")
    if cfg.variant in ("push-diging", "subgradient-push") and cfg.mixing_rule != "push-sum":
        bad.append(f"{cfg.variant} is defined over push-sum weights")
    if cfg.variant in ("sonata-l", "push-diging", "diging", "aug-dgm", "add-opt",
                       "subgradient-push") and (constrained or composite):
        bad.append(f"{cfg.variant} applies only to smooth unconstrained problems")
    if cfg.graph_kind == "replay" and not cfg.graph_params.get("file"):
        bad.append("replay graphs need file = <path>")
    return bad


def _to_int(raw, where, bad):
    try:
        return int(raw)
    except ValueError:
        bad.append(f"{where}: expected an integer, got {raw!r}")
        return 0


def _to_float(raw, where, bad):
    try:
        return float(raw)
    except ValueError:
        bad.append(f"{where}: expected a number, got {raw!r}")
        return 0.0


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the text config format; raise ConfigError listing
    every violation found."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    bad = []
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            bad.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in _SECTION_KEYS[section]:
                bad.append(f"unknown key {key!r} in [{section}]")
    cfg = ExperimentConfig()
    p = parser["problem"] if parser.has_section("problem") else {}
    if "name" in p:
        cfg.problem = p["name"]
    if "seed" in p:
        cfg.problem_seed = _to_int(p["seed"], "[problem] seed", bad)
    for key in ("agents", "dimension", "measurements", "targets"):
        if key in p:
            cfg.problem_params[key] = _to_int(p[key], f"[problem] {key}", bad)
    for key in ("noise_sigma", "noise_scale", "l1_weight", "box_halfwidth", "cutoff"):
        if key in p:
            cfg.problem_params[key] = _to_float(p[key], f"[problem] {key}", bad)
    g = parser["graph"] if parser.has_section("graph") else {}
    if "kind" in g:
        cfg.graph_kind = g["kind"]
    if "extra_edges" in g:
        cfg.graph_params["extra_edges"] = _to_int(g["extra_edges"], "[graph] extra_edges", bad)
    if "file" in g:
        cfg.graph_params["file"] = g["file"]
    if "static" in g:
        cfg.graph_params["static"] = g.getboolean("static")
    if "connectivity_window" in g:
        cfg.connectivity_window = _to_int(g["connectivity_window"], "[graph] connectivity_window", bad)
    if parser.has_section("mixing") and "rule" in parser["mixing"]:
        cfg.mixing_rule = parser["mixing"]["rule"]
    a = parser["algorithm"] if parser.has_section("algorithm") else {}
    if "variant" in a:
        cfg.variant = a["variant"]
    if "direction" in a:
        cfg.direction = a["direction"]
    if "surrogate" in a:
        cfg.surrogate = a["surrogate"]
    if "tau" in a:
        cfg.tau = _to_float(a["tau"], "[algorithm] tau", bad)
    s = parser["schedule"] if parser.has_section("schedule") else {}
    if s:
        cfg.schedule_kind = s.get("kind", cfg.schedule_kind)
        cfg.schedule_params = {}
        for key in ("alpha0", "beta", "mu", "alpha"):
            if key in s:
                cfg.schedule_params[key] = _to_float(s[key], f"[schedule] {key}", bad)
    r = parser["run"] if parser.has_section("run") else {}
    if "iterations" in r:
        cfg.iterations = _to_int(r["iterations"], "[run] iterations", bad)
    if "monte_carlo" in r:
        cfg.monte_carlo = _to_int(r["monte_carlo"], "[run] monte_carlo", bad)
    if "seed" in r:
        cfg.seed = _to_int(r["seed"], "[run] seed", bad)
    for key, attr in (("termination_j", "termination_j"), ("termination_d", "termination_d")):
        if key in r:
            val = _to_float(r[key], f"[run] {key}", bad)
            setattr(cfg, attr, None if val <= 0 else val)
    o = parser["output"] if parser.has_section("output") else {}
    if "directory" in o:
        cfg.out_dir = o["directory"]
    if "svg" in o:
        cfg.svg = parser["output"].getboolean("svg")
    bad.extend(validate_config(cfg))
    if bad:
        raise ConfigError(bad)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- presets -----------------------------------------------------------------------


def preset(name: str) -> ExperimentConfig:
    """Tuned configurations for the bundled experiments."""
    if name == "quadratic-oracle":
        return ExperimentConfig(
            name=name,
            problem="quadratic",
            problem_params={"agents": 10, "dimension": 5},
            variant="sonata",
            surrogate="linearization",
            tau=1.0,
            schedule_kind="polynomial",
            schedule_params={"alpha0": 0.1, "beta": 1.0},
            iterations=5000,
            monte_carlo=1,
            termination_j=1e-6,
            termination_d=1e-8,
            out_dir=f"out-{name}",
        )
    if name in ("huber-sca", "huber-lin"):
        sca = name == "huber-sca"
        return ExperimentConfig(
            name=name,
            problem="huber",
            problem_params={"agents": 30, "dimension": 200, "measurements": 20,
                            "noise_sigma": 0.1},
            variant="sonata",
            surrogate="huber-sca" if sca else "linearization",
            tau=1.5 if sca else 2.0,
            schedule_kind="recursive",
            schedule_params={"alpha0": 0.1, "mu": 0.01},
            iterations=500,
            monte_carlo=20,
            out_dir=f"out-{name}",
        )
    if name in ("localization-lin", "localization-pl"):
        pl = name == "localization-pl"
        return ExperimentConfig(
            name=name,
            problem="localization",
            problem_params={"agents": 30, "targets": 5},
            variant="sonata",
            surrogate="localization-pl" if pl else "linearization",
            tau=5.0 if pl else 7.0,
            schedule_kind="recursive",
            schedule_params={"alpha0": 0.1, "mu": 1e-4},
            iterations=400,
            monte_carlo=20,
            out_dir=f"out-{name}",
        )
    raise ValueError(f"unknown preset {name!r}")


PRESETS = ("huber-sca", "huber-lin", "localization-lin", "localization-pl", "quadratic-oracle")

# push benchmark step parameters reported alongside the regression experiment
PUSH_BENCHMARK_SCHEDULE = {"alpha0": 0.5, "mu": 0.01}


# -- building blocks ----------------------------------------------------------------


def build_problem(cfg: ExperimentConfig, run_index: int) -> ProblemInstance:
    base = cfg.seed if cfg.problem_seed is None else cfg.problem_seed
    pk = derive_seed(base, 1000 + run_index)
    params = dict(cfg.problem_params)
    if cfg.problem == "huber":
        return build_huber_regression(
            seed=pk,
            agent_count=params.get("agents", 30),
            measurements=params.get("measurements", 20),
            dimension=params.get("dimension", 200),
            noise_sigma=params.get("noise_sigma", 0.1),
            cutoff=params.get("cutoff"),
            signal_seed=base,  # the true signal stays fixed across Monte-Carlo runs
        )
    if cfg.problem == "localization":
        return build_localization(
            seed=pk,
            agent_count=params.get("agents", 30),
            targets=params.get("targets", 5),
            noise_scale=params.get("noise_scale", 1.0),
        )
    return build_quadratic_oracle(
        seed=pk,
        agent_count=params.get("agents", 10),
        dimension=params.get("dimension", 5),
        l1_weight=params.get("l1_weight", 0.0),
        box_halfwidth=params.get("box_halfwidth"),
    )


def build_graphs(cfg: ExperimentConfig, run_index: int, agent_count: int) -> digraph.DigraphSequence:
    gseed = derive_seed(cfg.seed, 2000 + run_index)
    extra = cfg.graph_params.get("extra_edges", 1)
    static = cfg.graph_params.get("static", False)
    if cfg.graph_kind == "cycle-random":
        if static:
            return digraph.static_sequence(
                digraph.rotating_cycle_digraph(agent_count, 0, gseed, extra)
            )
        return digraph.rotating_cycle_sequence(agent_count, gseed, extra)
    if cfg.graph_kind == "symmetric-random":
        if static:
            return digraph.static_sequence(
                digraph.symmetric_ring_random_digraph(agent_count, 0, gseed, extra)
            )
        return digraph.symmetric_ring_random_sequence(agent_count, gseed, extra)
    seq = digraph.load_sequence(cfg.graph_params["file"])
    slots = seq.horizon
    return digraph.DigraphSequence(seq.vertex_count, lambda n: seq[n % slots])


def _draw_x0(problem: ProblemInstance, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7]))
    return np.vstack([sample_feasible(problem, rng) for _ in range(problem.agent_count)])


def _make_schedule(cfg: ExperimentConfig):
    return engine.SCHEDULES[cfg.schedule_kind](**cfg.schedule_params)


def run_single(cfg: ExperimentConfig, run_index: int, record_states: bool = False) -> RunRecord:
    """Execute one Monte-Carlo run of the configured experiment."""
    problem = build_problem(cfg, run_index)
    graphs = build_graphs(cfg, run_index, problem.agent_count)
    if cfg.connectivity_window > 0:
        windows = max(1, min(20, cfg.iterations // cfg.connectivity_window))
        if not digraph.check_b_connectivity(graphs, cfg.connectivity_window, windows):
            raise ValueError(
                f"graph sequence is not strongly connected over windows of "
                f"{cfg.connectivity_window} slots"
            )
    x0 = _draw_x0(problem, derive_seed(cfg.seed, 3000 + run_index))
    rule = mixing.WEIGHT_RULES[cfg.mixing_rule]
    schedule = _make_schedule(cfg)
    if cfg.variant == "sonata":
        builder = SURROGATE_BUILDERS[cfg.surrogate](cfg.tau)
        config = engine.IterationConfig(
            surrogate_builder=builder,
            schedule=schedule,
            max_iterations=cfg.iterations,
            direction=cfg.direction,
            termination_j=cfg.termination_j,
            termination_d=cfg.termination_d,
            record_states=record_states,
        )
        return engine.run(problem, graphs, rule, config, x0=x0)
    if cfg.variant == "sonata-next":
        builder = SURROGATE_BUILDERS[cfg.surrogate](cfg.tau)
        return variants.run_sonata_next(
            problem, graphs, rule, builder, schedule, cfg.iterations, x0,
            direction=cfg.direction, record_states=record_states,
        )
    if cfg.variant == "sonata-l":
        return variants.run_sonata_l(
            problem, graphs, rule, schedule, cfg.iterations, x0,
            direction=cfg.direction, record_states=record_states,
        )
    if cfg.variant == "aug-dgm":
        return variants.run_aug_dgm(
            problem, graphs[0], rule, schedule.step(0), cfg.iterations, x0,
            record_states=record_states,
        )
    if cfg.variant == "diging":
        return variants.run_diging(
            problem, graphs, rule, schedule.step(0), cfg.iterations, x0,
            record_states=record_states,
        )
    if cfg.variant == "push-diging":
        return variants.run_push_diging(
            problem, graphs, schedule.step(0), cfg.iterations, x0, record_states=record_states
        )
    if cfg.variant == "add-opt":
        return variants.run_add_opt(
            problem, graphs[0], rule, schedule.step(0), cfg.iterations, x0,
            record_states=record_states,
        )
    return variants.run_subgradient_push(
        problem, graphs, schedule, cfg.iterations, x0, record_states=record_states
    )


# -- aggregation --------------------------------------------------------------------


@dataclass
class AggregateTrace:
    """Per-iteration Monte-Carlo means; shorter runs are padded by carrying
    their final values (the padded count is flagged)."""

    n: np.ndarray
    j_mean: np.ndarray
    d_mean: np.ndarray
    u_mean: np.ndarray
    run_count: int
    failed_count: int = 0
    padded_count: int = 0

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n,J_mean,D_mean,U_mean\n")
            for k in range(self.n.size):
                fh.write(
                    f"{int(self.n[k])},{self.j_mean[k]!r},{self.d_mean[k]!r},{self.u_mean[k]!r}\n"
                )


def aggregate(records) -> AggregateTrace:
    records = [r for r in records if r.iterations]
    if not records:
        raise ValueError("no completed runs to aggregate")
    length = max(len(r.iterations) for r in records)
    padded = 0
    series = {"J": [], "D": [], "U_zbar": []}
    for r in records:
        for key, rows in series.items():
            vals = r.series(key)
            if vals.size < length:
                vals = np.concatenate([vals, np.full(length - vals.size, vals[-1])])
            rows.append(vals)
        if len(r.iterations) < length:
            padded += 1
    return AggregateTrace(
        n=np.arange(length),
        j_mean=np.vstack(series["J"]).mean(axis=0),
        d_mean=np.vstack(series["D"]).mean(axis=0),
        u_mean=np.vstack(series["U_zbar"]).mean(axis=0),
        run_count=len(records),
        padded_count=padded,
    )


def write_figure(trace: AggregateTrace, path):
    """Render the optimality and consensus curves to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_j, ax_d) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax_j.semilogy(trace.n, np.maximum(trace.j_mean, 1e-300))
    ax_j.set_ylabel("optimality J")
    ax_j.grid(True, which="both", alpha=0.3)
    ax_d.semilogy(trace.n, np.maximum(trace.d_mean, 1e-300))
    ax_d.set_ylabel("consensus error D")
    ax_d.set_xlabel("iteration")
    ax_d.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> AggregateTrace:
    """Run the Monte-Carlo batch, write per-run and aggregate CSVs.

    Individual failed runs are recorded (partial traces kept) and skipped in
    the aggregate; the experiment only fails if every run does.
    """
    bad = validate_config(cfg)
    if bad:
        raise ConfigError(bad)
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, failed = [], 0
    for k in range(cfg.monte_carlo):
        try:
            record = run_single(cfg, k)
        except engine.EngineError as exc:
            record = exc.record
            failed += 1
        record.to_csv(out / f"run_{k}.csv")
        records.append(record)
    complete = [r for r in records if r.error is None]
    if not complete:
        raise RuntimeError("all Monte-Carlo runs failed; see per-run CSVs")
    trace = aggregate(complete)
    trace.failed_count = failed
    trace.to_csv(out / "aggregate.csv")
    if cfg.svg:
        write_figure(trace, out / "figure.svg")
    return trace


def apply_overrides(cfg: ExperimentConfig, seed=None, runs=None, iters=None,
                    variant=None, out=None, svg=None) -> ExperimentConfig:
    """CLI-style overrides on top of a parsed config or preset."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if runs is not None:
        changes["monte_carlo"] = runs
    if iters is not None:
        changes["iterations"] = iters
    if variant is not None:
        changes["variant"] = variant
    if out is not None:
        changes["out_dir"] = out
    if svg is not None:
        changes["svg"] = svg
    return replace(cfg, **changes)
