"""Degree-distribution search with Nelder-Mead over softmax logits.

Each objective call simulates the scheme with a fixed seed (common random
numbers), turns the simulated PLR into the average AoI, the AVP at a
threshold, or the negative throughput, and hands the value to the simplex
search. Random restarts and a known baseline guard against poor local optima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import AoiInputs, aoi_violation_prob, average_aoi, throughput
from .metrics import NoEstimateError, estimate_plr
from .model import ConfigError, DegreeDistribution, SystemConfig, avoid_mask
from .sim import DEFAULT_WARMUP, Scheme, run_simulation

OBJECTIVES = ("aoi", "avp", "throughput")


# --------------------------------------------------------------------------
# parametrization


def logits_to_distribution(rows, max_degree: int | None = None, adaptive: bool = True, mask=None):
    """Softmax each logit row into a degree table.

    Args:
        rows: One logit vector per table row. With ``mask`` given, row ``b``
            holds one logit per allowed entry of mask row ``b``.
        max_degree: Table width minus one; defaults to the longest row.
        adaptive: Whether the table is per battery level.
        mask: Optional boolean matrix of allowed entries; others are fixed at 0.

    Returns:
        A :class:`DegreeDistribution`.
    """
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if len(rows) != mask.shape[0]:
            raise ValueError(f"expected {mask.shape[0]} logit rows, got {len(rows)}")
        width = mask.shape[1]
    else:
        width = max(len(r) for r in rows) if max_degree is None else max_degree + 1
    table = np.zeros((len(rows), width))
    for b, r in enumerate(rows):
        cols = np.flatnonzero(mask[b]) if mask is not None else np.arange(len(r))
        if len(cols) != len(r):
            raise ValueError(f"row {b}: {len(r)} logits for {len(cols)} free entries")
        z = np.exp(r - r.max())
        table[b, cols] = z / z.sum()
    return DegreeDistribution(table, adaptive=adaptive)


@dataclass(frozen=True)
class Parametrization:
    """Map between a flat search vector and a degree table."""

    mask: np.ndarray  # allowed entries, one row per table row
    adaptive: bool

    @classmethod
    def build(cls, config: SystemConfig, scheme: Scheme, adaptive: bool) -> "Parametrization":
        L = config.max_degree
        if scheme is Scheme.AVOID:
            if config.unlimited:
                raise ConfigError("AVOID needs a finite battery capacity")
            # AVOID ties the degree to the battery, so it is always adaptive
            return cls(avoid_mask(config.battery_capacity + 1, L), True)
        rows = config.num_battery_levels if adaptive else 1
        return cls(np.ones((rows, L + 1), dtype=bool), adaptive and rows > 1)

    @property
    def row_sizes(self):
        return [int(r.sum()) for r in self.mask]

    @property
    def dim(self) -> int:
        # single-entry rows are fixed point masses
        return sum(n for n in self.row_sizes if n > 1)

    def split(self, x):
        x = np.asarray(x, dtype=np.float64)
        rows, pos = [], 0
        for n in self.row_sizes:
            if n > 1:
                rows.append(x[pos : pos + n])
                pos += n
            else:
                rows.append(np.zeros(n))
        return rows

    def to_distribution(self, x) -> DegreeDistribution:
        return logits_to_distribution(self.split(x), mask=self.mask, adaptive=self.adaptive)

    def from_distribution(self, dist: DegreeDistribution, floor: float = 1e-6) -> np.ndarray:
        """Logits reproducing ``dist`` up to a probability floor on every free entry."""
        table = dist.expanded(self.mask.shape[0]) if dist.adaptive or self.adaptive else dist.table
        width = self.mask.shape[1]
        out = []
        for b, n in enumerate(self.row_sizes):
            if n <= 1:
                continue
            row = np.zeros(width)
            row[: table.shape[1]] = table[b][:width]
            p = np.maximum(row[self.mask[b]], floor)
            out.append(np.log(p / p.sum()))
        return np.concatenate(out) if out else np.zeros(0)


def baseline_distribution(config: SystemConfig, scheme: Scheme, adaptive: bool = False) -> DegreeDistribution:
    """Lambda(x) = x^min(3, max_degree), or x^min(b, 3) per battery level for AVOID."""
    L = config.max_degree
    if scheme is Scheme.AVOID:
        E = config.battery_capacity
        table = np.zeros((E + 1, L + 1))
        for b in range(E + 1):
            table[b, min(b, 3, L)] = 1.0
        return DegreeDistribution(table, adaptive=True)
    dist = DegreeDistribution.fixed(min(3, L), L)
    if adaptive and not config.unlimited:
        return DegreeDistribution(dist.expanded(config.num_battery_levels), adaptive=True)
    return dist


# --------------------------------------------------------------------------
# Nelder-Mead


@dataclass
class SimplexState:
    vertices: np.ndarray
    values: np.ndarray
    iteration: int = 0

    def sort(self):
        order = np.argsort(self.values, kind="stable")
        self.vertices = self.vertices[order]
        self.values = self.values[order]

    @property
    def diameter(self) -> float:
        return float(np.max(np.abs(self.vertices[1:] - self.vertices[0]))) if len(self.vertices) > 1 else 0.0

    @property
    def spread(self) -> float:
        if not np.all(np.isfinite(self.values)):
            return math.inf
        return float(self.values[-1] - self.values[0])


@dataclass(frozen=True)
class NelderMeadResult:
    x: np.ndarray
    value: float
    iterations: int
    evaluations: int


def nelder_mead(fn, x0, step=1.0, xatol=1e-4, fatol=1e-5, max_iter=None, max_evals=None,
                coefficients=(1.0, 2.0, 0.5, 0.5)) -> NelderMeadResult:
    """Minimise ``fn`` by the Nelder-Mead simplex method.

    Args:
        fn: Objective on 1-D float arrays. Non-finite values count as +inf.
        x0: Start point; the initial simplex adds ``step`` along each axis.
        xatol: Stop once every vertex is this close to the best (max norm).
        fatol: Stop once the value spread across vertices is below this.
        max_iter: Iteration cap, default ``200 * dim``.
        max_evals: Optional cap on objective calls.
        coefficients: Reflection, expansion, contraction and shrink factors.

    Returns:
        The best vertex ever evaluated and its value.
    """
    rho, chi, gamma, shrink = coefficients
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    n = len(x0)
    max_iter = 200 * max(n, 1) if max_iter is None else max_iter
    evals = 0
    best = [x0.copy(), math.inf]

    def f(x):
        nonlocal evals
        evals += 1
        v = float(fn(x))
        if not math.isfinite(v):
            v = math.inf
        if v < best[1]:
            best[0], best[1] = x.copy(), v
        return v

    def out_of_budget():
        return max_evals is not None and evals >= max_evals

    v0 = f(x0)
    if n == 0:
        return NelderMeadResult(x0, v0, 0, evals)
    verts = [x0]
    vals = [v0]
    for i in range(n):
        x = x0.copy()
        x[i] += step
        verts.append(x)
        vals.append(f(x))
    state = SimplexState(np.array(verts), np.array(vals))
    state.sort()
    while state.iteration < max_iter and not out_of_budget():
        if state.diameter < xatol or state.spread < fatol:
            break
        state.iteration += 1
        centroid = state.vertices[:-1].mean(axis=0)
        worst, worst_v = state.vertices[-1], state.values[-1]
        xr = centroid + rho * (centroid - worst)
        vr = f(xr)
        if vr < state.values[0]:
            xe = centroid + chi * (xr - centroid)
            ve = f(xe)
            if ve < vr:
                state.vertices[-1], state.values[-1] = xe, ve
            else:
                state.vertices[-1], state.values[-1] = xr, vr
        elif vr < state.values[-2]:
            state.vertices[-1], state.values[-1] = xr, vr
        else:
            if vr < worst_v:
                xc = centroid + gamma * (xr - centroid)
                vc = f(xc)
                accept = vc <= vr
            else:
                xc = centroid + gamma * (worst - centroid)
                vc = f(xc)
                accept = vc < worst_v
            if accept:
                state.vertices[-1], state.values[-1] = xc, vc
            else:
                for i in range(1, n + 1):
                    state.vertices[i] = state.vertices[0] + shrink * (state.vertices[i] - state.vertices[0])
                    state.values[i] = f(state.vertices[i])
        state.sort()
    return NelderMeadResult(best[0], best[1], state.iteration, evals)


# --------------------------------------------------------------------------
# simulation objective


@dataclass(frozen=True)
class OptimizationProblem:
    objective: str = "aoi"
    scheme: Scheme = Scheme.IDENTIFY
    adaptive: bool = False
    frames: int = 20_000
    restarts: int = 10
    seed: int = 0
    theta: float = 10_000
    warmup: int = DEFAULT_WARMUP
    final_frames: int = 100_000
    max_evals: int | None = 400
    energy_model: str = "frame_cap"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {', '.join(OBJECTIVES)}")
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if self.scheme is Scheme.UNLIMITED:
            raise ConfigError("optimization supports the avoid and identify schemes")
        if self.restarts < 0 or self.frames < 0:
            raise ConfigError("restarts and frames must be nonnegative")


def objective_value(config: SystemConfig, plr: float, objective: str, theta: float) -> float:
    """Objective at a given PLR; minimised, so throughput is negated."""
    inputs = AoiInputs.from_config(config, plr)
    if objective == "aoi":
        return average_aoi(inputs)
    if objective == "avp":
        return aoi_violation_prob(theta, inputs)
    return -throughput(config.load, plr)


def evaluate(config, dist, problem: OptimizationProblem, frames, seed):
    """Simulate ``dist`` and return ``(objective, plr)``; ``(inf, nan)`` without traffic."""
    if config.update_prob <= 0.0 or frames == 0:
        return math.inf, math.nan
    report = run_simulation(config, dist, problem.scheme, frames, problem.warmup, seed,
                            energy_model=problem.energy_model)
    try:
        plr = estimate_plr(report)
    except NoEstimateError:
        return math.inf, math.nan
    return objective_value(config, plr, problem.objective, problem.theta), plr


@dataclass
class RestartResult:
    start: str
    value: float
    evaluations: int
    table: list


@dataclass
class OptimizationResult:
    distribution: DegreeDistribution
    value: float
    final_value: float
    final_plr: float
    restarts: list = field(default_factory=list)
    evaluations: int = 0
    objective: str = "aoi"
    baseline_value: float = math.inf

    def normalized(self, config: SystemConfig, value=None) -> float:
        """AoI objectives divided by the number of devices, others as is."""
        v = self.final_value if value is None else value
        return v / config.num_devices if self.objective == "aoi" else v


def _run_restart(args):
    config, problem, param, start, x0, search_seed = args

    def fn(x):
        return evaluate(config, param.to_distribution(x), problem, problem.frames, search_seed)[0]

    res = nelder_mead(fn, x0, max_evals=problem.max_evals)
    dist = param.to_distribution(res.x)
    return RestartResult(start, res.value, res.evaluations, dist.table.tolist()), res.x


def optimize_degree_distribution(config: SystemConfig, problem: OptimizationProblem, jobs: int = 1):
    """Search the degree table minimising the problem's objective.

    Runs Nelder-Mead from the baseline table and from ``problem.restarts``
    standard-normal logit vectors, all with the same simulation seed, then
    re-simulates the winner with a fresh seed over ``problem.final_frames``.

    Returns:
        An :class:`OptimizationResult`; its ``value`` is the search value and
        ``final_value`` the re-evaluated one.
    """
    param = Parametrization.build(config, problem.scheme, problem.adaptive)
    baseline = baseline_distribution(config, problem.scheme, param.adaptive)
    seq = np.random.SeedSequence(problem.seed)
    init_seq, search_seq, final_seq = seq.spawn(3)
    search_seed = int(search_seq.generate_state(1)[0])
    final_seed = int(final_seq.generate_state(1)[0])
    init_rng = np.random.default_rng(init_seq)

    starts = [("baseline", param.from_distribution(baseline))]
    for k in range(problem.restarts):
        starts.append((f"random-{k}", init_rng.standard_normal(param.dim)))

    if config.update_prob <= 0.0:
        # no traffic: every table is equally (infinitely) bad
        return OptimizationResult(baseline, math.inf, math.inf, math.nan, [], 0, problem.objective, math.inf)

    tasks = [(config, problem, param, name, x0, search_seed) for name, x0 in starts]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_run_restart, tasks))
    else:
        outcomes = [_run_restart(t) for t in tasks]

    restarts = [r for r, _ in outcomes]
    best = min(range(len(outcomes)), key=lambda i: (restarts[i].value, i))
    best_dist = param.to_distribution(outcomes[best][1]) if param.dim else baseline
    value = restarts[best].value
    # the exact baseline (the softmax start only approaches it) stays a candidate
    baseline_value = evaluate(config, baseline, problem, problem.frames, search_seed)[0]
    if baseline_value <= value:
        best_dist, value = baseline, baseline_value
    final_value, final_plr = evaluate(config, best_dist, problem, problem.final_frames, final_seed)
    return OptimizationResult(
        best_dist,
        value,
        final_value,
        final_plr,
        restarts,
        sum(r.evaluations for r in restarts),
        problem.objective,
        baseline_value,
    )
