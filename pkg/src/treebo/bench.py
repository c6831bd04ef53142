"""Benchmark objectives, optimization loops, and statistical comparison.

Three optimizers share one harness: the structure-aware GP loop
(``addtree``), an independent-GP-per-leaf baseline (``independent``), and
uniform random search (``random``).  All three consume the same
initialization seed stream, so runs with equal seeds are paired.  Traces are
line-delimited JSON with a versioned header carrying the full config and its
digest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from . import gp
from .acquisition import constant_schedule, log_schedule, propose
from .kernels import AddTreeKernel
from .tree_space import (
    PathIndex,
    TreeSpec,
    VertexSpec,
    build_path_index,
    linearize,
    make_tree_spec,
)

__all__ = [
    "Objective",
    "BoConfig",
    "IterationRecord",
    "RunTrace",
    "RegressionRecord",
    "ComparisonReport",
    "jenatton_objective",
    "quadratic_objective",
    "random_tree_objective",
    "random_tree_spec",
    "sample_uniform_point",
    "sample_branch_walk",
    "run_bo",
    "run_regression_study",
    "aggregate_regression",
    "wilcoxon_one_sided",
    "build_comparison",
    "render_comparison",
    "config_digest",
    "write_trace",
    "read_trace",
]

logger = logging.getLogger(__name__)

TRACE_FORMAT = "treebo-trace"
TRACE_VERSION = 1

ALGORITHMS = ("addtree", "independent", "random")


@dataclass(frozen=True)
class Objective:
    """A black-box function on a tree-structured space.

    ``fn(leaf, values)`` evaluates one configuration (values are path-ordered
    for that leaf).  ``known_optimum`` is the global minimum when available.
    """

    name: str
    spec: TreeSpec
    index: PathIndex
    fn: object
    known_optimum: float | None = None

    def __call__(self, leaf: int, values) -> float:
        return float(self.fn(int(leaf), np.asarray(values, dtype=float)))


def jenatton_objective() -> Objective:
    """The Jenatton synthetic benchmark: a depth-3 binary tree, four leaves.

    The root carries no continuous variable; each mid-level vertex carries a
    shared variable r in [0, 1]; each leaf carries x in [-1, 1].  Leaf values
    are x^2 + offset + r with offsets 0.1, 0.2, 0.3, 0.4, so the global
    minimum is 0.1 at the first leaf with x = 0, r = 0.
    """
    vertices = [
        VertexSpec("root", 0, ()),
        VertexSpec("n0", 1, ((0.0, 1.0),)),
        VertexSpec("n1", 1, ((0.0, 1.0),)),
        VertexSpec("leaf00", 1, ((-1.0, 1.0),)),
        VertexSpec("leaf01", 1, ((-1.0, 1.0),)),
        VertexSpec("leaf10", 1, ((-1.0, 1.0),)),
        VertexSpec("leaf11", 1, ((-1.0, 1.0),)),
    ]
    edges = [
        ("root", 0, "n0"),
        ("root", 1, "n1"),
        ("n0", 0, "leaf00"),
        ("n0", 1, "leaf01"),
        ("n1", 0, "leaf10"),
        ("n1", 1, "leaf11"),
    ]
    spec = make_tree_spec(vertices, edges)
    index = build_path_index(spec)
    offsets = (0.1, 0.2, 0.3, 0.4)

    def fn(leaf: int, values: np.ndarray) -> float:
        r, x = values  # path order: mid-level variable, then leaf variable
        return x * x + offsets[leaf] + r

    return Objective(
        name="jenatton", spec=spec, index=index, fn=fn, known_optimum=0.1
    )


def random_tree_spec(
    seed: int,
    max_depth: int = 3,
    max_fanout: int = 3,
    max_dim: int = 3,
    p_zero_dim: float = 0.25,
) -> TreeSpec:
    """A random tree shape for property tests; dim-0 vertices included."""
    rng = np.random.default_rng(seed)
    vertices: list[VertexSpec] = []
    edges: list[tuple[str, int, str]] = []
    counter = [0]

    def add_vertex(depth: int) -> str:
        vid = f"v{counter[0]}"
        counter[0] += 1
        dim = 0 if rng.random() < p_zero_dim else int(rng.integers(1, max_dim + 1))
        bounds = []
        for _ in range(dim):
            lo = -1.0 - rng.random()
            hi = 1.0 + rng.random()
            bounds.append((lo, hi))
        vertices.append(VertexSpec(vid, dim, tuple(bounds)))
        if depth < max_depth:
            fanout = int(rng.integers(0, max_fanout + 1))
            for lab in range(fanout):
                child = add_vertex(depth + 1)
                edges.append((vid, lab, child))
        return vid

    add_vertex(1)
    return make_tree_spec(vertices, edges)


def quadratic_objective(spec: TreeSpec, seed: int, name: str | None = None) -> Objective:
    """A seeded additive quadratic-bowl objective on an existing space.

    Every vertex contributes a convex bowl with its minimum strictly inside
    the box plus a non-negative offset (a dim-0 vertex contributes only the
    offset), so the objective decomposes additively along paths by
    construction and the global optimum has a closed form: the minimum over
    leaves of the summed per-vertex offsets.
    """
    index = build_path_index(spec)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(37,)))
    bowls: dict[str, tuple[np.ndarray, np.ndarray, float]] = {}
    for vid in index.bfs_order:
        v = spec.vertex(vid)
        lo = np.array([b[0] for b in v.bounds])
        hi = np.array([b[1] for b in v.bounds])
        weights = rng.uniform(0.5, 2.0, size=v.dim)
        center = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo)) if v.dim else lo
        offset = float(rng.uniform(0.0, 1.0))
        bowls[vid] = (weights, center, offset)

    def fn(leaf: int, values: np.ndarray) -> float:
        total = 0.0
        taken = 0
        for vid in index.leaf_paths[leaf]:
            w, c, o = bowls[vid]
            chunk = values[taken : taken + w.size]
            total += o + float(w @ (chunk - c) ** 2)
            taken += w.size
        return total

    optimum = min(sum(bowls[vid][2] for vid in path) for path in index.leaf_paths)
    return Objective(
        name=name or f"quadratic-{seed}",
        spec=spec,
        index=index,
        fn=fn,
        known_optimum=float(optimum),
    )


def random_tree_objective(depth: int, fanout: int, dims: int, seed: int) -> Objective:
    """A seeded quadratic-bowl objective on a random perfect tree.

    ``depth`` counts levels (depth 1 is a single vertex, an ordinary
    box-constrained quadratic); every vertex carries ``dims`` variables.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
    vertices: list[VertexSpec] = []
    edges: list[tuple[str, int, str]] = []
    counter = [0]

    def add_vertex(level: int) -> str:
        vid = f"v{counter[0]}"
        counter[0] += 1
        bounds = tuple((-1.0 - rng.random(), 1.0 + rng.random()) for _ in range(dims))
        vertices.append(VertexSpec(vid, dims, bounds))
        if level < depth:
            for lab in range(fanout):
                child = add_vertex(level + 1)
                edges.append((vid, lab, child))
        return vid

    add_vertex(1)
    spec = make_tree_spec(vertices, edges)
    return quadratic_objective(spec, seed, name=f"random-tree-{seed}")


def sample_uniform_point(index: PathIndex, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Uniform leaf choice, then uniform values in the leaf's box."""
    leaf = int(rng.integers(index.n_leaves))
    bounds = index.leaf_bounds(leaf)
    values = np.array([rng.uniform(lo, hi) for lo, hi in bounds])
    return leaf, values


def sample_branch_walk(index: PathIndex, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Walk from the root choosing branches uniformly (Bernoulli(1/2) for a
    binary tree), then draw values uniformly; the data scheme of the
    regression study."""
    spec = index.spec
    cur = spec.root_id
    while True:
        children = spec.children(cur)
        if not children:
            break
        cur = children[int(rng.integers(len(children)))][1]
    leaf = index.leaf_ids.index(cur)
    bounds = index.leaf_bounds(leaf)
    values = np.array([rng.uniform(lo, hi) for lo, hi in bounds])
    return leaf, values


# -- run configuration and traces ---------------------------------------------


@dataclass(frozen=True)
class BoConfig:
    """Knobs shared by every optimizer run.

    ``n_init=None`` resolves to 4 plus the space's continuous dimension.
    ``gamma_g``/``gamma_b`` of zero mean no schedule adaptation (constant
    norm bound); fitted lengthscales are always capped by the min rule at
    ``theta0 / g(t)``, which stops evidence maximization from flattening a
    barely-observed region into false certainty.  The fitting bounds here
    are deliberately tighter than the library defaults: scales bounded away
    from zero keep an exploration bonus alive on unvisited branches.
    """

    n_init: int | None = None
    restarts: int = 3
    theta0: float = 1.0
    B0: float = 1.0
    delta: float = 0.1
    gamma_g: float = 0.02
    gamma_b: float = 0.3
    reference_exponent: float = 0.9
    noise_variance: float = 1e-8
    noise_floor: float = 1e-6
    acq_starts: int = 5
    acq_scan: int = 32
    kernel_kind: str = "se"
    zero_dim: str = "constant"
    fit_noise: bool = False
    tie_scales: bool = True
    lengthscale_bounds: tuple = (0.05, 20.0)
    scale_bounds: tuple = (0.05, 50.0)

    def resolve_n_init(self, spec: TreeSpec) -> int:
        return self.n_init if self.n_init is not None else 4 + spec.continuous_dimension

    def schedule(self, d: int):
        if self.gamma_g > 0 or self.gamma_b > 0:
            return log_schedule(
                self.gamma_g, self.gamma_b,
                theta0=self.theta0, B0=self.B0, delta=self.delta, d=d,
            )
        return constant_schedule(theta0=self.theta0, B0=self.B0, delta=self.delta, d=d)

    def fit(self, kernel, data, rng, t: float = 0.0, schedule=None) -> "gp.FitResult":
        """One hyperparameter refit under this config's policy.

        The min-rule lengthscale cap applies only inside the optimization
        loop (when a schedule is passed); plain regression fits are uncapped.
        """
        return gp.fit_hyperparameters(
            kernel,
            data,
            restarts=self.restarts,
            rng=rng,
            lengthscale_bounds=self.lengthscale_bounds,
            scale_bounds=self.scale_bounds,
            fit_noise=self.fit_noise,
            lengthscale_cap=None if schedule is None else schedule.lengthscale_cap(t),
        )


@dataclass(frozen=True)
class IterationRecord:
    t: int
    leaf: int
    values: tuple
    y: float
    best: float
    beta: float | None
    wall_time: float


@dataclass
class RunTrace:
    meta: dict
    records: list = field(default_factory=list)

    @property
    def incumbents(self) -> np.ndarray:
        return np.array([r.best for r in self.records])


def config_digest(config: dict) -> str:
    """Digest of the canonical JSON form; recorded in every trace header."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class TraceWriter:
    """Streams one run's records to a JSONL file, header first.

    Flushes per record so an aborted run leaves a valid partial trace.
    """

    def __init__(self, path, meta: dict):
        self._fh = open(path, "w")
        header = {"format": TRACE_FORMAT, "version": TRACE_VERSION, "kind": "header"}
        header.update(meta)
        self._fh.write(json.dumps(header, sort_keys=True) + "\n")
        self._fh.flush()

    def record(self, rec: IterationRecord) -> None:
        body = {"kind": "iteration"}
        body.update(asdict(rec))
        body["values"] = list(rec.values)
        self._fh.write(json.dumps(body, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def write_trace(path, trace: RunTrace) -> None:
    writer = TraceWriter(path, trace.meta)
    try:
        for rec in trace.records:
            writer.record(rec)
    finally:
        writer.close()


def read_trace(path) -> RunTrace:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path}: not a trace file (missing header)")
    header = lines[0]
    if header.get("format") != TRACE_FORMAT:
        raise ValueError(f"{path}: unknown trace format {header.get('format')!r}")
    meta = {k: v for k, v in header.items() if k not in ("format", "version", "kind")}
    records = [
        IterationRecord(
            t=rec["t"],
            leaf=rec["leaf"],
            values=tuple(rec["values"]),
            y=rec["y"],
            best=rec["best"],
            beta=rec["beta"],
            wall_time=rec["wall_time"],
        )
        for rec in lines[1:]
        if rec.get("kind") == "iteration"
    ]
    return RunTrace(meta=meta, records=records)


# -- the optimization loops ----------------------------------------------------


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))


def _fit_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13,)))


def _study_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(29,)))


def _chain_space(spec: TreeSpec, index: PathIndex, leaf: int) -> tuple[TreeSpec, PathIndex]:
    """Single-path copy of one leaf's subspace: the per-leaf baseline's view."""
    path = index.leaf_paths[leaf]
    vertices = [
        VertexSpec(vid, spec.vertex(vid).dim, spec.vertex(vid).bounds) for vid in path
    ]
    edges = [(path[k], 0, path[k + 1]) for k in range(len(path) - 1)]
    chain = make_tree_spec(vertices, edges)
    return chain, build_path_index(chain)


def run_bo(
    objective: Objective,
    algorithm: str,
    iterations: int,
    seed: int,
    config: BoConfig | None = None,
    trace_path=None,
) -> RunTrace:
    """Minimize the objective for a fixed budget and return the trace.

    All algorithms draw their initialization phase from the same seed stream,
    so traces with equal seeds are paired across algorithms.  The GP loops
    maximize the confidence bound of the negated objective (minimization).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    config = config or BoConfig()

    meta_config = dict(asdict(config))
    meta_config.update(
        objective=objective.name, algorithm=algorithm,
        iterations=iterations, seed=seed,
    )
    # canonical JSON form so an in-memory trace equals its file round trip
    meta_config = json.loads(json.dumps(meta_config))
    meta = {
        "algorithm": algorithm,
        "seed": seed,
        "objective": objective.name,
        "config": meta_config,
        "config_digest": config_digest(meta_config),
    }
    trace = RunTrace(meta=meta)
    writer = TraceWriter(trace_path, meta) if trace_path else None

    spec, index = objective.spec, objective.index
    n_init = config.resolve_n_init(spec)
    rng_init = _init_rng(seed)
    rng_fit = _fit_rng(seed)
    schedule = config.schedule(spec.total_dimension)

    # state for addtree
    kernel = AddTreeKernel.default(
        spec, index, kind=config.kernel_kind, zero_dim=config.zero_dim,
        tied_scales=config.tie_scales,
    )
    data = gp.Dataset.create([], [], noise=config.noise_variance)

    # state for independent: one chain space + dataset per leaf
    chains = None
    if algorithm == "independent":
        chains = [_chain_space(spec, index, leaf) for leaf in range(index.n_leaves)]
        chain_kernels = [
            AddTreeKernel.default(
                c, ci, kind=config.kernel_kind, zero_dim=config.zero_dim,
                tied_scales=config.tie_scales,
            )
            for c, ci in chains
        ]
        chain_data = [
            gp.Dataset.create([], [], noise=config.noise_variance)
            for _ in range(index.n_leaves)
        ]

    best = np.inf
    try:
        for t in range(1, iterations + 1):
            t_start = time.perf_counter()
            beta_value = None

            if algorithm == "random" or t <= n_init:
                leaf, values = sample_uniform_point(index, rng_init)
            elif algorithm == "addtree":
                if len(data) >= 2:
                    kernel = config.fit(kernel, data, rng_fit, t, schedule).kernel
                model = gp.fit(kernel, _negated(data))
                prop = propose(
                    model, schedule, t,
                    n_starts=config.acq_starts, scan_budget=config.acq_scan,
                    noise_floor=config.noise_floor,
                )
                leaf, values, beta_value = prop.chosen_leaf, prop.values, prop.beta
            else:  # independent
                candidates = []
                for li, (chain, chain_index) in enumerate(chains):
                    cdata = chain_data[li]
                    ckern = chain_kernels[li]
                    if len(cdata) >= 2:
                        ckern = config.fit(ckern, cdata, rng_fit, t, schedule).kernel
                        chain_kernels[li] = ckern
                    cmodel = gp.fit(ckern, _negated(cdata))
                    csched = config.schedule(chain.total_dimension)
                    prop = propose(
                        cmodel, csched, t,
                        n_starts=config.acq_starts, scan_budget=config.acq_scan,
                        noise_floor=config.noise_floor,
                    )
                    candidates.append((float(prop.path_ucb[0]), li, prop))
                _, leaf, prop = max(candidates, key=lambda c: (c[0], -c[1]))
                values, beta_value = prop.values, prop.beta

            y = objective(leaf, values)
            best = min(best, y)

            point = linearize(spec, index, leaf, values)
            data = data.extended(point, y, config.noise_variance)
            if algorithm == "independent":
                chain, chain_index = chains[leaf]
                cpoint = linearize(chain, chain_index, 0, values)
                chain_data[leaf] = chain_data[leaf].extended(
                    cpoint, y, config.noise_variance
                )

            rec = IterationRecord(
                t=t,
                leaf=int(leaf),
                values=tuple(float(v) for v in values),
                y=float(y),
                best=float(best),
                beta=None if beta_value is None else float(beta_value),
                wall_time=time.perf_counter() - t_start,
            )
            trace.records.append(rec)
            if writer:
                writer.record(rec)
    finally:
        if writer:
            writer.close()
    return trace


def _negated(data: gp.Dataset) -> gp.Dataset:
    """Minimization runs the UCB machinery on -f."""
    return gp.Dataset(points=data.points, targets=-data.targets, noise=data.noise)


# -- regression study ------------------------------------------------------------


@dataclass(frozen=True)
class RegressionRecord:
    method: str
    n_train: int
    seed: int
    mse: float


def run_regression_study(
    objective: Objective,
    train_sizes,
    test_size: int = 50,
    seeds=range(10),
    config: BoConfig | None = None,
) -> list[RegressionRecord]:
    """Fit the shared-kernel GP and per-leaf GPs on identical data streams.

    Per seed, one stream of branch-walk samples provides nested training
    prefixes; a held-out set of ``test_size`` points scores mean squared
    error of the posterior-mean predictions.
    """
    if test_size < 1:
        raise ValueError(f"test_size must be >= 1, got {test_size}")
    config = config or BoConfig()
    spec, index = objective.spec, objective.index
    sizes = sorted(set(int(n) for n in train_sizes))
    n_max = max(sizes)
    records: list[RegressionRecord] = []

    chains = [_chain_space(spec, index, leaf) for leaf in range(index.n_leaves)]

    for seed in seeds:
        rng = _study_rng(seed)
        rng_fit = _fit_rng(seed)
        test = [sample_branch_walk(index, rng) for _ in range(test_size)]
        train = [sample_branch_walk(index, rng) for _ in range(n_max)]
        y_test = np.array([objective(lf, vals) for lf, vals in test])
        y_train = np.array([objective(lf, vals) for lf, vals in train])
        test_points = [linearize(spec, index, lf, vals) for lf, vals in test]

        for n in sizes:
            # shared-kernel GP over the full space
            if n == 0:
                preds = np.zeros(test_size)
            else:
                dset = gp.Dataset.create(
                    [linearize(spec, index, lf, vals) for lf, vals in train[:n]],
                    y_train[:n],
                    noise=config.noise_variance,
                )
                kernel = AddTreeKernel.default(
                    spec, index, kind=config.kernel_kind, zero_dim=config.zero_dim,
                    tied_scales=config.tie_scales,
                )
                result = config.fit(kernel, dset, rng_fit)
                model = gp.fit(result.kernel, dset)
                preds = np.array([gp.posterior(model, p)[0] for p in test_points])
            records.append(
                RegressionRecord("addtree", n, seed, float(np.mean((preds - y_test) ** 2)))
            )

            # one GP per leaf on its own chain space
            preds = np.zeros(test_size)
            for li, (chain, chain_index) in enumerate(chains):
                rows = [k for k in range(n) if train[k][0] == li]
                test_rows = [k for k in range(test_size) if test[k][0] == li]
                if not test_rows:
                    continue
                if rows:
                    cdset = gp.Dataset.create(
                        [linearize(chain, chain_index, 0, train[k][1]) for k in rows],
                        y_train[rows],
                        noise=config.noise_variance,
                    )
                    ckern = AddTreeKernel.default(
                        chain, chain_index,
                        kind=config.kernel_kind, zero_dim=config.zero_dim,
                        tied_scales=config.tie_scales,
                    )
                    result = config.fit(ckern, cdset, rng_fit)
                    cmodel = gp.fit(result.kernel, cdset)
                    for k in test_rows:
                        cp = linearize(chain, chain_index, 0, test[k][1])
                        preds[k] = gp.posterior(cmodel, cp)[0]
                # no training data on this leaf: prior mean 0 stands
            records.append(
                RegressionRecord(
                    "independent", n, seed, float(np.mean((preds - y_test) ** 2))
                )
            )
    return records


def aggregate_regression(records: list[RegressionRecord]) -> dict:
    """Median MSE per (method, n_train)."""
    table: dict[tuple[str, int], list[float]] = {}
    for rec in records:
        table.setdefault((rec.method, rec.n_train), []).append(rec.mse)
    return {key: float(np.median(vals)) for key, vals in sorted(table.items())}


# -- statistics --------------------------------------------------------------------


def _signed_rank_counts(n: int) -> np.ndarray:
    """counts[s] = number of subsets of {1..n} with rank sum s."""
    max_sum = n * (n + 1) // 2
    counts = np.zeros(max_sum + 1, dtype=np.float64)
    counts[0] = 1.0
    for k in range(1, n + 1):
        counts[k:] += counts[:-k].copy()
    return counts


def wilcoxon_one_sided(a, b) -> float:
    """One-sided signed-rank p-value for the alternative "a exceeds b".

    Zero differences are discarded.  The exact null distribution is used for
    up to 25 untied pairs; beyond that (or with tied magnitudes) a normal
    approximation with tie correction applies.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 5:
        raise ValueError(f"need at least 5 pairs, got {a.size}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        raise ValueError("all differences are zero; test undefined")
    n = diffs.size
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())

    has_ties = np.unique(np.abs(diffs)).size != n
    if n <= 25 and not has_ties:
        counts = _signed_rank_counts(n)
        w = int(round(w_plus))
        return float(counts[w:].sum() / 2.0**n)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = (w_plus - mean) / np.sqrt(var)
    return float(norm.sf(z))


# -- comparison reports --------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Incumbent statistics and paired tests at iterations of interest.

    ``p_values[(a, b)][t]`` is the one-sided p for "a is better (lower) than
    b at iteration t" over seed-paired incumbents, or None when the test is
    undefined (all paired differences zero).
    """

    algorithms: list
    seeds: list
    iterations: list
    median_incumbent: dict
    mean_incumbent: dict
    p_values: dict


def build_comparison(traces: list[RunTrace], iterations) -> ComparisonReport:
    """Group traces by algorithm, pair them by seed, and run the tests."""
    by_algo: dict[str, dict[int, RunTrace]] = {}
    for tr in traces:
        by_algo.setdefault(tr.meta["algorithm"], {})[int(tr.meta["seed"])] = tr
    algorithms = sorted(by_algo)
    if len(algorithms) < 2:
        raise ValueError(f"need traces from >= 2 algorithms, got {algorithms}")
    seed_sets = {algo: frozenset(d) for algo, d in by_algo.items()}
    if len(set(seed_sets.values())) != 1:
        raise ValueError(f"seed sets differ across algorithms: {dict(seed_sets)}")
    seeds = sorted(next(iter(seed_sets.values())))
    iterations = [int(t) for t in iterations]

    def incumbent_at(tr: RunTrace, t: int) -> float:
        if t < 1 or t > len(tr.records):
            raise ValueError(
                f"iteration {t} outside trace of length {len(tr.records)}"
            )
        return tr.records[t - 1].best

    median_incumbent: dict = {}
    mean_incumbent: dict = {}
    for algo in algorithms:
        median_incumbent[algo] = {}
        mean_incumbent[algo] = {}
        for t in iterations:
            vals = np.array([incumbent_at(by_algo[algo][s], t) for s in seeds])
            median_incumbent[algo][t] = float(np.median(vals))
            mean_incumbent[algo][t] = float(np.mean(vals))

    p_values: dict = {}
    for a in algorithms:
        for b in algorithms:
            if a == b:
                continue
            p_values[(a, b)] = {}
            for t in iterations:
                av = np.array([incumbent_at(by_algo[a][s], t) for s in seeds])
                bv = np.array([incumbent_at(by_algo[b][s], t) for s in seeds])
                try:
                    # "a better than b" at a minimization task: b - a > 0
                    p = wilcoxon_one_sided(bv, av)
                except ValueError:
                    p = None
                p_values[(a, b)][t] = p
    return ComparisonReport(
        algorithms=algorithms,
        seeds=seeds,
        iterations=iterations,
        median_incumbent=median_incumbent,
        mean_incumbent=mean_incumbent,
        p_values=p_values,
    )


def render_comparison(report: ComparisonReport) -> str:
    """Plain-text table of medians and pairwise one-sided p-values."""
    lines = []
    head = "median incumbent".ljust(24) + "".join(f"t={t}".rjust(14) for t in report.iterations)
    lines.append(head)
    for algo in report.algorithms:
        row = algo.ljust(24)
        row += "".join(
            f"{report.median_incumbent[algo][t]:14.6g}" for t in report.iterations
        )
        lines.append(row)
    lines.append("")
    lines.append("one-sided p (row better than column)")
    for a in report.algorithms:
        for b in report.algorithms:
            if a == b:
                continue
            row = f"{a} > {b}".ljust(24)
            for t in report.iterations:
                p = report.p_values[(a, b)][t]
                row += ("undefined".rjust(14) if p is None else f"{p:14.4g}")
            lines.append(row)
    return "\n".join(lines)
