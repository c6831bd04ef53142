"""GP-UCB acquisition over tree-structured spaces.

The upper confidence bound ``mu + sqrt(beta) * sigma`` is maximized one
vertex at a time: every vertex's component posterior yields a low-dimensional
UCB surface over that vertex's own box, each is maximized independently
(embarrassingly parallel), per-path scores are the sums of the per-vertex
maxima along the path, and the best path's argmaxes are concatenated into the
next evaluation point.  Component means add exactly along a path, so the mean
part of the path score is exact; the summed component deviations are a
surrogate for the full posterior deviation.

``beta`` follows the adaptive confidence schedule: ``sqrt(beta_t)`` is the
inflated norm bound ``b(t) * g(t)^d * B0`` plus a mutual-information noise
term, with monotone inflation functions ``g`` (lengthscale deflation) and
``b`` (norm-bound growth).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .gp import GpModel, component_posterior_batch, posterior
from .tree_space import LinearizedPoint, linearize

__all__ = [
    "UcbSchedule",
    "Proposal",
    "constant_schedule",
    "log_schedule",
    "norm_bound",
    "beta",
    "mutual_information",
    "ucb",
    "propose",
    "select_schedule",
    "calibrate_log_gammas",
]

DEFAULT_NOISE_FLOOR = 1e-6


@dataclass(frozen=True)
class UcbSchedule:
    """Confidence-bound schedule parameters.

    ``g`` and ``b`` are monotone non-decreasing with ``g(0) = b(0) = 1``;
    ``d`` is the total dimension of the space (continuous plus categorical),
    the exponent on ``g(t)`` in the norm bound.
    """

    theta0: float
    B0: float
    delta: float
    g: object
    b: object
    d: int

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        for name, fn in (("g", self.g), ("b", self.b)):
            if abs(fn(0) - 1.0) > 1e-12:
                raise ValueError(f"{name}(0) must equal 1, got {fn(0)}")

    @property
    def adaptive(self) -> bool:
        return self.g(1) > 1.0 + 1e-12 or self.b(1) > 1.0 + 1e-12

    def lengthscale_cap(self, t: float) -> float:
        """theta_0 / g(t): the cap in the min rule for fitted lengthscales."""
        return self.theta0 / self.g(t)


def _one(_t: float) -> float:
    return 1.0


def constant_schedule(
    theta0: float = 1.0, B0: float = 1.0, delta: float = 0.1, d: int = 1
) -> UcbSchedule:
    """No adaptation: g = b = 1 for all t."""
    return UcbSchedule(theta0=theta0, B0=B0, delta=delta, g=_one, b=_one, d=d)


def log_schedule(
    gamma_g: float,
    gamma_b: float,
    theta0: float = 1.0,
    B0: float = 1.0,
    delta: float = 0.1,
    d: int = 1,
) -> UcbSchedule:
    """Logarithmic inflation: g(t) = 1 + gamma_g*log(1+t), likewise b.

    Grows slowly enough that the confidence term stays sublinear in t.
    """
    if gamma_g < 0 or gamma_b < 0:
        raise ValueError("gamma_g and gamma_b must be >= 0")
    return UcbSchedule(
        theta0=theta0,
        B0=B0,
        delta=delta,
        g=lambda t: 1.0 + gamma_g * math.log1p(t),
        b=lambda t: 1.0 + gamma_b * math.log1p(t),
        d=d,
    )


def norm_bound(schedule: UcbSchedule, t: float) -> float:
    """B_t = b(t) * g(t)^d * B0."""
    return schedule.b(t) * schedule.g(t) ** schedule.d * schedule.B0


def beta(schedule: UcbSchedule, t: float, info_gain: float, noise_std: float) -> float:
    """Squared confidence multiplier at iteration t.

    sqrt(beta_t) = B_t + 4 * sigma * sqrt(info_gain + 1 + ln(1/delta)).
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if info_gain < 0:
        raise ValueError(f"info_gain must be >= 0, got {info_gain}")
    root = norm_bound(schedule, t) + 4.0 * noise_std * math.sqrt(
        info_gain + 1.0 + math.log(1.0 / schedule.delta)
    )
    return root * root


def mutual_information(model: GpModel, noise_variance: float | None = None) -> float:
    """Information between the observations and the prior: half the
    log-determinant of I + K / sigma^2 over the current data.

    Requires homoscedastic positive noise; pass ``noise_variance`` to
    override the model's own (e.g. to floor a noiseless dataset).
    """
    if model.n == 0:
        return 0.0
    s2 = noise_variance if noise_variance is not None else model.homoscedastic_noise
    if s2 is None:
        raise ValueError("mutual information needs homoscedastic noise")
    if s2 <= 0:
        raise ValueError("mutual information undefined for zero noise; floor sigma^2")
    M = np.eye(model.n) + model.K / s2
    L = np.linalg.cholesky(M)
    return float(np.sum(np.log(np.diag(L))))


def ucb(model: GpModel, point: LinearizedPoint, beta_value: float) -> float:
    """mu + sqrt(beta) * sigma at a point."""
    if beta_value < 0:
        raise ValueError(f"beta must be >= 0, got {beta_value}")
    mean, var = posterior(model, point)
    return mean + math.sqrt(beta_value) * math.sqrt(var)


@dataclass(frozen=True)
class Proposal:
    """Outcome of one acquisition round.

    ``vertex_points``/``vertex_ucb`` hold every vertex's argmax and score;
    ``path_ucb[i]`` sums the scores along leaf i's path; ``values`` is the
    path-ordered continuous vector of the winning leaf and ``point`` its
    linearization.
    """

    vertex_points: dict
    vertex_ucb: dict
    path_ucb: np.ndarray
    chosen_leaf: int
    values: np.ndarray
    point: LinearizedPoint
    beta: float


def _sobol_starts(dim: int, lo: np.ndarray, hi: np.ndarray, budget: int) -> np.ndarray:
    m = max(1, math.ceil(math.log2(max(2, budget))))
    pts = qmc.Sobol(d=dim, scramble=False).random_base2(m)[:budget]
    return lo + pts * (hi - lo)


def _maximize_vertex_ucb(
    model: GpModel,
    vertex_id: str,
    sqrt_beta: float,
    n_starts: int,
    scan_budget: int,
) -> tuple[np.ndarray, float]:
    """Maximize the component UCB over one vertex's box.

    Deterministic: a fixed low-discrepancy scan picks the best ``n_starts``
    seeds for bounded local polishing.
    """
    vertex = model.kernel.spec.vertex(vertex_id)
    if vertex.dim == 0:
        means, variances = component_posterior_batch(model, vertex_id, np.zeros((1, 0)))
        return np.empty(0), float(means[0] + sqrt_beta * math.sqrt(variances[0]))

    lo = np.array([b[0] for b in vertex.bounds])
    hi = np.array([b[1] for b in vertex.bounds])

    def batch_score(V: np.ndarray) -> np.ndarray:
        means, variances = component_posterior_batch(model, vertex_id, V)
        return means + sqrt_beta * np.sqrt(variances)

    scan = _sobol_starts(vertex.dim, lo, hi, scan_budget)
    scores = batch_score(scan)
    order = np.argsort(-scores)[:n_starts]

    def neg_score(x: np.ndarray) -> float:
        return -float(batch_score(x[None, :])[0])

    best_x = scan[order[0]]
    best = float(scores[order[0]])
    for idx in order:
        res = minimize(
            neg_score,
            scan[idx],
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 60},
        )
        if -res.fun > best:
            best = -float(res.fun)
            best_x = np.clip(res.x, lo, hi)
    return best_x, best


def propose(
    model: GpModel,
    schedule: UcbSchedule,
    t: int,
    n_starts: int = 5,
    scan_budget: int = 32,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    parallel: bool = False,
) -> Proposal:
    """Run one round of per-vertex UCB maximization and pick the best path.

    Per-vertex optimizations are independent; with ``parallel=True`` they run
    on a thread pool and are gathered in vertex order, so results are
    identical to the serial loop.  Ties between equal path scores resolve to
    the lowest path index.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if scan_budget < 1 or n_starts < 1:
        raise ValueError("optimizer budget must allow at least one evaluation")
    index = model.kernel.index

    s2 = model.homoscedastic_noise
    s2 = noise_floor if s2 is None or s2 < noise_floor else s2
    info = mutual_information(model, noise_variance=s2)
    beta_value = beta(schedule, t, info, math.sqrt(s2))
    sqrt_beta = math.sqrt(beta_value)

    order = list(index.bfs_order)
    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(order))) as pool:
            results = list(
                pool.map(
                    lambda vid: _maximize_vertex_ucb(model, vid, sqrt_beta, n_starts, scan_budget),
                    order,
                )
            )
    else:
        results = [
            _maximize_vertex_ucb(model, vid, sqrt_beta, n_starts, scan_budget)
            for vid in order
        ]
    vertex_points = {vid: res[0] for vid, res in zip(order, results)}
    vertex_ucb = {vid: res[1] for vid, res in zip(order, results)}

    path_ucb = np.array(
        [sum(vertex_ucb[vid] for vid in path) for path in index.leaf_paths]
    )
    chosen = int(np.argmax(path_ucb))  # first max: lowest path index wins ties
    values = np.concatenate(
        [vertex_points[vid] for vid in index.leaf_paths[chosen]]
        or [np.empty(0)]
    )
    point = linearize(model.kernel.spec, index, chosen, values)
    return Proposal(
        vertex_points=vertex_points,
        vertex_ucb=vertex_ucb,
        path_ucb=path_ucb,
        chosen_leaf=chosen,
        values=values,
        point=point,
        beta=beta_value,
    )


def select_schedule(
    reference,
    info_gains,
    noise_std: float,
    B0: float = 1.0,
    delta: float = 0.1,
    d: int = 1,
    split: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Inflation factors that make the regret estimate track a reference.

    The cumulative-regret estimator at iteration t is
    ``sqrt(C1 * t * beta_t * I_t)`` with ``C1 = 8 / log(1 + sigma^-2)``.
    For each t we solve for the norm-bound multiplier m >= 1 that makes the
    estimate equal ``reference(t)`` and split its log between b (fraction
    ``split``) and g (remainder, divided by the dimension d in the exponent):
    ``b = m**split`` and ``g = m**((1-split)/d)``.

    Where the reference sits at or below the no-adaptation estimate the
    multiplier clips to 1 (nothing to adapt).  The returned sequences are
    made monotone non-decreasing with a running maximum, as the schedule
    contract requires.
    """
    if not 0.0 <= split <= 1.0:
        raise ValueError(f"split must be in [0, 1], got {split}")
    info_gains = np.asarray(info_gains, dtype=float)
    T = info_gains.size
    if noise_std <= 0:
        return np.ones(T), np.ones(T)
    C1 = 8.0 / math.log1p(noise_std**-2)
    ln_term = math.log(1.0 / delta)

    m = np.ones(T)
    for k in range(T):
        t = k + 1
        I_t = info_gains[k]
        denom = C1 * t * I_t
        if denom <= 0:
            continue
        noise_term = 4.0 * noise_std * math.sqrt(I_t + 1.0 + ln_term)
        target_root_beta = float(reference(t)) / math.sqrt(denom)
        m[k] = max(1.0, (target_root_beta - noise_term) / B0)

    m = np.maximum.accumulate(m)
    b_vals = m**split
    g_vals = m ** ((1.0 - split) / d)
    return g_vals, b_vals


def calibrate_log_gammas(g_vals, b_vals) -> tuple[float, float]:
    """Least-squares gamma coefficients fitting 1 + gamma*log(1+t) to
    realized schedule values (t = 1..T)."""
    g_vals = np.asarray(g_vals, dtype=float)
    b_vals = np.asarray(b_vals, dtype=float)
    t = np.arange(1, g_vals.size + 1)
    basis = np.log1p(t)
    denom = float(basis @ basis)
    if denom == 0:
        return 0.0, 0.0
    gamma_g = max(0.0, float(basis @ (g_vals - 1.0)) / denom)
    gamma_b = max(0.0, float(basis @ (b_vals - 1.0)) / denom)
    return gamma_g, gamma_b
