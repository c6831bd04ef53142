"""Exact GP regression with the additive tree kernel.

Inference follows the standard zero-mean GP equations on the linearized
points.  Two structural shortcuts come from the tree:

* **Row selection.**  For a query, only training rows whose paths share a
  kernel-contributing vertex with the query path can have nonzero
  cross-covariance; the tree structure further guarantees those rows are
  decoupled from the rest, so the posterior computed on the selected subset
  equals the full-matrix posterior exactly.  One factorization is cached per
  query leaf (selection depends only on the leaf).

* **Component posteriors.**  The kernel is a sum of per-vertex terms, so each
  vertex has its own latent component.  Its conditional mean/variance given
  all observations uses the cross-covariance restricted to that vertex's
  term, masked by path membership.  Component means along a query's path sum
  exactly to the full posterior mean; variances do not add (components are
  correlated under the posterior).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .kernels import AddTreeKernel, BaseKernelParams, stack_points
from .tree_space import LinearizedPoint

__all__ = [
    "Dataset",
    "GpModel",
    "SelectionView",
    "FactorizationError",
    "FitResult",
    "fit",
    "posterior",
    "component_posterior",
    "log_marginal_likelihood",
    "fit_hyperparameters",
    "apply_lengthscale_cap",
]

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG2PI = np.log(2.0 * np.pi)


class FactorizationError(RuntimeError):
    """Gram factorization failed even after maximal jitter escalation."""


@dataclass
class Dataset:
    """Observations: linearized points, targets, per-observation noise variance."""

    points: list[LinearizedPoint]
    targets: np.ndarray
    noise: np.ndarray

    @classmethod
    def create(cls, points, targets, noise=0.0) -> "Dataset":
        targets = np.asarray(targets, dtype=float).ravel()
        n = len(points)
        noise_vec = np.broadcast_to(np.asarray(noise, dtype=float), (n,)).copy()
        if targets.size != n:
            raise ValueError(f"{n} points but {targets.size} targets")
        if np.any(noise_vec < 0):
            raise ValueError("noise variances must be >= 0")
        return cls(points=list(points), targets=targets, noise=noise_vec)

    def __len__(self) -> int:
        return len(self.points)

    def extended(self, point: LinearizedPoint, target: float, noise: float) -> "Dataset":
        return Dataset(
            points=self.points + [point],
            targets=np.append(self.targets, target),
            noise=np.append(self.noise, noise),
        )


@dataclass
class SelectionView:
    """Training rows relevant to one query leaf, with their factorization.

    ``rows`` indexes the selected observations; ``chol``/``alpha`` factor the
    selected subsystem.  When every row is selected the full factorization is
    reused unchanged.
    """

    leaf: int
    rows: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray


def _cholesky_with_jitter(K_y: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    Jitter starts at JITTER_START times the mean diagonal and escalates by
    decades up to JITTER_MAX times the mean diagonal before giving up.
    """
    n = K_y.shape[0]
    if n == 0:
        return np.empty((0, 0)), 0.0
    try:
        return np.linalg.cholesky(K_y), 0.0
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(K_y)))
    base = mean_diag if mean_diag > 0 else 1.0
    jitter = JITTER_START * base
    while jitter <= JITTER_MAX * base:
        try:
            L = np.linalg.cholesky(K_y + jitter * np.eye(n))
            logger.debug("cholesky needed jitter %.3e", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        "Gram matrix not positive definite after jitter escalation; "
        "degenerate hyperparameters or duplicate points with zero noise"
    )


@dataclass
class GpModel:
    """A fitted GP: kernel, data, cached factorizations.

    Treat instances as immutable after :func:`fit`; posterior queries are
    safe to issue concurrently.  ``clamp_count`` tracks how often a
    numerically negative predictive variance was clamped to zero.
    """

    kernel: AddTreeKernel
    data: Dataset
    X: np.ndarray
    leaves: np.ndarray
    K: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    leaf_shares: np.ndarray
    clamp_count: int = 0
    _views: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def homoscedastic_noise(self) -> float | None:
        """Shared noise variance, or None if per-observation noise differs."""
        if self.n == 0:
            return 0.0
        first = float(self.data.noise[0])
        if np.all(self.data.noise == first):
            return first
        return None

    def selection_view(self, leaf: int) -> SelectionView:
        view = self._views.get(leaf)
        if view is not None:
            return view
        rows = np.flatnonzero(self.leaf_shares[self.leaves, leaf]) if self.n else np.empty(0, int)
        if self.n and rows.size == self.n:
            view = SelectionView(leaf=leaf, rows=rows, chol=self.chol, alpha=self.alpha)
        elif rows.size == 0:
            view = SelectionView(
                leaf=leaf, rows=rows, chol=np.empty((0, 0)), alpha=np.empty(0)
            )
        else:
            K_sub = self.K[np.ix_(rows, rows)] + np.diag(self.data.noise[rows])
            L, _ = _cholesky_with_jitter(K_sub)
            a = cho_solve((L, True), self.data.targets[rows])
            view = SelectionView(leaf=leaf, rows=rows, chol=L, alpha=a)
        self._views[leaf] = view
        return view


def fit(kernel: AddTreeKernel, data: Dataset) -> GpModel:
    """Factor the noisy Gram matrix and cache the dual weights.

    An empty dataset yields a prior-serving model.  Raises
    :class:`FactorizationError` when the matrix stays indefinite through the
    jitter schedule.
    """
    X, leaves = stack_points(data.points)
    if len(data) == 0:
        X = np.empty((0, kernel.index.width))
        leaves = np.empty(0, dtype=np.int64)
    K = kernel.gram_matrix(X) if len(data) else np.empty((0, 0))
    K_y = K + np.diag(data.noise) if len(data) else K
    L, jitter = _cholesky_with_jitter(K_y)
    alpha = cho_solve((L, True), data.targets) if len(data) else np.empty(0)
    model = GpModel(
        kernel=kernel,
        data=data,
        X=X,
        leaves=leaves,
        K=K,
        chol=L,
        alpha=alpha,
        jitter=jitter,
        leaf_shares=kernel.leaf_shares(),
    )
    if jitter:
        logger.debug("fit: n=%d jitter=%.3e", len(data), jitter)
    return model


def posterior(model: GpModel, query: LinearizedPoint) -> tuple[float, float]:
    """Predictive mean and variance at a query point.

    Computed on the query leaf's selection view; the variance is clamped to
    ``[0, k(x, x)]``.
    """
    q = query.slots[None, :]
    k_diag = float(model.kernel.diag(q)[0])
    view = model.selection_view(query.active_leaf)
    if view.rows.size == 0:
        return 0.0, k_diag
    k_star = model.kernel.gram_matrix(q, model.X[view.rows])[0]
    mean = float(k_star @ view.alpha)
    v = solve_triangular(view.chol, k_star, lower=True)
    var = k_diag - float(v @ v)
    if var < 0:
        model.clamp_count += 1
        var = 0.0
    return mean, min(var, k_diag)


def posterior_full(model: GpModel, query: LinearizedPoint) -> tuple[float, float]:
    """Predictive distribution via the full, unselected factorization.

    Reference path used to validate selection equivalence; prefer
    :func:`posterior`.
    """
    q = query.slots[None, :]
    k_diag = float(model.kernel.diag(q)[0])
    if model.n == 0:
        return 0.0, k_diag
    k_star = model.kernel.gram_matrix(q, model.X)[0]
    mean = float(k_star @ model.alpha)
    v = solve_triangular(model.chol, k_star, lower=True)
    var = k_diag - float(v @ v)
    return mean, max(0.0, min(var, k_diag))


def component_posterior_batch(
    model: GpModel, vertex_id: str, V: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-vertex component posterior over query value rows.

    ``V`` is (m, dim) for the vertex (use shape (m, 0) when dim is 0).
    Returns per-row means and clamped variances of the vertex's additive
    latent component given all observations.
    """
    prior = model.kernel.component_prior_variance(vertex_id)
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V.reshape(1, -1)
    m = V.shape[0]
    if model.n == 0:
        return np.zeros(m), np.full(m, prior)
    C = model.kernel.component_cross(vertex_id, V, model.X)  # (m, n)
    means = C @ model.alpha
    W = solve_triangular(model.chol, C.T, lower=True)  # (n, m)
    variances = prior - np.einsum("ij,ij->j", W, W)
    neg = variances < 0
    if np.any(neg):
        model.clamp_count += int(neg.sum())
        variances = np.where(neg, 0.0, variances)
    return means, variances


def component_posterior(model: GpModel, vertex_id: str, values) -> tuple[float, float]:
    """Mean and variance of one vertex's additive component at given values."""
    p = model.kernel.params.get(vertex_id)
    if p is None:
        raise KeyError(f"unknown vertex id {vertex_id!r}")
    values = np.asarray(values, dtype=float).ravel()
    if values.size != p.dim:
        raise ValueError(f"vertex {vertex_id!r} expects {p.dim} values, got {values.size}")
    means, variances = component_posterior_batch(model, vertex_id, values.reshape(1, -1))
    return float(means[0]), float(variances[0])


def _evidence_and_grad(
    kernel: AddTreeKernel,
    X: np.ndarray,
    y: np.ndarray,
    noise: np.ndarray,
    noise_is_fitted: bool,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and gradient w.r.t. log kernel params (+ log noise)."""
    n = X.shape[0]
    K, grads = kernel.gram_and_grads(X)
    K_y = K + np.diag(noise)
    L = np.linalg.cholesky(K_y)  # raises LinAlgError; caller decides policy
    alpha = cho_solve((L, True), y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG2PI
    K_inv = cho_solve((L, True), np.eye(n))
    inner = np.outer(alpha, alpha) - K_inv
    grad = np.array([0.5 * np.sum(inner * G) for G in grads])
    if noise_is_fitted:
        # shared log-variance parameter: dK_y/dlog s2 = s2 * I
        g_noise = 0.5 * float(noise[0]) * float(np.trace(inner)) if n else 0.0
        grad = np.append(grad, g_noise)
    return lml, grad


def log_marginal_likelihood(model: GpModel, with_grad: bool = False):
    """GP evidence of the model's data under its kernel and noise.

    With ``with_grad=True`` also returns the gradient w.r.t. all kernel
    log-hyperparameters followed by the shared log noise variance (the noise
    entry is only meaningful for homoscedastic data).
    """
    if model.n == 0:
        return (0.0, np.zeros(len(model.kernel.param_names()) + 1)) if with_grad else 0.0
    lml, grad = _evidence_and_grad(
        model.kernel, model.X, model.data.targets, model.data.noise, noise_is_fitted=True
    )
    if not np.isfinite(lml):
        raise FloatingPointError("non-finite evidence; degenerate hyperparameters")
    return (lml, grad) if with_grad else lml


@dataclass
class FitResult:
    kernel: AddTreeKernel
    noise_variance: float | None
    log_evidence: float
    restart_evidences: list[float]


def apply_lengthscale_cap(kernel: AddTreeKernel, cap: float) -> AddTreeKernel:
    """Cap every lengthscale at ``cap`` (the min rule of adaptive schedules)."""
    new_params = {}
    for vid, p in kernel.params.items():
        new_params[vid] = BaseKernelParams(
            kind=p.kind,
            lengthscales=tuple(min(ls, cap) for ls in p.lengthscales),
            output_scale=p.output_scale,
        )
    return replace(kernel, params=new_params)


def fit_hyperparameters(
    kernel: AddTreeKernel,
    data: Dataset,
    restarts: int = 10,
    rng: np.random.Generator | None = None,
    lengthscale_bounds: tuple[float, float] = (1e-3, 1e3),
    scale_bounds: tuple[float, float] = (1e-3, 1e3),
    fit_noise: bool = False,
    noise_bounds: tuple[float, float] = (1e-8, 1e2),
    initial_noise: float = 1e-2,
    lengthscale_cap: float | None = None,
    maxiter: int = 200,
) -> FitResult:
    """Maximize the evidence over log-hyperparameters with multistarted L-BFGS-B.

    The first start is the passed kernel (clipped into bounds); the remaining
    ``restarts - 1`` starts are log-uniform draws.  When ``fit_noise`` is set
    a shared noise variance is optimized alongside and replaces the dataset's
    noise vector in the result; otherwise the dataset noise is taken as given.
    ``lengthscale_cap`` applies the min rule afterwards: fitted lengthscales
    are capped at the given value.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if len(data) == 0:
        raise ValueError("hyperparameter fitting needs at least one observation")
    rng = rng if rng is not None else np.random.default_rng(0)
    X, _ = stack_points(data.points)
    y = data.targets

    names = kernel.param_names()
    n_kernel = len(names)
    is_scale = np.array([nm.endswith("::scale") for nm in names])
    lo = np.where(is_scale, np.log(scale_bounds[0]), np.log(lengthscale_bounds[0]))
    hi = np.where(is_scale, np.log(scale_bounds[1]), np.log(lengthscale_bounds[1]))
    if fit_noise:
        lo = np.append(lo, np.log(noise_bounds[0]))
        hi = np.append(hi, np.log(noise_bounds[1]))
    bounds = list(zip(lo, hi))

    def objective(vec: np.ndarray) -> tuple[float, np.ndarray]:
        kern = kernel.with_log_params(vec[:n_kernel])
        noise = np.full(len(data), np.exp(vec[-1])) if fit_noise else data.noise
        try:
            lml, grad = _evidence_and_grad(kern, X, y, noise, noise_is_fitted=fit_noise)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(vec)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(vec)
        return -lml, -grad

    start0 = np.clip(kernel.get_log_params(), lo[:n_kernel], hi[:n_kernel])
    if fit_noise:
        start0 = np.append(start0, np.clip(np.log(initial_noise), lo[-1], hi[-1]))
    starts = [start0]
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    best_vec, best_val = None, np.inf
    evidences: list[float] = []
    last_error: Exception | None = None
    for s in starts:
        try:
            res = minimize(
                objective, s, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": maxiter},
            )
        except Exception as exc:  # optimizer-internal failure
            last_error = exc
            continue
        evidences.append(-float(res.fun))
        if res.fun < best_val:
            best_val, best_vec = float(res.fun), res.x
    if best_vec is None:
        raise last_error if last_error else RuntimeError("all restarts failed")

    fitted = kernel.with_log_params(best_vec[:n_kernel])
    if lengthscale_cap is not None:
        fitted = apply_lengthscale_cap(fitted, lengthscale_cap)
    noise_var = float(np.exp(best_vec[-1])) if fit_noise else None
    logger.debug(
        "fit_hyperparameters: n=%d best evidence %.4f over %d restarts",
        len(data), -best_val, len(evidences),
    )
    return FitResult(
        kernel=fitted,
        noise_variance=noise_var,
        log_evidence=-best_val,
        restart_evidences=evidences,
    )
