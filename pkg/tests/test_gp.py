import math

import numpy as np
import pytest

from conftest import random_gp_instance, random_kernel, random_points
from treebo import bench, gp
from treebo.kernels import AddTreeKernel
from treebo.tree_space import (
    VertexSpec,
    build_path_index,
    linearize,
    make_tree_spec,
    restrict,
)


def chain_space(dims=(1, 1)):
    vertices = [
        VertexSpec(f"c{i}", d, tuple([(-2.0, 2.0)] * d)) for i, d in enumerate(dims)
    ]
    edges = [(f"c{i}", 0, f"c{i + 1}") for i in range(len(dims) - 1)]
    spec = make_tree_spec(vertices, edges)
    return spec, build_path_index(spec)


def test_fit_single_observation_closed_form():
    spec, index = chain_space((1, 1))
    kern = AddTreeKernel.default(spec, index)
    p = linearize(spec, index, 0, [0.5, -0.5])
    data = gp.Dataset.create([p], [3.0], noise=0.0)
    model = gp.fit(kern, data)
    np.testing.assert_allclose(model.K + np.diag(data.noise), [[2.0]])
    np.testing.assert_allclose(model.alpha, [1.5])
    assert model.jitter == 0.0


def test_fit_duplicates_with_zero_noise_escalates_jitter():
    spec, index = chain_space((1,))
    kern = AddTreeKernel.default(spec, index)
    p = linearize(spec, index, 0, [0.5])
    q = linearize(spec, index, 0, [0.5])
    data = gp.Dataset.create([p, q], [1.0, 1.0], noise=0.0)
    model = gp.fit(kern, data)  # succeeds via jitter, or raises explicitly
    assert model.jitter > 0.0


def test_fit_factorization_reconstructs(jenatton):
    spec, index = jenatton.spec, jenatton.index
    rng = np.random.default_rng(2)
    kern = random_kernel(spec, index, rng)
    pts = random_points(spec, index, rng, 20)
    data = gp.Dataset.create(pts, rng.normal(size=20), noise=1e-6)
    model = gp.fit(kern, data)
    K_y = model.K + np.diag(data.noise) + model.jitter * np.eye(20)
    err = np.linalg.norm(model.chol @ model.chol.T - K_y) / np.linalg.norm(K_y)
    assert err < 1e-8


def test_dataset_validation():
    spec, index = chain_space((1,))
    p = linearize(spec, index, 0, [0.0])
    with pytest.raises(ValueError, match="targets"):
        gp.Dataset.create([p], [1.0, 2.0])
    with pytest.raises(ValueError, match="noise"):
        gp.Dataset.create([p], [1.0], noise=-1.0)


def test_posterior_interpolates_noiseless(jenatton):
    spec, index = jenatton.spec, jenatton.index
    rng = np.random.default_rng(4)
    kern = AddTreeKernel.default(spec, index)
    pts = random_points(spec, index, rng, 10)
    y = np.array([jenatton(p.active_leaf, np.concatenate(
        [restrict(index, p, v) for v in index.leaf_paths[p.active_leaf]]
    )) for p in pts])
    model = gp.fit(kern, gp.Dataset.create(pts, y, noise=0.0))
    for p, target in zip(pts, y):
        mean, var = gp.posterior(model, p)
        assert abs(mean - target) < 1e-6
        assert var <= 1e-6


def test_posterior_prior_with_no_data(two_leaf):
    spec, index = two_leaf
    kern = AddTreeKernel.default(spec, index, output_scale=1.3)
    model = gp.fit(kern, gp.Dataset.create([], []))
    q = linearize(spec, index, 0, [0, 0, 0, 0])
    mean, var = gp.posterior(model, q)
    assert mean == 0.0
    assert var == pytest.approx(2.6, rel=1e-12)


@pytest.mark.parametrize("zero_dim", ["constant", "zero"])
def test_selection_matches_full_posterior(zero_dim):
    for seed in range(12):
        spec, index, kern, data = random_gp_instance(seed, n=14, zero_dim=zero_dim)
        model = gp.fit(kern, data)
        rng = np.random.default_rng(1000 + seed)
        for q in random_points(spec, index, rng, 5):
            mean_s, var_s = gp.posterior(model, q)
            mean_f, var_f = gp.posterior_full(model, q)
            assert abs(mean_s - mean_f) < 1e-10
            assert abs(var_s - var_f) < 1e-10


def test_zero_policy_unshared_query_gets_prior():
    # bare root, two 1-dim branches; data only on branch 1, query on branch 0
    spec = make_tree_spec(
        [
            VertexSpec("r", 0, ()),
            VertexSpec("a", 1, ((-1.0, 1.0),)),
            VertexSpec("b", 1, ((-1.0, 1.0),)),
        ],
        [("r", 0, "a"), ("r", 1, "b")],
    )
    index = build_path_index(spec)
    kern = AddTreeKernel.default(spec, index, output_scale=0.7, zero_dim="zero")
    pts = [linearize(spec, index, 1, [x]) for x in (-0.5, 0.1, 0.8)]
    model = gp.fit(kern, gp.Dataset.create(pts, [1.0, 2.0, 3.0], noise=1e-6))
    q = linearize(spec, index, 0, [0.3])
    assert model.selection_view(0).rows.size == 0  # empty selection
    mean, var = gp.posterior(model, q)
    assert mean == 0.0
    assert var == pytest.approx(0.7, rel=1e-12)  # summed contributing scales
    # under the constant policy the same query is informed through the root
    kern_c = AddTreeKernel.default(spec, index, output_scale=0.7, zero_dim="constant")
    model_c = gp.fit(kern_c, gp.Dataset.create(pts, [1.0, 2.0, 3.0], noise=1e-6))
    assert model_c.selection_view(0).rows.size == 3
    mean_c, _ = gp.posterior(model_c, q)
    assert mean_c != 0.0


def test_component_posterior_prior_cases(two_leaf):
    spec, index = two_leaf
    kern = AddTreeKernel.default(spec, index, output_scale=0.9)
    empty = gp.fit(kern, gp.Dataset.create([], []))
    mean, var = gp.component_posterior(empty, "root", [0.0, 0.0])
    assert (mean, var) == (0.0, pytest.approx(0.9))

    # vertex absent from every training path: all-zero cross covariance
    rng = np.random.default_rng(8)
    pts = [linearize(spec, index, 0, rng.uniform(-1, 1, size=4)) for _ in range(6)]
    model = gp.fit(kern, gp.Dataset.create(pts, rng.normal(size=6), noise=1e-6))
    mean, var = gp.component_posterior(model, "right", [0.1, 0.2, 0.3])
    assert mean == 0.0
    assert var == pytest.approx(0.9, rel=1e-12)


def test_component_posterior_errors(two_leaf):
    spec, index = two_leaf
    kern = AddTreeKernel.default(spec, index)
    model = gp.fit(kern, gp.Dataset.create([], []))
    with pytest.raises(KeyError):
        gp.component_posterior(model, "ghost", [0.0])
    with pytest.raises(ValueError, match="expects 2 values"):
        gp.component_posterior(model, "root", [0.0])


@pytest.mark.parametrize("zero_dim", ["constant", "zero"])
def test_component_means_add_to_posterior_mean(zero_dim):
    for seed in range(10):
        spec, index, kern, data = random_gp_instance(seed, n=12, zero_dim=zero_dim)
        model = gp.fit(kern, data)
        rng = np.random.default_rng(2000 + seed)
        for q in random_points(spec, index, rng, 5):
            total = 0.0
            for vid in index.leaf_paths[q.active_leaf]:
                mean_v, _ = gp.component_posterior(
                    model, vid, restrict(index, q, vid)
                )
                total += mean_v
            mean, _ = gp.posterior(model, q)
            assert abs(total - mean) < 1e-8


def test_posterior_variance_shrinks_with_data(jenatton):
    spec, index = jenatton.spec, jenatton.index
    kern = AddTreeKernel.default(spec, index)
    rng = np.random.default_rng(12)
    pts = random_points(spec, index, rng, 15)
    y = rng.normal(size=15)
    q = linearize(spec, index, 0, [0.5, 0.5])
    prev = np.inf
    for n in (1, 3, 7, 15):
        model = gp.fit(kern, gp.Dataset.create(pts[:n], y[:n], noise=1e-4))
        _, var = gp.posterior(model, q)
        assert var <= prev + 1e-12
        prev = var


def test_lml_standard_normal_evidence():
    spec, index = chain_space((1,))
    kern = AddTreeKernel.default(spec, index)  # k(x,x) = 1 on a single vertex
    p = linearize(spec, index, 0, [0.0])
    model = gp.fit(kern, gp.Dataset.create([p], [0.0], noise=0.0))
    assert gp.log_marginal_likelihood(model) == pytest.approx(
        -0.5 * math.log(2 * math.pi), rel=1e-12
    )


def test_lml_zero_targets_drop_quadratic_term():
    spec, index, kern, data = random_gp_instance(3, n=8)
    data = gp.Dataset(points=data.points, targets=np.zeros(8), noise=data.noise)
    model = gp.fit(kern, data)
    K_y = model.K + np.diag(data.noise)
    expected = -0.5 * np.linalg.slogdet(K_y)[1] - 4 * math.log(2 * math.pi)
    assert gp.log_marginal_likelihood(model) == pytest.approx(expected, rel=1e-10)


def test_lml_gradient_matches_finite_differences():
    # central differences with step 1e-5 in log-parameter space
    for seed in range(20):
        spec, index, kern, data = random_gp_instance(seed, n=8, noise=1e-2)
        model = gp.fit(kern, data)
        _, grad = gp.log_marginal_likelihood(model, with_grad=True)
        vec = kern.get_log_params()
        h = 1e-5
        fd = np.zeros(len(vec) + 1)
        for k in range(len(vec)):
            up, dn = vec.copy(), vec.copy()
            up[k] += h
            dn[k] -= h
            lml_up = gp.log_marginal_likelihood(gp.fit(kern.with_log_params(up), data))
            lml_dn = gp.log_marginal_likelihood(gp.fit(kern.with_log_params(dn), data))
            fd[k] = (lml_up - lml_dn) / (2 * h)
        s2 = data.noise[0]
        for sgn in (1, -1):
            noisy = gp.Dataset(
                points=data.points,
                targets=data.targets,
                noise=np.full(len(data), s2 * math.exp(sgn * h)),
            )
            val = gp.log_marginal_likelihood(gp.fit(kern, noisy))
            fd[-1] += sgn * val / (2 * h)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(grad - fd) / scale) < 1e-5


def test_fit_hyperparameters_recovers_lengthscale():
    # data drawn from a known single-vertex SE kernel; median recovery +-30%
    spec, index = chain_space((1,))
    true_ls = 0.5
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-2, 2, size=200)
        pts = [linearize(spec, index, 0, [x]) for x in X]
        true = AddTreeKernel.default(spec, index, lengthscale=true_ls)
        K = true.gram(pts) + 1e-6 * np.eye(200)
        y = np.linalg.cholesky(K) @ rng.normal(size=200)
        data = gp.Dataset.create(pts, y, noise=1e-6)
        start = AddTreeKernel.default(spec, index, lengthscale=1.0)
        result = gp.fit_hyperparameters(start, data, restarts=2, rng=rng)
        errors.append(result.kernel.params["c0"].lengthscales[0] / true_ls)
    median_ratio = float(np.median(errors))
    assert 0.7 <= median_ratio <= 1.3


def test_fit_hyperparameters_never_worse_than_start():
    spec, index, kern, data = random_gp_instance(5, n=10, noise=1e-2)
    start_lml = gp.log_marginal_likelihood(gp.fit(kern, data))
    result = gp.fit_hyperparameters(kern, data, restarts=1)
    assert result.log_evidence >= start_lml - 1e-9


def test_fit_hyperparameters_requires_data(two_leaf):
    spec, index = two_leaf
    kern = AddTreeKernel.default(spec, index)
    with pytest.raises(ValueError, match="at least one observation"):
        gp.fit_hyperparameters(kern, gp.Dataset.create([], []))
    with pytest.raises(ValueError, match="restarts"):
        gp.fit_hyperparameters(kern, gp.Dataset.create([], []), restarts=0)


def test_lengthscale_cap_min_rule():
    spec, index = chain_space((1,))
    kern = AddTreeKernel.default(spec, index, lengthscale=0.8)
    # schedule: g(t) = 2, theta0 = 1 -> cap 0.5; min(0.8, 0.5) = 0.5
    capped = gp.apply_lengthscale_cap(kern, 0.5)
    assert capped.params["c0"].lengthscales == (0.5,)
    # a MAP value below the cap is untouched
    small = AddTreeKernel.default(spec, index, lengthscale=0.3)
    assert gp.apply_lengthscale_cap(small, 0.5).params["c0"].lengthscales == (0.3,)


def test_fitted_noise_replaces_dataset_noise():
    spec, index = chain_space((1,))
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=60)
    pts = [linearize(spec, index, 0, [x]) for x in X]
    y = np.sin(2 * X) + 0.1 * rng.normal(size=60)
    kern = AddTreeKernel.default(spec, index, lengthscale=0.5)
    result = gp.fit_hyperparameters(
        kern, gp.Dataset.create(pts, y, noise=1.0), restarts=3, rng=rng, fit_noise=True
    )
    assert result.noise_variance is not None
    assert 1e-4 < result.noise_variance < 0.1  # near the generating 0.01
