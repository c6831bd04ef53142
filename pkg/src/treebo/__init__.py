"""Bayesian optimization for tree-structured conditional parameter spaces.

The search space is a rooted tree whose categorical choices select a
root-to-leaf path of bounded continuous variables.  One GP with an additive
path kernel models every path jointly, sharing observations through common
ancestors; acquisition maximizes per-vertex confidence bounds in parallel
and recombines them along the best path.
"""

from .acquisition import (
    Proposal,
    UcbSchedule,
    beta,
    constant_schedule,
    log_schedule,
    mutual_information,
    propose,
    select_schedule,
    ucb,
)
from .bench import (
    BoConfig,
    Objective,
    RunTrace,
    jenatton_objective,
    quadratic_objective,
    random_tree_objective,
    run_bo,
    run_regression_study,
    wilcoxon_one_sided,
)
from .gp import (
    Dataset,
    FactorizationError,
    GpModel,
    component_posterior,
    fit,
    fit_hyperparameters,
    log_marginal_likelihood,
    posterior,
)
from .kernels import (
    AddTreeKernel,
    BaseKernelParams,
    add_tree_eval,
    base_kernel_eval,
    delta_eval,
    gram,
)
from .tree_space import (
    LinearizedPoint,
    PathIndex,
    TreeSpec,
    TreeSpecError,
    VertexSpec,
    build_path_index,
    lca_path,
    linearize,
    make_tree_spec,
    parse_tree_spec,
    restrict,
)

__version__ = "0.1.0"
