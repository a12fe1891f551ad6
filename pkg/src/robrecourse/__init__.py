"""Adversarially robust algorithmic recourse over structural causal models.

Submodules
----------
autodiff     reverse-mode automatic differentiation on numpy arrays
scm          structural causal models, abduction and counterfactuals
actions      recourse actions, feasibility constraints, uncertainty sets, costs
model        classifiers, threshold selection and recourse-aware training
recourse     closed-form and min-max recourse solvers, cost bounds
attack       minimal invalidating perturbations (analytic and C&W-style)
data         CSV ingestion, standardization and synthetic populations
experiments  pipelines shared by the command-line interface
"""

from .actions import (
    NOT_FOUND,
    CostFn,
    FeasibilitySpec,
    FeatureConstraint,
    NotFound,
    RecourseAction,
    UncertaintySpec,
)
from .attack import AttackResult, CWParams, analytic_min_invalidation, cw_min_invalidation
from .data import Dataset, Labeler, load_csv, synthesize
from .kernels import BACKEND
from .model import (
    LinearClassifier,
    MLPClassifier,
    TrainConfig,
    allr_penalty,
    ross_penalty,
    select_threshold,
    train,
)
from .recourse import (
    SolverParams,
    cost_bound_beta,
    inner_maximize,
    robust_linear_recourse,
    robust_recourse_pgd,
    solve_recourse_batch,
    standard_recourse,
)
from .scm import Mechanism, Scm, builtin_scm, imf_scm

__version__ = "0.1.0"

__all__ = [
    "NOT_FOUND", "CostFn", "FeasibilitySpec", "FeatureConstraint", "NotFound", "RecourseAction",
    "UncertaintySpec", "AttackResult", "CWParams", "analytic_min_invalidation", "cw_min_invalidation",
    "Dataset", "Labeler", "load_csv", "synthesize", "BACKEND", "LinearClassifier", "MLPClassifier",
    "TrainConfig", "allr_penalty", "ross_penalty", "select_threshold", "train", "SolverParams",
    "cost_bound_beta", "inner_maximize", "robust_linear_recourse", "robust_recourse_pgd",
    "solve_recourse_batch", "standard_recourse", "Mechanism", "Scm", "builtin_scm", "imf_scm",
]
