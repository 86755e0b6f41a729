"""Gauss-Seidel graph filtering and a graph-convolutional pose lifter.

The package has two layers of API: plain functions mirroring the
underlying math (graph construction, the iterative filter, layer
primitives, metrics) and scikit-learn style estimators (``GraphFilter``,
``PoseLifter``) that compose with the wider ecosystem.
"""

from .data import (
    DatasetFile,
    NormStats,
    PoseRecord,
    bone_lengths,
    load_dataset,
    project_points,
    save_dataset,
    standardize_2d,
    synthesize_poses,
    zero_center_root,
)
from .estimators import PoseLifter
from .filtering import (
    FilterConfig,
    GraphFilter,
    SolveReport,
    approx_gauss_seidel_step,
    approx_solve,
    direct_solve,
    gauss_seidel_solve,
    neumann_inverse_approx,
    relative_residual,
    smoothing_gradient,
    smoothing_objective,
)
from .layers import LayerParams, gelu, gs_layer_forward, modulated_adjacency, \
    propagation_kernel
from .metrics import EvalReport, evaluate, mpjpe, pa_mpjpe, pck_auc, procrustes_align
from .model import GSNet, ModelConfig, NonFiniteLossError, pose_loss
from .optim import AmsGrad, scheduled_lr
from .skeleton import (
    MatrixSplit,
    NormalizedAdjacency,
    SkeletonGraph,
    adjacency_matrix,
    human36m_topology,
    load_topology,
    normalize_adjacency,
    normalized_laplacian,
    triangular_split,
)
from .training import (
    PrepStats,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    center_poses,
    fit_model,
    gradient_check,
    load_checkpoint,
    predict_mm,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AmsGrad",
    "DatasetFile",
    "EvalReport",
    "FilterConfig",
    "GSNet",
    "GraphFilter",
    "LayerParams",
    "MatrixSplit",
    "ModelConfig",
    "NonFiniteLossError",
    "NormStats",
    "NormalizedAdjacency",
    "PoseLifter",
    "PoseRecord",
    "PrepStats",
    "SkeletonGraph",
    "SolveReport",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "adjacency_matrix",
    "approx_gauss_seidel_step",
    "approx_solve",
    "bone_lengths",
    "center_poses",
    "direct_solve",
    "evaluate",
    "fit_model",
    "gauss_seidel_solve",
    "gelu",
    "gradient_check",
    "gs_layer_forward",
    "human36m_topology",
    "load_checkpoint",
    "load_dataset",
    "load_topology",
    "modulated_adjacency",
    "mpjpe",
    "neumann_inverse_approx",
    "normalize_adjacency",
    "normalized_laplacian",
    "pa_mpjpe",
    "pck_auc",
    "pose_loss",
    "predict_mm",
    "procrustes_align",
    "project_points",
    "propagation_kernel",
    "relative_residual",
    "save_checkpoint",
    "save_dataset",
    "scheduled_lr",
    "smoothing_gradient",
    "smoothing_objective",
    "standardize_2d",
    "synthesize_poses",
    "train",
    "triangular_split",
    "zero_center_root",
]
