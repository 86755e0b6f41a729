"""Scikit-learn style front end for the pose-lifting network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .metrics import mpjpe
from .model import ModelConfig
from .skeleton import SkeletonGraph, human36m_topology
from .training import TrainConfig, center_poses, fit_model, predict_mm
from .validation import check_array


class PoseLifter(BaseEstimator):
    """2D-to-3D pose lifter with a ``fit`` / ``predict`` interface.

    ``fit`` takes raw 2D keypoints ``X`` of shape ``(B, N, 2)`` and 3D
    poses ``y`` of shape ``(B, N, 3)`` in millimeters; normalization
    statistics are learned from the training split and reused by
    ``predict``, which returns root-centered poses in millimeters.

    Hyperparameters mirror the model and training configs so the estimator
    composes with model selection tools via ``get_params`` /
    ``set_params``. ``graph=None`` selects the standard skeleton topology
    matching the joint count of ``X`` (16 or 17 joints).
    """

    def __init__(self, channels: int = 384, num_blocks: int = 4, alpha: float = 0.01,
                 beta: float = 0.2, dropout_rate: float = 0.2,
                 use_nonlocal: bool = True, use_refinement: bool = True,
                 block_style: str = "layernorm-gelu", use_skip: bool = True,
                 use_adj_modulation: bool = True, use_weight_modulation: bool = True,
                 symmetrize_adjacency: bool = True, per_layer_adj_modulation: bool = False,
                 refine_hidden: int = 64, lr: float = 0.005, batch_size: int = 512,
                 epochs: int = 30, decay_factor: float = 0.65, decay_every: int = 4,
                 seed: int = 0, graph: SkeletonGraph | None = None):
        self.channels = channels
        self.num_blocks = num_blocks
        self.alpha = alpha
        self.beta = beta
        self.dropout_rate = dropout_rate
        self.use_nonlocal = use_nonlocal
        self.use_refinement = use_refinement
        self.block_style = block_style
        self.use_skip = use_skip
        self.use_adj_modulation = use_adj_modulation
        self.use_weight_modulation = use_weight_modulation
        self.symmetrize_adjacency = symmetrize_adjacency
        self.per_layer_adj_modulation = per_layer_adj_modulation
        self.refine_hidden = refine_hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.seed = seed
        self.graph = graph

    def _resolve_graph(self, num_joints: int) -> SkeletonGraph:
        if self.graph is not None:
            return self.graph
        if num_joints in (16, 17):
            return human36m_topology(num_joints)
        raise ValueError(
            f"no default topology for {num_joints} joints; pass graph= explicitly"
        )

    def model_config(self, num_joints: int) -> ModelConfig:
        return ModelConfig(
            num_joints=num_joints,
            channels=self.channels,
            num_blocks=self.num_blocks,
            alpha=self.alpha,
            beta=self.beta,
            dropout_rate=self.dropout_rate,
            use_nonlocal=self.use_nonlocal,
            use_refinement=self.use_refinement,
            block_style=self.block_style,
            use_skip=self.use_skip,
            use_adj_modulation=self.use_adj_modulation,
            use_weight_modulation=self.use_weight_modulation,
            symmetrize_adjacency=self.symmetrize_adjacency,
            per_layer_adj_modulation=self.per_layer_adj_modulation,
            refine_hidden=self.refine_hidden,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            decay_factor=self.decay_factor,
            decay_every=self.decay_every,
            seed=self.seed,
        )

    def fit(self, X, y):
        X = check_array(X, "X", ndim=3)
        y = check_array(y, "y", ndim=3)
        graph = self._resolve_graph(X.shape[1])
        result = fit_model(X, y, graph, self.model_config(X.shape[1]),
                           self.train_config())
        self.graph_ = graph
        self.model_ = result.model
        self.prep_ = result.prep
        self.optimizer_ = result.optimizer
        self.history_ = result.history
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("PoseLifter must be fitted before predicting")
        pred = predict_mm(self.model_, self.prep_, X)
        return center_poses(pred, self.graph_.root_index)

    def score(self, X, y) -> float:
        """Negative root-centered MPJPE in millimeters (higher is better)."""
        y = check_array(y, "y", ndim=3)
        target = center_poses(y, self.graph_.root_index)
        return -mpjpe(self.predict(X), target)
