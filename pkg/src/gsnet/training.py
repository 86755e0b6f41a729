"""Training loop, finite-difference gradient checking, and checkpoints.

Inputs and targets are normalized per joint-coordinate before training
(targets after root-centering), so the network operates on unit-scale
features; predictions are mapped back to millimeters for metrics. Every
source of randomness (init, shuffling, dropout) draws from one generator
seeded by the train config, making runs bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .io_utils import read_json, write_json_atomic
from .metrics import mpjpe
from .model import GSNet, ModelConfig, NonFiniteLossError
from .optim import AmsGrad, scheduled_lr
from .skeleton import SkeletonGraph
from .validation import check_array


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the reference recipe."""

    lr: float = 0.005
    batch_size: int = 512
    epochs: int = 30
    decay_factor: float = 0.65
    decay_every: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")


@dataclass(frozen=True)
class PrepStats:
    """Per joint-coordinate normalization of inputs and centered targets."""

    mean2d: np.ndarray
    std2d: np.ndarray
    mean3d: np.ndarray
    std3d: np.ndarray

    def normalize_inputs(self, x2d: np.ndarray) -> np.ndarray:
        return (x2d - self.mean2d) / self.std2d

    def normalize_targets(self, y3d: np.ndarray) -> np.ndarray:
        return (y3d - self.mean3d) / self.std3d

    def denormalize_targets(self, y_norm: np.ndarray) -> np.ndarray:
        return y_norm * self.std3d + self.mean3d

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("mean2d", "std2d", "mean3d", "std3d")}

    @classmethod
    def from_dict(cls, data: dict) -> "PrepStats":
        return cls(**{k: np.asarray(data[k], dtype=np.float64)
                      for k in ("mean2d", "std2d", "mean3d", "std3d")})


@dataclass
class TrainResult:
    model: GSNet
    prep: PrepStats
    history: list[dict] = field(default_factory=list)
    optimizer: AmsGrad | None = None


def _quiet_stats(values: np.ndarray):
    """Mean/scale per coordinate; zero-spread coordinates keep scale 1.

    Silent variant for internal use: the root row of centered targets is
    identically zero by construction, which is expected rather than
    noteworthy.
    """
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    return mean, np.where(std == 0.0, 1.0, std)


def center_poses(poses: np.ndarray, root_index: int) -> np.ndarray:
    """Subtract the root joint from every pose in a ``(B, N, 3)`` batch."""
    return poses - poses[:, root_index:root_index + 1, :]


def fit_model(x2d, y3d, graph: SkeletonGraph, model_config: ModelConfig,
              train_config: TrainConfig, log=None) -> TrainResult:
    """Train a network on paired 2D/3D poses.

    ``x2d`` is ``(B, N, 2)`` raw keypoints, ``y3d`` ``(B, N, 3)`` poses in
    millimeters (root-centered here if they are not already). ``log``, if
    given, receives one dict per epoch.

    Raises:
        TrainingDivergedError: if the loss becomes non-finite.
    """
    n = graph.num_joints
    x2d = check_array(x2d, "x2d", shape=(None, n, 2))
    y3d = check_array(y3d, "y3d", shape=(None, n, 3))
    if x2d.shape[0] != y3d.shape[0]:
        raise ValueError(f"{x2d.shape[0]} inputs vs {y3d.shape[0]} targets")
    num_samples = x2d.shape[0]
    if num_samples == 0:
        raise ValueError("dataset is empty")

    y_centered = center_poses(y3d, graph.root_index)
    mean2d, std2d = _quiet_stats(x2d)
    mean3d, std3d = _quiet_stats(y_centered)
    prep = PrepStats(mean2d=mean2d, std2d=std2d, mean3d=mean3d, std3d=std3d)
    x_norm = prep.normalize_inputs(x2d)
    y_norm = prep.normalize_targets(y_centered)

    rng = np.random.default_rng(train_config.seed)
    model = GSNet(model_config, graph, rng)
    optimizer = AmsGrad(model.params, lr=train_config.lr)
    history = []
    for epoch in range(train_config.epochs):
        lr = scheduled_lr(train_config.lr, epoch,
                          decay=train_config.decay_factor, every=train_config.decay_every)
        perm = rng.permutation(num_samples)
        total = 0.0
        for start in range(0, num_samples, train_config.batch_size):
            idx = perm[start:start + train_config.batch_size]
            masks = model.make_dropout_masks(rng, len(idx))
            try:
                loss, grads = model.loss_and_grads(x_norm[idx], y_norm[idx], masks)
            except NonFiniteLossError as exc:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: {exc}") from exc
            optimizer.step(model.params, grads, lr)
            total += loss * len(idx)
        pred_mm = prep.denormalize_targets(model.predict(x_norm))
        pred_mm = center_poses(pred_mm, graph.root_index)
        entry = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / num_samples,
            "train_mpjpe": mpjpe(pred_mm, y_centered),
        }
        history.append(entry)
        if log is not None:
            log(entry)
    return TrainResult(model=model, prep=prep, history=history, optimizer=optimizer)


def train(dataset, model_config: ModelConfig | None = None,
          train_config: TrainConfig | None = None, log=None) -> TrainResult:
    """Train from a ``DatasetFile``, deriving the default config from it."""
    from .data import records_to_arrays

    if len(dataset.records) == 0:
        raise ValueError("dataset contains no records")
    if train_config is None:
        train_config = TrainConfig()
    if model_config is None:
        model_config = ModelConfig(num_joints=dataset.topology.num_joints)
    x2d, y3d, _ = records_to_arrays(dataset.records)
    return fit_model(x2d, y3d, dataset.topology, model_config, train_config, log=log)


def predict_mm(model: GSNet, prep: PrepStats, x2d) -> np.ndarray:
    """Eval-mode prediction in millimeters from raw 2D keypoints."""
    x_norm = prep.normalize_inputs(check_array(x2d, "x2d", ndim=3))
    return prep.denormalize_targets(model.predict(x_norm))


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(model: GSNet, x, targets, dropout_masks=None,
                   step: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    Every entry of every parameter is perturbed by ``+/- step``; returns
    the worst relative error per parameter, with the relative error
    defined as ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    _, grads = model.loss_and_grads(x, targets, dropout_masks)
    worst: dict[str, float] = {}
    for name, param in model.params.items():
        analytic = grads[name]
        err = 0.0
        flat = param.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = model.training_loss(x, targets, dropout_masks)
            flat[i] = orig - step
            minus = model.training_loss(x, targets, dropout_masks)
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            err = max(err, abs(aflat[i] - numeric) / denom)
        worst[name] = err
    return worst


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model: GSNet, prep: PrepStats | None = None,
                    optimizer: AmsGrad | None = None, epoch: int = 0) -> None:
    """Write a self-contained JSON checkpoint (atomic)."""
    payload = {
        "config": model.config_dict(),
        "topology": model.graph.to_dict(),
        "prep": prep.to_dict() if prep is not None else None,
        "state": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
    }
    write_json_atomic(path, payload)


def load_checkpoint(path):
    """Restore ``(model, prep, optimizer, epoch)`` from a checkpoint file.

    ``prep`` and ``optimizer`` are ``None`` when the checkpoint lacks them.
    """
    data = read_json(path)
    config = ModelConfig(**data["config"])
    graph = SkeletonGraph.from_dict(data["topology"])
    model = GSNet(config, graph, rng=0)
    model.load_state_dict(data["state"])
    prep = PrepStats.from_dict(data["prep"]) if data.get("prep") else None
    optimizer = None
    if data.get("optimizer"):
        optimizer = AmsGrad(model.params)
        optimizer.load_state_dict(data["optimizer"])
    return model, prep, optimizer, int(data.get("epoch", 0))
