"""The pose-lifting network: configuration, forward pass, and gradients.

The network stacks graph-convolution layers built from the triangular
split of the modulated adjacency: an input lift layer, ``num_blocks``
residual blocks of two layers each (first followed by normalization,
second by the activation), an optional non-local attention block, an
output layer to 3 channels, and an optional refinement head. With four
blocks that is ten graph-convolution layers end to end.

All math is float64 and gradients are hand-derived; ``loss_and_grads``
returns a gradient bundle keyed like ``parameters()`` and is verified
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    batch_norm_backward,
    batch_norm_forward,
    dropout_mask,
    gelu,
    gelu_grad,
    gs_conv_backward,
    gs_conv_forward,
    kernel_q_gradient,
    layer_norm_backward,
    layer_norm_forward,
    nonlocal_backward,
    nonlocal_forward,
    propagation_kernel,
    refine_backward,
    refine_forward,
    relu,
    relu_grad,
)
from .skeleton import SkeletonGraph, adjacency_matrix, normalize_adjacency
from .validation import check_array, check_in_range

BLOCK_STYLES = ("layernorm-gelu", "batchnorm-relu")


class NonFiniteLossError(RuntimeError):
    """Raised when a forward pass produces non-finite values."""


@dataclass
class ModelConfig:
    """Architecture and loss settings.

    ``block_style`` selects the residual-block flavor: layer normalization
    with GELU, or batch normalization with ReLU. The ablation switches
    (``use_*`` and ``symmetrize_adjacency``) remove individual components
    while keeping the rest of the architecture fixed.
    """

    num_joints: int
    input_dim: int = 2
    output_dim: int = 3
    channels: int = 384
    num_blocks: int = 4
    dropout_rate: float = 0.2
    alpha: float = 0.01
    beta: float = 0.2
    use_nonlocal: bool = True
    use_refinement: bool = True
    block_style: str = "layernorm-gelu"
    use_skip: bool = True
    use_adj_modulation: bool = True
    use_weight_modulation: bool = True
    symmetrize_adjacency: bool = True
    per_layer_adj_modulation: bool = False
    refine_hidden: int = 64

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be at least 1, got {self.channels}")
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be at least 1, got {self.num_blocks}")
        check_in_range(self.dropout_rate, "dropout_rate", 0.0, 1.0)
        check_in_range(self.alpha, "alpha", 0.0, 1.0, include_high=True)
        check_in_range(self.beta, "beta", 0.0, 1.0)
        if self.block_style not in BLOCK_STYLES:
            raise ValueError(f"block_style must be one of {BLOCK_STYLES}, got {self.block_style!r}")

    @property
    def num_gs_layers(self) -> int:
        """Graph-convolution layer count: input + 2 per block + output."""
        return 2 + 2 * self.num_blocks


def pose_loss(pred, target, alpha: float) -> float:
    """Blend of summed squared and absolute errors, averaged over poses.

    ``alpha = 0`` gives the mean squared error over poses, ``alpha = 1``
    the mean absolute error; both norms run over every joint coordinate.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    alpha = check_in_range(alpha, "alpha", 0.0, 1.0, include_high=True)
    batch = pred.shape[0] if pred.ndim == 3 else 1
    diff = pred - target
    sq = float(np.sum(diff * diff))
    ab = float(np.sum(np.abs(diff)))
    return ((1.0 - alpha) * sq + alpha * ab) / batch


def pose_loss_grad(pred, target, alpha: float) -> np.ndarray:
    """Gradient of ``pose_loss`` with respect to the prediction."""
    batch = pred.shape[0] if pred.ndim == 3 else 1
    diff = pred - target
    return ((1.0 - alpha) * 2.0 * diff + alpha * np.sign(diff)) / batch


def _xavier(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class GSNet:
    """Graph-convolutional lifting network over a fixed skeleton."""

    ADJ_MOD_INIT = 1e-2

    def __init__(self, config: ModelConfig, graph: SkeletonGraph, rng=None):
        if graph.num_joints != config.num_joints:
            raise ValueError(
                f"config expects {config.num_joints} joints but the graph has {graph.num_joints}"
            )
        self.config = config
        self.graph = graph
        self.base_adjacency = normalize_adjacency(adjacency_matrix(graph)).entries
        if rng is None:
            rng = np.random.default_rng(0)
        elif isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._init_params(rng)

    # -- construction -------------------------------------------------

    def _conv_dims(self) -> list[tuple[int, int]]:
        cfg = self.config
        dims = [(cfg.input_dim, cfg.channels)]
        for _ in range(cfg.num_blocks):
            dims.append((cfg.channels, cfg.channels))
            dims.append((cfg.channels, cfg.channels))
        dims.append((cfg.channels, cfg.output_dim))
        return dims

    def _norm_names(self) -> list[str]:
        return ["norm0"] + [f"block{k}.norm" for k in range(self.config.num_blocks)]

    def _init_params(self, rng) -> None:
        cfg = self.config
        n = cfg.num_joints
        p = self.params
        for i, (fin, fout) in enumerate(self._conv_dims()):
            p[f"conv{i}.weight"] = _xavier(rng, fin, fout)
            if cfg.use_skip:
                p[f"conv{i}.skip_weight"] = _xavier(rng, cfg.input_dim, fout)
            if cfg.use_weight_modulation:
                p[f"conv{i}.modulation"] = np.ones((n, fout))
        if cfg.use_adj_modulation:
            bound = self.ADJ_MOD_INIT
            if cfg.per_layer_adj_modulation:
                for i in range(cfg.num_gs_layers):
                    p[f"conv{i}.adj_mod"] = rng.uniform(-bound, bound, size=(n, n))
            else:
                p["adj_mod"] = rng.uniform(-bound, bound, size=(n, n))
        for name in self._norm_names():
            p[f"{name}.gain"] = np.ones(cfg.channels)
            p[f"{name}.bias"] = np.zeros(cfg.channels)
            if cfg.block_style == "batchnorm-relu":
                self.buffers[f"{name}.running_mean"] = np.zeros(cfg.channels)
                self.buffers[f"{name}.running_var"] = np.ones(cfg.channels)
        if cfg.use_nonlocal:
            embed = max(1, cfg.channels // 2)
            p["nonlocal.theta"] = _xavier(rng, cfg.channels, embed)
            p["nonlocal.phi"] = _xavier(rng, cfg.channels, embed)
            p["nonlocal.g"] = _xavier(rng, cfg.channels, embed)
            p["nonlocal.out"] = np.zeros((embed, cfg.channels))
        if cfg.use_refinement:
            flat = n * cfg.output_dim
            p["refine.w1"] = _xavier(rng, flat, cfg.refine_hidden)
            p["refine.b1"] = np.zeros(cfg.refine_hidden)
            p["refine.w2"] = np.zeros((cfg.refine_hidden, flat))
            p["refine.b2"] = np.zeros(flat)

    # -- parameter access ----------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return self.params

    @property
    def num_gs_layers(self) -> int:
        return self.config.num_gs_layers

    @property
    def num_dropout_sites(self) -> int:
        """Dropout follows every graph convolution except the output layer."""
        return 1 + 2 * self.config.num_blocks

    def make_dropout_masks(self, rng, batch_size: int) -> list[np.ndarray] | None:
        """Sample one inverted-scaling mask per dropout site."""
        cfg = self.config
        if cfg.dropout_rate == 0.0:
            return None
        shape = (batch_size, cfg.num_joints, cfg.channels)
        return [dropout_mask(rng, shape, cfg.dropout_rate)
                for _ in range(self.num_dropout_sites)]

    # -- kernels ---------------------------------------------------------

    def _kernels(self):
        """One propagation kernel per conv layer (shared unless per-layer)."""
        cfg = self.config
        num = cfg.num_gs_layers
        if not cfg.use_adj_modulation:
            shared = propagation_kernel(self.base_adjacency, None, cfg.beta,
                                        symmetrize=cfg.symmetrize_adjacency)
            return [shared] * num
        if cfg.per_layer_adj_modulation:
            return [propagation_kernel(self.base_adjacency, self.params[f"conv{i}.adj_mod"],
                                       cfg.beta, symmetrize=cfg.symmetrize_adjacency)
                    for i in range(num)]
        shared = propagation_kernel(self.base_adjacency, self.params["adj_mod"], cfg.beta,
                                    symmetrize=cfg.symmetrize_adjacency)
        return [shared] * num

    # -- forward ---------------------------------------------------------

    def _conv(self, i, h, x0, kernel):
        cfg = self.config
        weight = self.params[f"conv{i}.weight"]
        skip_weight = self.params.get(f"conv{i}.skip_weight")
        modulation = self.params.get(f"conv{i}.modulation")
        return gs_conv_forward(h, x0, weight, skip_weight, modulation, kernel,
                               use_skip=cfg.use_skip)

    def _norm(self, name, h, train):
        cfg = self.config
        gain = self.params[f"{name}.gain"]
        bias = self.params[f"{name}.bias"]
        if cfg.block_style == "batchnorm-relu":
            return batch_norm_forward(h, gain, bias,
                                      self.buffers[f"{name}.running_mean"],
                                      self.buffers[f"{name}.running_var"], train)
        return layer_norm_forward(h, gain, bias)

    def forward(self, x, train: bool = False, dropout_masks=None):
        """Run the network; returns ``(prediction, cache)``.

        ``x`` is ``(B, N, input_dim)``. Dropout masks must be supplied in
        train mode whenever the configured rate is positive so a training
        step (and its gradient check) is reproducible; eval mode ignores
        them entirely.
        """
        cfg = self.config
        x = check_array(x, "x", shape=(None, cfg.num_joints, cfg.input_dim))
        if train and cfg.dropout_rate > 0.0 and dropout_masks is None:
            raise ValueError("train-mode forward with dropout requires precomputed masks")
        if not train:
            dropout_masks = None
        act, act_grad = (gelu, gelu_grad) if cfg.block_style == "layernorm-gelu" \
            else (relu, relu_grad)
        kernels = self._kernels()
        cache = {
            "train": train,
            "masks": dropout_masks,
            "kernels": kernels,
            "conv": [None] * cfg.num_gs_layers,
            "norm": [None] * (1 + cfg.num_blocks),
            "act_pre": [None] * (1 + cfg.num_blocks),
            "nonlocal": None,
            "refine": None,
            "stages": [],
        }
        stages = cache["stages"]

        def drop(h, site):
            if dropout_masks is None:
                return h
            return h * dropout_masks[site]

        h, cache["conv"][0] = self._conv(0, x, x, kernels[0])
        stages.append(("conv0", h))
        h, cache["norm"][0] = self._norm("norm0", h, train)
        cache["act_pre"][0] = h
        h = drop(act(h), 0)
        stages.append(("input stage", h))

        for k in range(cfg.num_blocks):
            i1, i2 = 2 * k + 1, 2 * k + 2
            t, cache["conv"][i1] = self._conv(i1, h, x, kernels[i1])
            t, cache["norm"][1 + k] = self._norm(f"block{k}.norm", t, train)
            t = drop(t, i1)
            t, cache["conv"][i2] = self._conv(i2, t, x, kernels[i2])
            cache["act_pre"][1 + k] = t
            t = drop(act(t), i2)
            h = h + t
            stages.append((f"block{k}", h))

        if cfg.use_nonlocal:
            h, cache["nonlocal"] = nonlocal_forward(
                h, self.params["nonlocal.theta"], self.params["nonlocal.phi"],
                self.params["nonlocal.g"], self.params["nonlocal.out"])
            stages.append(("nonlocal", h))

        out_idx = cfg.num_gs_layers - 1
        pred, cache["conv"][out_idx] = self._conv(out_idx, h, x, kernels[out_idx])
        stages.append(("output conv", pred))

        if cfg.use_refinement:
            pred, cache["refine"] = refine_forward(
                pred, self.params["refine.w1"], self.params["refine.b1"],
                self.params["refine.w2"], self.params["refine.b2"])
            stages.append(("refinement", pred))
        return pred, cache

    def predict(self, x) -> np.ndarray:
        """Deterministic eval-mode forward pass."""
        pred, _ = self.forward(x, train=False)
        return pred

    # -- backward --------------------------------------------------------

    def _conv_backward(self, i, dout, cache, grads, kernel_grads):
        d_h, dw, dsw, dmod, dsk, dpk = gs_conv_backward(dout, cache["conv"][i])
        grads[f"conv{i}.weight"] += dw
        if dsw is not None:
            grads[f"conv{i}.skip_weight"] += dsw
        if dmod is not None:
            grads[f"conv{i}.modulation"] += dmod
        if self.config.use_adj_modulation:
            key = i if self.config.per_layer_adj_modulation else None
            acc = kernel_grads[key]
            acc[0] += dsk
            acc[1] += dpk
        return d_h

    def backward(self, cache, dpred) -> dict[str, np.ndarray]:
        """Back-propagate a gradient on the prediction through the cache."""
        cfg = self.config
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        masks = cache["masks"]
        act_grad = gelu_grad if cfg.block_style == "layernorm-gelu" else relu_grad
        norm_backward = layer_norm_backward if cfg.block_style == "layernorm-gelu" \
            else batch_norm_backward
        keys = [None] if not cfg.per_layer_adj_modulation else list(range(cfg.num_gs_layers))
        kernel_grads = {key: [np.zeros_like(self.base_adjacency),
                              np.zeros_like(self.base_adjacency)] for key in keys}

        def undrop(d, site):
            if masks is None:
                return d
            return d * masks[site]

        d = dpred
        if cfg.use_refinement:
            d, dw1, db1, dw2, db2 = refine_backward(d, cache["refine"])
            grads["refine.w1"] += dw1
            grads["refine.b1"] += db1
            grads["refine.w2"] += dw2
            grads["refine.b2"] += db2

        out_idx = cfg.num_gs_layers - 1
        d = self._conv_backward(out_idx, d, cache, grads, kernel_grads)

        if cfg.use_nonlocal:
            d, dwt, dwp, dwg, dwo = nonlocal_backward(d, cache["nonlocal"])
            grads["nonlocal.theta"] += dwt
            grads["nonlocal.phi"] += dwp
            grads["nonlocal.g"] += dwg
            grads["nonlocal.out"] += dwo

        for k in reversed(range(cfg.num_blocks)):
            i1, i2 = 2 * k + 1, 2 * k + 2
            dt = undrop(d, i2)
            dt = dt * act_grad(cache["act_pre"][1 + k])
            dt = self._conv_backward(i2, dt, cache, grads, kernel_grads)
            dt = undrop(dt, i1)
            dt, dgain, dbias = norm_backward(dt, cache["norm"][1 + k])
            grads[f"block{k}.norm.gain"] += dgain
            grads[f"block{k}.norm.bias"] += dbias
            dt = self._conv_backward(i1, dt, cache, grads, kernel_grads)
            d = d + dt

        d = undrop(d, 0)
        d = d * act_grad(cache["act_pre"][0])
        d, dgain, dbias = norm_backward(d, cache["norm"][0])
        grads["norm0.gain"] += dgain
        grads["norm0.bias"] += dbias
        self._conv_backward(0, d, cache, grads, kernel_grads)

        if cfg.use_adj_modulation:
            kernels = cache["kernels"]
            if cfg.per_layer_adj_modulation:
                for i in range(cfg.num_gs_layers):
                    dsk, dpk = kernel_grads[i]
                    grads[f"conv{i}.adj_mod"] += kernel_q_gradient(kernels[i], dsk, dpk)
            else:
                dsk, dpk = kernel_grads[None]
                grads["adj_mod"] += kernel_q_gradient(kernels[0], dsk, dpk)
        return grads

    # -- losses ------------------------------------------------------------

    def training_loss(self, x, targets, dropout_masks=None) -> float:
        """Train-mode loss without gradients (used by finite differences)."""
        pred, cache = self.forward(x, train=True, dropout_masks=dropout_masks)
        loss = pose_loss(pred, targets, self.config.alpha)
        if not np.isfinite(loss):
            raise NonFiniteLossError(self._diagnose(cache))
        return loss

    def loss_and_grads(self, x, targets, dropout_masks=None):
        """Train-mode loss and the gradient bundle for every parameter."""
        targets = check_array(targets, "targets",
                              shape=(None, self.config.num_joints, self.config.output_dim))
        pred, cache = self.forward(x, train=True, dropout_masks=dropout_masks)
        loss = pose_loss(pred, targets, self.config.alpha)
        if not np.isfinite(loss):
            raise NonFiniteLossError(self._diagnose(cache))
        dpred = pose_loss_grad(pred, targets, self.config.alpha)
        return loss, self.backward(cache, dpred)

    @staticmethod
    def _diagnose(cache) -> str:
        for name, value in cache["stages"]:
            if not np.all(np.isfinite(value)):
                return f"non-finite values first appeared in {name}"
        return "loss is non-finite but every stage output is finite (check targets)"

    # -- serialization -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "params": {k: v.tolist() for k, v in self.params.items()},
            "buffers": {k: v.tolist() for k, v in self.buffers.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        for key, value in state["params"].items():
            if key not in self.params:
                raise KeyError(f"unexpected parameter {key!r} in state")
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != self.params[key].shape:
                raise ValueError(f"shape mismatch for {key!r}: "
                                 f"{arr.shape} vs {self.params[key].shape}")
            self.params[key] = arr
        for key, value in state.get("buffers", {}).items():
            self.buffers[key] = np.asarray(value, dtype=np.float64)

    def config_dict(self) -> dict:
        return asdict(self.config)
