"""Network building blocks with hand-derived forward/backward pairs.

Everything operates on float64 arrays shaped ``(..., N, F)`` so the same
code path serves a single pose ``(N, F)`` and a batch ``(B, N, F)``; the
left-multiplying ``(N, N)`` propagation kernels broadcast over the batch.
Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the upstream gradient plus that cache.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .skeleton import NormalizedAdjacency
from .validation import check_same_shape, check_square

LAYER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# activations

def gelu(x):
    """Exact Gaussian-error-linear unit ``x * Phi(x)`` (erf form)."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    """Derivative ``Phi(x) + x * phi(x)`` of the exact GELU."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0.0).astype(np.float64)


# ---------------------------------------------------------------------------
# normalization

def layer_norm_forward(x, gain, bias):
    """Normalize each node's feature row to zero mean / unit variance.

    ``gain`` and ``bias`` are per-channel ``(F,)`` affine parameters.
    """
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv_std
    out = gain * xhat + bias
    return out, (xhat, inv_std, gain)


def layer_norm_backward(dout, cache):
    xhat, inv_std, gain = cache
    f = xhat.shape[-1]
    dgain = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dbias = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dx = (inv_std / f) * (
        f * dxhat
        - np.sum(dxhat, axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def batch_norm_forward(x, gain, bias, running_mean, running_var, train):
    """Per-channel batch normalization over all leading axes.

    In train mode the batch statistics normalize and the running buffers
    are updated in place (unbiased variance, momentum 0.1); eval mode uses
    the running buffers.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        m = int(np.prod([x.shape[a] for a in axes]))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + BATCH_NORM_EPS)
        xhat = (x - mean) * inv_std
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - BATCH_NORM_MOMENTUM
        running_mean += BATCH_NORM_MOMENTUM * mean
        running_var *= 1.0 - BATCH_NORM_MOMENTUM
        running_var += BATCH_NORM_MOMENTUM * unbiased
        cache = (xhat, inv_std, gain, m)
    else:
        inv_std = 1.0 / np.sqrt(running_var + BATCH_NORM_EPS)
        xhat = (x - running_mean) * inv_std
        cache = (xhat, inv_std, gain, 0)
    return gain * xhat + bias, cache


def batch_norm_backward(dout, cache):
    xhat, inv_std, gain, m = cache
    axes = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * xhat, axis=axes)
    dbias = np.sum(dout, axis=axes)
    dxhat = dout * gain
    if m == 0:  # eval mode: statistics are constants
        return dxhat * inv_std, dgain, dbias
    dx = (inv_std / m) * (
        m * dxhat
        - np.sum(dxhat, axis=axes)
        - xhat * np.sum(dxhat * xhat, axis=axes)
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# dropout

def dropout_mask(rng, shape, rate):
    """Inverted-scaling dropout mask: entries are 0 or ``1 / (1 - rate)``."""
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


# ---------------------------------------------------------------------------
# adjacency modulation and propagation kernels

def modulated_adjacency(norm_adj, q, symmetrize: bool = True):
    """Add a learnable perturbation to the normalized adjacency.

    With ``symmetrize`` the perturbation is replaced by its symmetric part
    ``(Q + Q.T) / 2`` so the result stays symmetric; either way the
    diagonal of the perturbation is dropped, keeping the zero diagonal the
    triangular split relies on.
    """
    base = norm_adj.entries if isinstance(norm_adj, NormalizedAdjacency) else norm_adj
    base = check_square(base, "normalized adjacency")
    q = check_square(q, "adjacency modulation", n=base.shape[0])
    if symmetrize:
        q = 0.5 * (q + q.T)
    q = q - np.diag(np.diag(q))
    return base + q


@dataclass(frozen=True)
class PropagationKernel:
    """The two matrices each graph-convolution layer multiplies by.

    ``upper`` is the strictly upper triangle of ``beta`` times the
    (possibly modulated) adjacency; the lower factor is always its
    transpose, matching the triangular split. ``skip_kernel`` is the
    first-order inverse factor ``(1 - beta) I + upper.T`` applied to the
    skip term; ``prop_kernel = skip_kernel @ upper`` is applied to the
    propagated features. When the modulated matrix is asymmetric (the
    non-symmetrized ablation) its strictly lower triangle is ignored, just
    as the split would.
    """

    upper: np.ndarray
    skip_kernel: np.ndarray
    prop_kernel: np.ndarray
    beta: float
    symmetrize: bool


def propagation_kernel(base, q, beta: float, symmetrize: bool = True) -> PropagationKernel:
    """Build the layer kernels from the base adjacency and modulation ``q``.

    ``q=None`` uses the unmodulated adjacency.
    """
    base = base.entries if isinstance(base, NormalizedAdjacency) else base
    if q is None:
        mod = base
    else:
        mod = modulated_adjacency(base, q, symmetrize=symmetrize)
    n = mod.shape[0]
    upper = np.triu(beta * mod, k=1)
    skip_kernel = (1.0 - beta) * np.eye(n) + upper.T
    return PropagationKernel(
        upper=upper,
        skip_kernel=skip_kernel,
        prop_kernel=skip_kernel @ upper,
        beta=beta,
        symmetrize=symmetrize,
    )


def kernel_q_gradient(kernel: PropagationKernel, d_skip_kernel, d_prop_kernel):
    """Back-propagate kernel gradients onto the modulation matrix ``q``.

    Unwinds ``prop_kernel = skip_kernel @ upper``, the transpose inside
    ``skip_kernel``, the triangular masking, and the (optional)
    symmetrization.
    """
    d_skip = d_skip_kernel + d_prop_kernel @ kernel.upper.T
    d_upper = kernel.skip_kernel.T @ d_prop_kernel + d_skip.T
    d_mod = kernel.beta * np.triu(d_upper, k=1)
    if kernel.symmetrize:
        return 0.5 * (d_mod + d_mod.T)
    return d_mod


# ---------------------------------------------------------------------------
# graph convolution

@dataclass
class LayerParams:
    """Trainable matrices of one graph-convolution layer.

    ``weight`` maps the propagated features, ``skip_weight`` maps the
    initial features of the skip term, ``modulation`` is the per-node
    elementwise scaling of both products, and ``adj_modulation`` perturbs
    the adjacency before the triangular split.
    """

    weight: np.ndarray
    skip_weight: np.ndarray
    modulation: np.ndarray
    adj_modulation: np.ndarray
    beta: float


def gs_conv_forward(h, x0, weight, skip_weight, modulation, kernel: PropagationKernel,
                    use_skip: bool = True):
    """Pre-activation graph convolution.

    Computes ``prop_kernel @ (M * (H W)) + skip_kernel @ (M * (X0 Wskip))``
    where the elementwise ``M`` factor is skipped when ``modulation`` is
    ``None`` and the whole second summand when ``use_skip`` is false.
    """
    u_raw = h @ weight
    u = modulation * u_raw if modulation is not None else u_raw
    out = kernel.prop_kernel @ u
    v_raw = None
    if use_skip:
        v_raw = x0 @ skip_weight
        v = modulation * v_raw if modulation is not None else v_raw
        out = out + kernel.skip_kernel @ v
    cache = (h, x0, u_raw, v_raw, weight, skip_weight, modulation, kernel, use_skip)
    return out, cache


def gs_conv_backward(dout, cache):
    """Gradients of ``gs_conv_forward``.

    Returns ``(dh, dweight, dskip_weight, dmodulation, d_skip_kernel,
    d_prop_kernel)``; kernel gradients are summed over the batch and the
    modulation gradient over the batch axis only.
    """
    h, x0, u_raw, v_raw, weight, skip_weight, modulation, kernel, use_skip = cache
    u = modulation * u_raw if modulation is not None else u_raw
    d_prop_kernel = _outer_sum(dout, u)
    du = np.matmul(kernel.prop_kernel.T, dout)
    if modulation is not None:
        dmod = _batch_sum(du * u_raw)
        du_raw = du * modulation
    else:
        dmod = None
        du_raw = du
    dweight = _contract_sum(h, du_raw)
    dh = du_raw @ weight.T

    dskip_weight = None
    d_skip_kernel = np.zeros_like(kernel.skip_kernel)
    if use_skip:
        v = modulation * v_raw if modulation is not None else v_raw
        d_skip_kernel = _outer_sum(dout, v)
        dv = np.matmul(kernel.skip_kernel.T, dout)
        if modulation is not None:
            dmod += _batch_sum(dv * v_raw)
            dv_raw = dv * modulation
        else:
            dv_raw = dv
        dskip_weight = _contract_sum(x0, dv_raw)
    return dh, dweight, dskip_weight, dmod, d_skip_kernel, d_prop_kernel


def gs_layer_forward(h, x0, params: LayerParams, norm_adj, activation: bool = False):
    """Standalone layer: modulate the adjacency, split, convolve, activate.

    This is the self-contained single-layer surface; the full network
    builds its kernels once per forward pass instead and shares them.
    """
    if not np.all(np.isfinite(params.weight)) or not np.all(np.isfinite(params.skip_weight)) \
            or not np.all(np.isfinite(params.modulation)) \
            or not np.all(np.isfinite(params.adj_modulation)):
        raise ValueError("layer parameters contain non-finite values")
    base = norm_adj.entries if isinstance(norm_adj, NormalizedAdjacency) else norm_adj
    kernel = propagation_kernel(base, params.adj_modulation, params.beta, symmetrize=True)
    out, _ = gs_conv_forward(h, x0, params.weight, params.skip_weight,
                             params.modulation, kernel)
    return gelu(out) if activation else out


# ---------------------------------------------------------------------------
# non-local attention block (embedded Gaussian, residual form)

def nonlocal_forward(h, w_theta, w_phi, w_g, w_out):
    """Residual attention over nodes: ``h + softmax(theta phi^T) g Wout``."""
    theta = h @ w_theta                      # (..., N, K)
    phi = h @ w_phi
    g = h @ w_g
    scores = np.matmul(theta, np.swapaxes(phi, -1, -2))   # (..., N, N)
    scores = scores - scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores)
    attn = expd / expd.sum(axis=-1, keepdims=True)
    context = np.matmul(attn, g)             # (..., N, K)
    out = h + context @ w_out
    cache = (h, theta, phi, g, attn, context, w_theta, w_phi, w_g, w_out)
    return out, cache


def nonlocal_backward(dout, cache):
    h, theta, phi, g, attn, context, w_theta, w_phi, w_g, w_out = cache
    dw_out = _contract_sum(context, dout)
    dcontext = dout @ w_out.T
    dattn = np.matmul(dcontext, np.swapaxes(g, -1, -2))
    dg = np.matmul(np.swapaxes(attn, -1, -2), dcontext)
    # softmax backward, row-wise over the last axis
    dscores = attn * (dattn - np.sum(attn * dattn, axis=-1, keepdims=True))
    dtheta = np.matmul(dscores, phi)
    dphi = np.matmul(np.swapaxes(dscores, -1, -2), theta)
    dw_theta = _contract_sum(h, dtheta)
    dw_phi = _contract_sum(h, dphi)
    dw_g = _contract_sum(h, dg)
    dh = dout + dtheta @ w_theta.T + dphi @ w_phi.T + dg @ w_g.T
    return dh, dw_theta, dw_phi, dw_g, dw_out


# ---------------------------------------------------------------------------
# pose refinement head (two fully-connected layers, residual)

def refine_forward(pred, w1, b1, w2, b2):
    """Residual correction: flatten the pose, two affine layers, add back."""
    lead = pred.shape[:-2]
    flat = pred.reshape(*lead, -1)           # (..., N*3)
    a1 = flat @ w1 + b1
    hidden = gelu(a1)
    delta = hidden @ w2 + b2
    out = pred + delta.reshape(pred.shape)
    cache = (flat, a1, hidden, w1, w2)
    return out, cache


def refine_backward(dout, cache):
    flat, a1, hidden, w1, w2 = cache
    lead = dout.shape[:-2]
    ddelta = dout.reshape(*lead, -1)
    dw2 = _contract_flat(hidden, ddelta)
    db2 = _sum_leading(ddelta)
    dhidden = ddelta @ w2.T
    da1 = dhidden * gelu_grad(a1)
    dw1 = _contract_flat(flat, da1)
    db1 = _sum_leading(da1)
    dflat = da1 @ w1.T
    dpred = dout + dflat.reshape(dout.shape)
    return dpred, dw1, db1, dw2, db2


# ---------------------------------------------------------------------------
# reduction helpers

def _outer_sum(a, b):
    """Sum over batch of ``a[..., i, f] * b[..., j, f]`` -> ``(N, N)``."""
    n, f = a.shape[-2:]
    af = a.reshape(-1, n, f)
    bf = b.reshape(-1, n, f)
    return np.einsum("bif,bjf->ij", af, bf)


def _contract_sum(x, d):
    """Sum over all leading axes of ``x[..., a] * d[..., b]`` -> ``(A, B)``."""
    xf = x.reshape(-1, x.shape[-1])
    df = d.reshape(-1, d.shape[-1])
    return xf.T @ df


_contract_flat = _contract_sum


def _batch_sum(arr):
    """Sum over all leading axes, keeping the trailing ``(N, F)``."""
    if arr.ndim == 2:
        return arr
    return arr.sum(axis=tuple(range(arr.ndim - 2)))


def _sum_leading(arr):
    """Sum over all leading axes, keeping the trailing vector."""
    if arr.ndim == 1:
        return arr
    return arr.sum(axis=tuple(range(arr.ndim - 1)))
