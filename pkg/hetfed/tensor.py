"""
Dense tensor engine for the model zoo.

Tensors are float64 numpy arrays. Every op accepts a single sample
(``[C,H,W]`` for images, ``[D]`` for vectors) or the same shape with a leading
batch axis, and returns the matching form. Backward ops return exact analytic
gradients; parameter gradients are summed over the batch axis, so batch
averaging belongs to the loss. With ``param_grads=False`` the conv and linear
backward ops only propagate the input gradient.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError
from .params import ParamSet

Tensor = np.ndarray


class PaddingMode(str, Enum):
    VALID = "valid"
    SAME = "same"


@dataclass(frozen=True)
class LayerGrad:
    param_grad: Optional[Tensor]
    input_grad: Tensor
    bias_grad: Optional[Tensor] = None


def _as_batch(x: Tensor, sample_ndim: int, name: str = "input") -> Tuple[Tensor, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == sample_ndim:
        return x[np.newaxis], True
    if x.ndim == sample_ndim + 1:
        return x, False
    raise DimensionError(f"{name} must have {sample_ndim} or {sample_ndim + 1} dims, got shape {x.shape}")


def _unbatch(x: Tensor, single: bool) -> Tensor:
    return x[0] if single else x


def _padding(k: int, mode: PaddingMode) -> int:
    mode = PaddingMode(mode)
    if mode is PaddingMode.VALID:
        return 0
    if k % 2 == 0:
        raise DimensionError(f"same padding needs an odd kernel size, got {k}")
    return (k - 1) // 2


def _check_kernel(xb: Tensor, kernel: Tensor) -> int:
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"kernel must be [C_out,C_in,K,K], got shape {kernel.shape}")
    if xb.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"input has {xb.shape[1]} channels but kernel expects {kernel.shape[1]}"
        )
    return kernel.shape[2]


def _pad(xb: Tensor, p: int) -> Tensor:
    if p == 0:
        return xb
    return np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: Tensor, k: int) -> Tensor:
    """Padded ``[N,C,H,W]`` -> contiguous ``[N*Ho*Wo, C*K*K]`` patch matrix"""
    n, c = xp.shape[:2]
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    ho, wo = windows.shape[2:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: Tensor, padded_shape: Tuple[int, ...], k: int) -> Tensor:
    """Scatter-add a patch-matrix gradient back onto the padded input"""
    n, c, hp, wp = padded_shape
    ho, wo = hp - k + 1, wp - k + 1
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    grad = np.zeros(padded_shape)
    for i in range(k):
        for j in range(k):
            grad[:, :, i:i + ho, j:j + wo] += patches[:, :, i, j]
    return grad


def conv2d_forward(x: Tensor, kernel: Tensor, bias: Tensor,
                   mode: Union[PaddingMode, str] = PaddingMode.VALID) -> Tensor:
    xb, single = _as_batch(x, 3)
    kernel = np.asarray(kernel, dtype=np.float64)
    k = _check_kernel(xb, kernel)
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")
    xp = _pad(xb, _padding(k, mode))
    if xp.shape[2] < k or xp.shape[3] < k:
        raise DimensionError(f"kernel {k}x{k} larger than input {xb.shape[2]}x{xb.shape[3]}")
    n, ho, wo = xp.shape[0], xp.shape[2] - k + 1, xp.shape[3] - k + 1
    out = _im2col(xp, k) @ kernel.reshape(kernel.shape[0], -1).T + bias
    out = np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))
    return _unbatch(out, single)


def conv2d_backward(x: Tensor, kernel: Tensor, mode: Union[PaddingMode, str],
                    upstream: Tensor, param_grads: bool = True) -> LayerGrad:
    xb, single = _as_batch(x, 3)
    kernel = np.asarray(kernel, dtype=np.float64)
    k = _check_kernel(xb, kernel)
    p = _padding(k, mode)
    gb, _ = _as_batch(upstream, 3, "upstream gradient")
    xp = _pad(xb, p)
    expected = (xb.shape[0], kernel.shape[0], xp.shape[2] - k + 1, xp.shape[3] - k + 1)
    if gb.shape != expected:
        raise DimensionError(f"upstream gradient shape {gb.shape} does not match output shape {expected}")

    g_rows = gb.transpose(0, 2, 3, 1).reshape(-1, kernel.shape[0])
    kernel_grad = bias_grad = None
    if param_grads:
        kernel_grad = (g_rows.T @ _im2col(xp, k)).reshape(kernel.shape)
        bias_grad = g_rows.sum(axis=0)
    xp_grad = _col2im(g_rows @ kernel.reshape(kernel.shape[0], -1), xp.shape, k)
    input_grad = xp_grad[:, :, p:p + xb.shape[2], p:p + xb.shape[3]]
    return LayerGrad(kernel_grad, _unbatch(np.ascontiguousarray(input_grad), single), bias_grad)


def maxpool2d_forward(x: Tensor, window: int = 2) -> Tuple[Tensor, np.ndarray]:
    """2x2/stride-2 max pooling; indices are flat positions in each input plane"""
    if window != 2:
        raise ArgumentError(f"only 2x2 pooling is supported, got window={window}")
    xb, single = _as_batch(x, 3)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise DimensionError(f"pooling needs even spatial dims, got {h}x{w}")
    blocks = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax keeps the first row-major occurrence on ties
    local = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, local[..., np.newaxis], axis=-1)[..., 0]
    rows = 2 * np.arange(h // 2)[:, np.newaxis] + local // 2
    cols = 2 * np.arange(w // 2)[np.newaxis, :] + local % 2
    indices = rows * w + cols
    return _unbatch(out, single), _unbatch(indices, single)


def maxpool2d_backward(indices: np.ndarray, upstream: Tensor) -> Tensor:
    indices = np.asarray(indices)
    gb, single = _as_batch(upstream, 3, "upstream gradient")
    ib = indices[np.newaxis] if single else indices
    if ib.shape != gb.shape:
        raise DimensionError(f"pool indices shape {ib.shape} do not match upstream gradient {gb.shape}")
    n, c, ho, wo = gb.shape
    grad = np.zeros((n, c, 4 * ho * wo))
    np.put_along_axis(grad, ib.reshape(n, c, -1), gb.reshape(n, c, -1), axis=2)
    return _unbatch(grad.reshape(n, c, 2 * ho, 2 * wo), single)


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    xb, single = _as_batch(x, 1)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.ndim != 2 or xb.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear dims disagree: input {xb.shape[1:]}, weight {weight.shape}, bias {bias.shape}"
        )
    return _unbatch(xb @ weight.T + bias, single)


def linear_backward(x: Tensor, weight: Tensor, upstream: Tensor, param_grads: bool = True) -> LayerGrad:
    xb, single = _as_batch(x, 1)
    gb, _ = _as_batch(upstream, 1, "upstream gradient")
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or xb.shape[1] != weight.shape[1] or gb.shape != (xb.shape[0], weight.shape[0]):
        raise DimensionError(
            f"linear dims disagree: input {xb.shape}, weight {weight.shape}, upstream {gb.shape}"
        )
    input_grad = _unbatch(gb @ weight, single)
    if not param_grads:
        return LayerGrad(None, input_grad)
    return LayerGrad(gb.T @ xb, input_grad, gb.sum(axis=0))


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise DimensionError(f"relu input {x.shape} and upstream gradient {upstream.shape} differ")
    return upstream * (x > 0)


def softmax_cross_entropy(logits: Tensor, labels) -> Tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits"""
    lb, single = _as_batch(logits, 1, "logits")
    labels = np.atleast_1d(np.asarray(labels))
    n, num_classes = lb.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ArgumentError(f"labels must lie in [0, {num_classes}), got {labels.tolist()}")
    labels = labels.astype(np.int64)
    shifted = lb - lb.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, _unbatch(grad, single)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    params.require_compatible(grads)
    if lr < 0:
        raise ArgumentError(f"learning rate must be non-negative, got {lr}")
    if lr == 0:
        return params
    updated = params.values - lr * grads.values
    if not np.all(np.isfinite(updated)):
        raise ArgumentError("SGD step produced non-finite parameters")
    return params.with_values(updated)
