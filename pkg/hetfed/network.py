"""Batched forward and backward passes over a ModelSpec's layer stack."""
from typing import List, Optional, Tuple

import numpy as np

from . import tensor
from .errors import DimensionError
from .params import ParamSet
from .zoo import Conv, Linear, MaxPool, Model, ReLU

# One entry per layer: (layer input, auxiliary data such as pool indices)
Tape = List[Tuple[np.ndarray, Optional[np.ndarray]]]


def forward(model: Model, x: np.ndarray) -> Tuple[np.ndarray, Tape]:
    """Run a batch ``[N, *input_shape]`` through the model, recording a tape"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.spec.input_shape:
        raise DimensionError(
            f"{model.spec.name}: expected inputs of shape {model.spec.input_shape}, got {x.shape[1:]}"
        )
    params = model.params
    tape: Tape = []
    out = x
    for layer in model.spec.layers:
        if isinstance(layer, Conv):
            tape.append((out, None))
            out = tensor.conv2d_forward(out, params.get(layer.name, "kernel"),
                                        params.get(layer.name, "bias"), layer.padding)
        elif isinstance(layer, MaxPool):
            pooled, indices = tensor.maxpool2d_forward(out, layer.window)
            tape.append((out, indices))
            out = pooled
        elif isinstance(layer, Linear):
            tape.append((out, None))
            out = tensor.linear_forward(out.reshape(out.shape[0], -1),
                                        params.get(layer.name, "weight"), params.get(layer.name, "bias"))
        elif isinstance(layer, ReLU):
            tape.append((out, None))
            out = tensor.relu_forward(out)
    return out, tape


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    return forward(model, x)[0]


def backward(model: Model, tape: Tape, grad_out: np.ndarray,
             param_grads: bool = True) -> Tuple[Optional[ParamSet], np.ndarray]:
    """
    Gradients of a scalar loss w.r.t. the model parameters and its input,
    given the loss gradient at the model output. A frozen model passes
    ``param_grads=False`` and gets ``None`` for the parameter gradients.
    """
    params = model.params
    grads = {}
    grad = np.asarray(grad_out, dtype=np.float64)
    for layer, (layer_input, aux) in zip(reversed(model.spec.layers), reversed(tape)):
        if isinstance(layer, Conv):
            lg = tensor.conv2d_backward(layer_input, params.get(layer.name, "kernel"), layer.padding, grad,
                                         param_grads)
            grads[(layer.name, "kernel")] = lg.param_grad
            grads[(layer.name, "bias")] = lg.bias_grad
            grad = lg.input_grad
        elif isinstance(layer, MaxPool):
            grad = tensor.maxpool2d_backward(aux, grad)
        elif isinstance(layer, Linear):
            flat = layer_input.reshape(layer_input.shape[0], -1)
            lg = tensor.linear_backward(flat, params.get(layer.name, "weight"), grad, param_grads)
            grads[(layer.name, "weight")] = lg.param_grad
            grads[(layer.name, "bias")] = lg.bias_grad
            grad = lg.input_grad.reshape(layer_input.shape)
        elif isinstance(layer, ReLU):
            grad = tensor.relu_backward(layer_input, grad)
    if not param_grads:
        return None, grad
    return ParamSet.from_arrays(model.spec.manifest, grads), grad
