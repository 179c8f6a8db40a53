"""Consolidation penalties: neuron+synapse (nc), EWC, MAS, or none.

Importances are estimated once per finished session on that session's
training data and anchored at its final parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, InvalidInputError, NumericError
from .nn import (NetworkParams, ForwardTrace, assemble_gradient, backprop, forward,
                 output_delta)

REGULARIZERS = ("none", "nc", "ewc", "mas")


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "none"
    alpha: float = 0.01
    beta: float = 0.01

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise InvalidInputError(f"unknown regularizer {self.kind!r}")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInputError("alpha and beta must be non-negative")

    @property
    def uses_neurons(self) -> bool:
        return self.kind == "nc" and self.alpha > 0

    @property
    def uses_params(self) -> bool:
        return self.kind != "none" and self.beta > 0


@dataclass
class RegularizerState:
    anchor_params: NetworkParams
    param_importance: np.ndarray
    neuron_importance: list = field(default_factory=list)
    sample_count: int = 0


class Penalty(NamedTuple):
    value: float
    param_grad: np.ndarray | None
    act_grads: list | None  # d penalty / d Y_i per layer, for backprop injection


def _accumulate_abs(params, trace, dz_list, out):
    acc = params.like(out)
    for i, dz in enumerate(dz_list):
        a = np.abs(dz)
        acc.weights[i][...] += a.T @ np.abs(trace.layer_input(i))
        acc.biases[i][...] += a.sum(axis=0)


def _accumulate_sq(params, trace, dz_list, out):
    acc = params.like(out)
    for i, dz in enumerate(dz_list):
        a = dz * dz
        x = trace.layer_input(i)
        acc.weights[i][...] += a.T @ (x * x)
        acc.biases[i][...] += a.sum(axis=0)


def estimate_importance(params: NetworkParams, x, y=None, kind: str = "nc",
                        loss: str = "cross_entropy", chunk: int = 1024) -> RegularizerState:
    """Per-sample importance averaged over ``x``.

    nc/mas: mean |d ||Y_N||^2 / d theta| (nc also per neuron: mean |d ||Y_N||^2 / d Y_ik|).
    ewc: mean squared per-sample gradient of the task loss (empirical Fisher diagonal).
    """
    if kind not in REGULARIZERS:
        raise InvalidInputError(f"unknown regularizer {kind!r}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise InvalidInputError("cannot estimate importance on an empty dataset")
    anchor = params.copy()
    param_imp = np.zeros(params.size)
    neuron_imp = [np.zeros(s.output_dim) for s in params.specs] if kind == "nc" else []
    if kind == "none":
        return RegularizerState(anchor, param_imp, [], n)
    if kind == "ewc" and y is None:
        raise InvalidInputError("ewc importance needs labels")
    for start in range(0, n, chunk):
        xb = x[start:start + chunk]
        trace = forward(params, xb)
        if kind == "ewc":
            _, top_dz = output_delta(params, trace, np.asarray(y)[start:start + chunk], loss, reduction="sum")
            dz_list, _ = backprop(params, trace, top_dz)
            _accumulate_sq(params, trace, dz_list, param_imp)
            continue
        act_grads = [None] * params.n_layers
        act_grads[-1] = 2.0 * trace.output
        dz_list, dy_list = backprop(params, trace, None, act_grads)
        _accumulate_abs(params, trace, dz_list, param_imp)
        for acc, dy in zip(neuron_imp, dy_list):
            acc += np.abs(dy).sum(axis=0)
    param_imp /= n
    for acc in neuron_imp:
        acc /= n
    return RegularizerState(anchor, param_imp, neuron_imp, n)


def penalty(params: NetworkParams, trace: ForwardTrace | None, anchor_trace: ForwardTrace | None,
            state: RegularizerState, config: RegularizerConfig) -> Penalty:
    """Importance-weighted drift penalty and its gradient pieces.

    value = alpha * sum_ik w_ik * mean_batch (Y_ik - Y^m_ik)^2
          + beta * sum_s w_s * (theta_s - theta^m_s)^2
    The neuron term only applies to kind="nc"; its gradient is returned as
    per-layer activation gradients to be injected into backprop.
    """
    if config.kind == "none":
        return Penalty(0.0, None, None)
    if state.param_importance.shape != params.theta.shape:
        raise DimensionError("regularizer state does not match network shape")
    value = 0.0
    param_grad = None
    act_grads = None
    if config.uses_params:
        diff = params.theta - state.anchor_params.theta
        weighted = state.param_importance * diff
        value += config.beta * float(np.dot(weighted, diff))
        param_grad = 2.0 * config.beta * weighted
    if config.uses_neurons:
        if len(state.neuron_importance) != params.n_layers:
            raise DimensionError("neuron importance does not match network depth")
        n = trace.inputs.shape[0]
        act_grads = []
        for y, y_m, w in zip(trace.act, anchor_trace.act, state.neuron_importance):
            if w.shape != (y.shape[1],):
                raise DimensionError("neuron importance does not match layer width")
            d = y - y_m
            value += config.alpha * float(np.sum((d * d).sum(axis=0) * w)) / n
            act_grads.append((2.0 * config.alpha / n) * d * w)
    return Penalty(value, param_grad, act_grads)


class Regularizer:
    """A configured penalty bound to the state estimated after the previous session."""

    def __init__(self, config: RegularizerConfig, state: RegularizerState | None):
        if config.kind != "none" and state is None:
            raise InvalidInputError(f"regularizer {config.kind!r} needs an estimated state")
        self.config = config
        self.state = state

    @property
    def active(self) -> bool:
        return self.config.uses_params or self.config.uses_neurons

    def terms(self, params: NetworkParams, trace: ForwardTrace) -> Penalty:
        if not self.active:
            return Penalty(0.0, None, None)
        anchor_trace = forward(self.state.anchor_params, trace.inputs) if self.config.uses_neurons else None
        return penalty(params, trace, anchor_trace, self.state, self.config)


class Objective(NamedTuple):
    task_loss: float
    value: float
    grad: np.ndarray
    trace: ForwardTrace


def objective_and_gradient(params: NetworkParams, x, y, loss: str = "cross_entropy",
                           regularizer: Regularizer | None = None) -> Objective:
    """Task loss plus consolidation penalty, with the gradient of the sum."""
    trace = forward(params, x)
    task, top_dz = output_delta(params, trace, y, loss)
    pen = regularizer.terms(params, trace) if regularizer is not None else Penalty(0.0, None, None)
    dz_list, _ = backprop(params, trace, top_dz, pen.act_grads)
    grad = assemble_gradient(params, trace, dz_list)
    if pen.param_grad is not None:
        grad += pen.param_grad
    if not (np.isfinite(task) and np.isfinite(pen.value) and np.all(np.isfinite(grad))):
        raise NumericError("non-finite objective or gradient")
    return Objective(float(task), float(task) + pen.value, grad, trace)
