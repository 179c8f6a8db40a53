"""Dense feed-forward network with explicit forward/backward passes and masked Adam.

All parameters of a network live in one flat float64 vector (``NetworkParams.theta``);
per-layer weight matrices and bias vectors are views into it. Gradients, Adam
moments, importances and freeze masks use the same flat layout, so a global
scalar index means the same thing everywhere.

Layer ``i`` computes ``Y[i+1] = f(Y[i] @ W.T + B)`` with ``W`` of shape
``(output_dim, input_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidInputError, NumericError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax", "identity")
LOSSES = ("cross_entropy", "mse")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidInputError(f"layer dims must be >= 1, got {self.input_dim}x{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")

    @property
    def size(self) -> int:
        return self.output_dim * self.input_dim + self.output_dim


def mlp_specs(input_dim: int, hidden, output_dim: int, activation: str = "relu",
              output_activation: str = "softmax") -> list[LayerSpec]:
    dims = [input_dim, *hidden, output_dim]
    specs = [LayerSpec(a, b, activation) for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], output_activation))
    return specs


def _check_specs(specs) -> None:
    if not specs:
        raise InvalidInputError("a network needs at least one layer")
    for i, (a, b) in enumerate(zip(specs[:-1], specs[1:])):
        if a.output_dim != b.input_dim:
            raise DimensionError(f"layer {i} outputs {a.output_dim} but layer {i + 1} expects {b.input_dim}")
    for i, s in enumerate(specs[:-1]):
        if s.activation == "softmax":
            raise InvalidInputError(f"softmax is only allowed on the final layer (layer {i})")


class NetworkParams:
    """Weights and biases of an MLP backed by a single flat vector.

    The flat layout is, per layer in order: ``W`` row-major, then ``B``.
    """

    def __init__(self, specs, theta: np.ndarray | None = None):
        specs = tuple(specs)
        _check_specs(specs)
        self.specs = specs
        self.offsets = np.cumsum([0] + [s.size for s in specs])
        if theta is None:
            theta = np.zeros(int(self.offsets[-1]))
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.offsets[-1],):
            raise DimensionError(f"expected {self.offsets[-1]} parameters, got shape {theta.shape}")
        self.theta = theta
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for spec, start in zip(specs, self.offsets[:-1]):
            n_w = spec.output_dim * spec.input_dim
            self.weights.append(theta[start:start + n_w].reshape(spec.output_dim, spec.input_dim))
            self.biases.append(theta[start + n_w:start + spec.size])

    @classmethod
    def init(cls, specs, rng: np.random.Generator) -> "NetworkParams":
        """He-style uniform init scaled by fan-in; biases start at zero."""
        params = cls(specs)
        for spec, w in zip(params.specs, params.weights):
            limit = np.sqrt(6.0 / spec.input_dim)
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return params

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.specs, self.theta.copy())

    def like(self, theta: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.specs, theta)

    def layer_slice(self, layer: int) -> slice:
        return slice(int(self.offsets[layer]), int(self.offsets[layer + 1]))

    def layer_of(self) -> np.ndarray:
        """Layer number of every flat index."""
        return np.repeat(np.arange(self.n_layers), [s.size for s in self.specs])

    def index(self, layer: int, row: int, col: int | None = None) -> int:
        """Global flat index of ``W[layer][row, col]``, or of ``B[layer][row]`` when col is None."""
        spec = self.specs[layer]
        base = int(self.offsets[layer])
        if col is None:
            if not 0 <= row < spec.output_dim:
                raise DimensionError(f"bias index {row} out of range")
            return base + spec.output_dim * spec.input_dim + row
        if not (0 <= row < spec.output_dim and 0 <= col < spec.input_dim):
            raise DimensionError(f"weight index ({row}, {col}) out of range")
        return base + row * spec.input_dim + col

    def locate(self, idx: int) -> tuple[int, int, int | None]:
        """Inverse of :meth:`index`: ``(layer, row, col)``, col None for biases."""
        if not 0 <= idx < self.size:
            raise DimensionError(f"flat index {idx} out of range")
        layer = int(np.searchsorted(self.offsets, idx, side="right") - 1)
        spec = self.specs[layer]
        local = idx - int(self.offsets[layer])
        n_w = spec.output_dim * spec.input_dim
        if local < n_w:
            return layer, local // spec.input_dim, local % spec.input_dim
        return layer, local - n_w, None


def flat_view(params: NetworkParams) -> np.ndarray:
    """The flat parameter vector (a live view, not a copy)."""
    return params.theta


def unflatten(specs, vector: np.ndarray) -> NetworkParams:
    return NetworkParams(specs, np.array(vector, dtype=np.float64))


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list = field(default_factory=list)  # Z_i, one per layer
    act: list = field(default_factory=list)  # Y_i, one per layer

    @property
    def output(self) -> np.ndarray:
        return self.act[-1]

    def layer_input(self, layer: int) -> np.ndarray:
        return self.inputs if layer == 0 else self.act[layer - 1]


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "softmax":
        return _softmax(z)
    return z


def _activation_vjp(dy, z, y, kind):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=1, keepdims=True))
    return dy


def forward(params: NetworkParams, batch_x: np.ndarray) -> ForwardTrace:
    x = np.asarray(batch_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.specs[0].input_dim:
        raise DimensionError(f"input of shape {x.shape} does not match input_dim {params.specs[0].input_dim}")
    trace = ForwardTrace(inputs=x)
    y = x
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        z = y @ w.T + b
        y = _activate(z, spec.activation)
        trace.pre.append(z)
        trace.act.append(y)
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite network output")
    return trace


def _check_targets(params, trace, batch_y, loss):
    n = trace.inputs.shape[0]
    if loss == "cross_entropy":
        labels = np.asarray(batch_y)
        if labels.shape != (n,):
            raise DimensionError(f"expected {n} integer labels, got shape {labels.shape}")
        if params.specs[-1].activation != "softmax":
            raise InvalidInputError("cross_entropy requires a softmax output layer")
        return labels.astype(np.intp)
    if loss == "mse":
        target = np.asarray(batch_y, dtype=np.float64)
        if target.ndim == 1 and params.specs[-1].output_dim == 1:
            target = target[:, None]
        if target.shape != trace.output.shape:
            raise DimensionError(f"target shape {target.shape} != output shape {trace.output.shape}")
        return target
    raise InvalidInputError(f"unknown loss {loss!r}")


def output_delta(params: NetworkParams, trace: ForwardTrace, batch_y, loss: str = "cross_entropy",
                 reduction: str = "mean", with_dy: bool = False):
    """Loss value and ``d loss / d Z_N`` for the final layer.

    With ``reduction="sum"`` the rows of the returned delta are per-sample gradients.
    ``with_dy`` additionally returns ``d loss / d Y_N``.
    """
    target = _check_targets(params, trace, batch_y, loss)
    out = trace.output
    n = out.shape[0]
    scale = 1.0 / n if reduction == "mean" else 1.0
    if loss == "cross_entropy":
        rows = np.arange(n)
        picked = np.maximum(out[rows, target], np.finfo(np.float64).tiny)
        value = -np.sum(np.log(picked)) * scale
        dz = out.copy()
        dz[rows, target] -= 1.0
        if not with_dy:
            return value, dz * scale
        dy = np.zeros_like(out)
        dy[rows, target] = -scale / picked
        return value, dz * scale, dy
    diff = out - target
    value = np.sum(diff * diff) * scale
    dy = 2.0 * diff * scale
    dz = _activation_vjp(dy, trace.pre[-1], out, params.specs[-1].activation)
    return (value, dz, dy) if with_dy else (value, dz)


def backprop(params: NetworkParams, trace: ForwardTrace, top_dz: np.ndarray | None,
             act_grads=None):
    """Propagate gradients down the network.

    ``top_dz`` is ``d/dZ_N`` from the loss (or None); ``act_grads`` optionally adds
    ``d/dY_i`` for each layer (None entries are skipped). Returns the per-layer
    ``d/dZ_i`` and ``d/dY_i`` lists.
    """
    n_layers = params.n_layers
    dz_list = [None] * n_layers
    dy_list = [None] * n_layers
    dy_down = None
    for i in range(n_layers - 1, -1, -1):
        dy = dy_down
        extra = act_grads[i] if act_grads is not None else None
        if extra is not None:
            dy = extra if dy is None else dy + extra
        if dy is None:
            dy_list[i] = np.zeros_like(trace.act[i])
            dz = top_dz if top_dz is not None else np.zeros_like(trace.pre[i])
        else:
            dy_list[i] = dy
            dz = _activation_vjp(dy, trace.pre[i], trace.act[i], params.specs[i].activation)
            if i == n_layers - 1 and top_dz is not None:
                dz = dz + top_dz
        dz_list[i] = dz
        if i > 0:
            dy_down = dz @ params.weights[i]
    return dz_list, dy_list


def assemble_gradient(params: NetworkParams, trace: ForwardTrace, dz_list) -> np.ndarray:
    grad = np.empty(params.size)
    g = params.like(grad)
    for i, dz in enumerate(dz_list):
        g.weights[i][...] = dz.T @ trace.layer_input(i)
        g.biases[i][...] = dz.sum(axis=0)
    return grad


def backward(params: NetworkParams, trace: ForwardTrace, batch_y, loss: str = "cross_entropy",
             act_grads=None):
    """Returns ``(loss_value, flat_gradient, neuron_grads)``.

    ``neuron_grads[i]`` is ``d objective / d Y_i`` for layer ``i`` (its output),
    including any extra ``act_grads`` injected by a regularizer.
    """
    value, top_dz, top_dy = output_delta(params, trace, batch_y, loss, with_dy=True)
    dz_list, dy_list = backprop(params, trace, top_dz, act_grads)
    dy_list[-1] = dy_list[-1] + top_dy
    grad = assemble_gradient(params, trace, dz_list)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericError("non-finite loss or gradient")
    return float(value), grad, dy_list


def loss_value(params: NetworkParams, x, y, loss: str = "cross_entropy") -> float:
    return float(output_delta(params, forward(params, x), y, loss)[0])


def predict(params: NetworkParams, x) -> np.ndarray:
    return np.argmax(forward(params, x).output, axis=1)


@dataclass
class AdamState:
    """Adam moments with a per-entry update counter for bias correction."""

    m: np.ndarray
    v: np.ndarray
    counts: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), np.zeros(size, dtype=np.int64),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: NetworkParams, gradients: np.ndarray, mask: np.ndarray | None,
              state: AdamState) -> NetworkParams:
    """One in-place Adam update restricted to ``mask`` (None means every entry).

    Masked-out entries keep their parameter value, moments and counter untouched,
    so a weight rejoining later resumes its own bias-correction schedule.
    """
    if gradients.shape != params.theta.shape or state.m.shape != params.theta.shape:
        raise DimensionError("gradient/optimizer shape does not match parameters")
    if mask is None:
        idx = slice(None)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != params.theta.shape:
            raise DimensionError(f"mask shape {mask.shape} != parameter shape {params.theta.shape}")
        idx = mask
    state.step += 1
    g = gradients[idx]
    n = state.counts[idx] + 1
    m = state.beta1 * state.m[idx] + (1.0 - state.beta1) * g
    v = state.beta2 * state.v[idx] + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - np.power(state.beta1, n))
    v_hat = v / (1.0 - np.power(state.beta2, n))
    state.counts[idx] = n
    state.m[idx] = m
    state.v[idx] = v
    params.theta[idx] = params.theta[idx] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def per_sample_grad_sq_norms(params: NetworkParams, x, y, loss: str = "cross_entropy") -> np.ndarray:
    """Squared L2 norm of each sample's own loss gradient over all parameters."""
    trace = forward(params, x)
    _, top_dz = output_delta(params, trace, y, loss, reduction="sum")
    dz_list, _ = backprop(params, trace, top_dz)
    total = np.zeros(trace.inputs.shape[0])
    for i, dz in enumerate(dz_list):
        inp = trace.layer_input(i)
        total += np.sum(dz * dz, axis=1) * (np.sum(inp * inp, axis=1) + 1.0)
    return total
