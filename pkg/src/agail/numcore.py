"""Small dense-network toolkit: MLP forward/backward/JVP, Adam, serialization.

Everything is float64 numpy. Inputs may be a single vector ``(in_dim,)`` or a
batch ``(n, in_dim)``; batch gradients are summed over rows, so callers that
want a mean pass an upstream gradient already divided by ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError, TrainingError

ACTIVATIONS = ("tanh", "identity", "sigmoid")
DEFAULT_HIDDEN = (100, 100, 100)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_slope(kind, y):
    """Derivative of the activation expressed through its output ``y``."""
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "sigmoid":
        return y * (1.0 - y)
    return None  # identity


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InputError(
                f"layer shapes disagree: weight {self.weight.shape}, bias {self.bias.shape}"
            )


@dataclass
class Mlp:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise InputError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise InputError(
                    f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])


def init_mlp(sizes, rng, hidden_activation="tanh", output_activation="identity",
             output_scale=1.0) -> Mlp:
    """Build an Mlp with weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``sizes`` lists every width including input and output, e.g. ``(4, 100, 100, 100, 2)``.
    ``output_scale`` shrinks the final layer; 0 gives an all-zero output layer.
    """
    sizes = list(sizes)
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise InputError(f"invalid layer sizes {sizes}")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        if last:
            w *= output_scale
            b *= output_scale
        layers.append(Layer(w, b, output_activation if last else hidden_activation))
    return Mlp(layers)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(f"input of shape {np.shape(x)} does not match input_dim {net.input_dim}")
    return x, single


class Cache:
    """Layer outputs of one forward pass; activation slopes are computed on first use.

    ``outputs[0]`` is the (batched) input, ``outputs[-1]`` the network output.
    """

    def __init__(self, net, outputs, single):
        self.outputs = outputs
        self.single = single
        self._kinds = [l.activation for l in net.layers]
        self._slopes = None

    @property
    def out(self) -> np.ndarray:
        return self.outputs[-1]

    @property
    def slopes(self):
        if self._slopes is None:
            self._slopes = [_activation_slope(k, y) for k, y in zip(self._kinds, self.outputs[1:])]
        return self._slopes


def forward_cache(net: Mlp, x) -> Cache:
    h, single = _as_batch(net, x)
    outputs = [h]
    for layer in net.layers:
        h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
        outputs.append(h)
    return Cache(net, outputs, single)


def forward(net: Mlp, x) -> np.ndarray:
    cache = forward_cache(net, x)
    return cache.out[0] if cache.single else cache.out


def backward(net: Mlp, x, upstream_grad, cache=None):
    """Gradients of ``<upstream_grad, forward(net, x)>``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a list of
    ``(dW, db)`` per layer, summed over the batch.
    """
    if cache is None:
        cache = forward_cache(net, x)
    outputs, single, slopes = cache.outputs, cache.single, cache.slopes
    g = np.asarray(upstream_grad, dtype=np.float64)
    if single and g.ndim == 1:
        g = g[None, :]
    if g.shape != outputs[-1].shape:
        raise InputError(f"upstream grad shape {np.shape(upstream_grad)} != output shape")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        slope = slopes[i]
        gz = g if slope is None else g * slope
        grads[i] = (gz.T @ outputs[i], gz.sum(axis=0))
        g = gz @ layer.weight
    return grads, (g[0] if single else g)


def jvp(net: Mlp, x, direction, cache=None, input_tangent=None) -> np.ndarray:
    """Directional derivative of the output w.r.t. parameters along ``direction``.

    ``direction`` is a list of ``(dW, db)`` matching the layers (or a flat vector).
    ``input_tangent`` adds a simultaneous perturbation of the input.
    """
    if cache is None:
        cache = forward_cache(net, x)
    outputs, single, slopes = cache.outputs, cache.single, cache.slopes
    if isinstance(direction, np.ndarray):
        direction = unflatten_like(net, direction)
    dh = None
    if input_tangent is not None:
        dh = np.asarray(input_tangent, dtype=np.float64).reshape(outputs[0].shape)
    for i, (layer, (dw, db)) in enumerate(zip(net.layers, direction)):
        dz = outputs[i] @ dw.T + db
        if dh is not None:
            dz += dh @ layer.weight.T
        slope = slopes[i]
        dh = dz if slope is None else dz * slope
    return dh[0] if single else dh


def flatten_params(net: Mlp) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in net.layers])


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def unflatten_like(net: Mlp, flat):
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != net.num_params:
        raise InputError(f"flat vector has {flat.size} entries, net has {net.num_params}")
    out, pos = [], 0
    for l in net.layers:
        dw = flat[pos:pos + l.weight.size].reshape(l.weight.shape)
        pos += l.weight.size
        db = flat[pos:pos + l.bias.size]
        pos += l.bias.size
        out.append((dw, db))
    return out


def set_flat_params(net: Mlp, flat) -> None:
    for layer, (w, b) in zip(net.layers, unflatten_like(net, flat)):
        layer.weight = w.copy()
        layer.bias = b.copy()


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update on flat arrays. Mutates and returns ``state``.

    Returns ``(new_params, state)``; ``params`` itself is not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise InputError(f"param shape {params.shape} != grad shape {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient passed to adam_step")
    if state.first_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)
    elif state.first_moment.shape != params.shape:
        raise InputError("Adam moments do not match parameter shape")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    m_hat = state.first_moment / (1 - state.beta1 ** t)
    v_hat = state.second_moment / (1 - state.beta2 ** t)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon), state


# ---------------------------------------------------------------- serialization
#
# Text format, one network per block:
#   mlp <n_layers>
#   layer <out> <in> <activation>
#   <out*in weight values, row-major, space separated>
#   <out bias values>
# Values are written with repr(), which round-trips float64 exactly.


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_mlp(net: Mlp) -> list[str]:
    lines = [f"mlp {len(net.layers)}"]
    for l in net.layers:
        out_dim, in_dim = l.weight.shape
        lines.append(f"layer {out_dim} {in_dim} {l.activation}")
        lines.append(_fmt(l.weight))
        lines.append(_fmt(l.bias))
    return lines


def _floats(text, count, lineno):
    try:
        vals = np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", line=lineno) from None
    if vals.size != count:
        raise ParseError(f"expected {count} values, found {vals.size}", line=lineno)
    return vals


def parse_mlp(lines, start=0):
    """Parse a network block from ``lines`` beginning at index ``start``.

    Returns ``(net, next_index)``. Line numbers in errors are 1-based.
    """
    def get(i):
        if i >= len(lines):
            raise ParseError("unexpected end of file inside network block", line=i + 1)
        return lines[i]

    head = get(start).split()
    if len(head) != 2 or head[0] != "mlp" or not head[1].isdigit():
        raise ParseError(f"expected 'mlp <n>', got {get(start)!r}", line=start + 1)
    i = start + 1
    layers = []
    for _ in range(int(head[1])):
        parts = get(i).split()
        if len(parts) != 4 or parts[0] != "layer":
            raise ParseError(f"expected layer header, got {get(i)!r}", line=i + 1)
        try:
            out_dim, in_dim = int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError("layer dims must be integers", line=i + 1) from None
        w = _floats(get(i + 1), out_dim * in_dim, i + 2).reshape(out_dim, in_dim)
        b = _floats(get(i + 2), out_dim, i + 3)
        try:
            layers.append(Layer(w, b, parts[3]))
        except InputError as exc:
            raise ParseError(str(exc), line=i + 1) from None
        i += 3
    try:
        return Mlp(layers), i
    except InputError as exc:
        raise ParseError(str(exc), line=start + 1) from None
