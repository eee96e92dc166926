"""Layer specs, parameter init, forward pass with a tape, and reverse-mode backward.

Tensors are plain numpy arrays (float32 unless the params were cast). Images use
NHWC layout; a single observation (H, W, C) is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class Dense:
    out_units: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class DuelingHead:
    n_actions: int


@dataclass(frozen=True)
class LinearHead:
    n_actions: int


Layer = Union[Conv, Dense, ReLU, DuelingHead, LinearHead]
HEADS = (DuelingHead, LinearHead)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes

    @property
    def n_actions(self) -> int:
        return self.layers[-1].n_actions

    @cached_property
    def shapes(self) -> list[tuple[int, ...]]:
        return self.layer_shapes()

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every layer (batch dim excluded). Raises ShapeError."""
        if not self.layers:
            raise ShapeError("network has no layers")
        heads = [i for i, layer in enumerate(self.layers) if isinstance(layer, HEADS)]
        if heads != [len(self.layers) - 1]:
            raise ShapeError("exactly one head layer is required and it must be last")
        shape = self.input_shape
        if any(d <= 0 for d in shape):
            raise ShapeError(f"bad input shape {shape}")
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv needs (H, W, C) input, got {shape}")
                h, w, _ = shape
                k, s = layer.kernel, layer.stride
                if k <= 0 or s <= 0 or layer.out_channels <= 0:
                    raise ShapeError(f"layer {i}: bad conv hyperparameters {layer}")
                if k > h or k > w:
                    raise ShapeError(f"layer {i}: kernel {k} larger than input {shape}")
                shape = ((h - k) // s + 1, (w - k) // s + 1, layer.out_channels)
            elif isinstance(layer, Dense):
                if layer.out_units <= 0:
                    raise ShapeError(f"layer {i}: bad dense width {layer.out_units}")
                shape = (layer.out_units,)
            elif isinstance(layer, ReLU):
                pass
            elif isinstance(layer, HEADS):
                if layer.n_actions <= 0:
                    raise ShapeError(f"layer {i}: head needs at least one action")
                shape = (layer.n_actions,)
            else:
                raise ShapeError(f"layer {i}: unknown layer {layer!r}")
            out.append(shape)
        return out

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        prev = self.input_shape
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes)):
            if isinstance(layer, Conv):
                w = (layer.kernel, layer.kernel, prev[2], layer.out_channels)
                b = (layer.out_channels,)
            elif isinstance(layer, Dense):
                w, b = (int(np.prod(prev)), layer.out_units), (layer.out_units,)
            elif isinstance(layer, DuelingHead):
                # column 0 is the state value, the rest are advantages
                w, b = (int(np.prod(prev)), layer.n_actions + 1), (layer.n_actions + 1,)
            elif isinstance(layer, LinearHead):
                w, b = (int(np.prod(prev)), layer.n_actions), (layer.n_actions,)
            else:
                w = None
            if w is not None:
                shapes[f"layer{i}.weight"] = w
                shapes[f"layer{i}.bias"] = b
            prev = shape
        return shapes


def default_trunk() -> tuple[Layer, ...]:
    return (
        Conv(8, 5, 2), ReLU(),
        Conv(16, 3, 2), ReLU(),
        Conv(16, 3, 1), ReLU(),
        Dense(128), ReLU(),
    )


def q_network_spec(n_actions: int, dueling: bool, input_shape=(24, 32, 3)) -> NetworkSpec:
    head = DuelingHead(n_actions) if dueling else LinearHead(n_actions)
    return NetworkSpec(tuple(input_shape), default_trunk() + (head,))


@dataclass(frozen=True, eq=False)
class NetworkParams:
    spec: NetworkSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.spec.param_shapes()
        if set(expected) != set(self.tensors):
            raise ShapeError(f"parameter names {sorted(self.tensors)} do not match spec {sorted(expected)}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise ShapeError(f"{name}: shape {t.shape} != {shape}")
            t.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def replace(self, tensors: dict[str, np.ndarray]) -> NetworkParams:
        return NetworkParams(self.spec, tensors)

    def astype(self, dtype) -> NetworkParams:
        return NetworkParams(self.spec, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def same_as(self, other: NetworkParams) -> bool:
        """Bit-exact equality of spec and every tensor."""
        return self.spec == other.spec and all(
            self.tensors[k].dtype == other.tensors[k].dtype
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )


Gradients = dict[str, np.ndarray]


def init_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return NetworkParams(spec, tensors)


def dueling_combine(v, adv):
    """Q = V + A - mean(A). Accepts a scalar/vector pair or batched (B,), (B, A) arrays."""
    adv = np.asarray(adv)
    if adv.shape[-1] == 0:
        raise ValueError("advantage vector is empty")
    v = np.asarray(v)
    if adv.ndim == 2:
        v = v.reshape(-1, 1)
    return v + (adv - adv.mean(axis=-1, keepdims=True))


@dataclass(eq=False)
class ComputationRecord:
    """Per-layer cached values from one forward pass; consumed by one backward."""
    params: NetworkParams
    caches: list = field(default_factory=list)
    out_shape: tuple = ()
    squeeze: bool = False
    used: bool = False


def _conv_forward(x, w, b, stride):
    k = w.shape[0]
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo = win.shape[:3]
    # (B, Ho, Wo, C, k, k) -> (B*Ho*Wo, k*k*C) matching the (k, k, C, out) weight layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout, cols, x_shape, w, stride, need_dx):
    k, cout = w.shape[0], w.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    n, ho, wo = dout.shape[:3]
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, x_shape[3])
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def forward(params: NetworkParams, obs, record: bool = True):
    """Run the network; returns (qvalues, tape). Tape is None when record=False."""
    spec = params.spec
    x = np.asarray(obs)
    squeeze = x.shape == spec.input_shape
    if squeeze:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"observation shape {x.shape[1:]} != network input {spec.input_shape}")
    dtype = params.tensors[next(iter(params.tensors))].dtype
    x = x.astype(dtype, copy=False)
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite network input")
    caches = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            x, cols = _conv_forward(x, params[f"layer{i}.weight"], params[f"layer{i}.bias"], layer.stride)
            caches.append((cols, None))
        elif isinstance(layer, ReLU):
            mask = x > 0
            x = x * mask
            caches.append(mask)
        else:
            flat = x.reshape(x.shape[0], -1)
            in_shape = x.shape
            x = flat @ params[f"layer{i}.weight"] + params[f"layer{i}.bias"]
            caches.append((flat, in_shape))
            if isinstance(layer, DuelingHead):
                x = dueling_combine(x[:, 0], x[:, 1:])
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite activation in forward pass")
    q = x[0] if squeeze else x
    if not record:
        return q, None
    return q, ComputationRecord(params, caches, q.shape, squeeze)


def backward(tape: ComputationRecord, loss_grad) -> Gradients:
    """Gradient of sum(loss_grad * q) with respect to every parameter."""
    if tape.used:
        raise StaleTapeError("tape already consumed by a previous backward")
    g = np.asarray(loss_grad)
    if g.shape != tape.out_shape:
        raise ShapeError(f"loss gradient shape {g.shape} != output shape {tape.out_shape}")
    tape.used = True
    params = tape.params
    spec = params.spec
    g = g[None] if tape.squeeze else g
    dtype = params.tensors[next(iter(params.tensors))].dtype
    g = g.astype(dtype)
    shapes = spec.shapes
    grads: Gradients = {}
    first_param = next(i for i, l in enumerate(spec.layers) if not isinstance(l, ReLU))
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = tape.caches[i]
        if isinstance(layer, ReLU):
            if g is not None:  # None below the first parametrised layer
                g = g * cache
            continue
        w = params[f"layer{i}.weight"]
        need_dx = i > first_param
        if isinstance(layer, Conv):
            in_shape = (g.shape[0],) + (spec.input_shape if i == 0 else shapes[i - 1])
            g, dw, db = _conv_backward(g, cache[0], in_shape, w, layer.stride, need_dx)
        else:
            flat, in_shape = cache
            if isinstance(layer, DuelingHead):
                dv = g.sum(axis=1, keepdims=True)
                dadv = g - g.mean(axis=1, keepdims=True)
                g = np.concatenate([dv, dadv], axis=1)
            dw = flat.T @ g
            db = g.sum(axis=0)
            g = (g @ w.T).reshape(in_shape) if need_dx else None
        grads[f"layer{i}.weight"] = dw.astype(dtype, copy=False)
        grads[f"layer{i}.bias"] = db.astype(dtype, copy=False)
    return {name: grads[name] for name in params.names()}
