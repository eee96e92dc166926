from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Gradients, NetworkParams


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    """Scale all gradients by max_norm / ||g|| when the global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    clipped = {k: (g * g.dtype.type(scale)) for k, g in grads.items()}
    # float32 rounding can leave the norm a hair above max_norm
    while global_norm(clipped) > max_norm:
        scale *= 1.0 - 2.0 ** -20
        clipped = {k: (g * g.dtype.type(scale)) for k, g in grads.items()}
    return clipped


@dataclass(frozen=True, eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: NetworkParams, lr: float = 0.00025, **kw) -> AdamState:
        zeros = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        return cls({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, **kw)

    def same_as(self, other: AdamState) -> bool:
        scalars = (self.step, self.lr, self.beta1, self.beta2, self.epsilon)
        if scalars != (other.step, other.lr, other.beta1, other.beta2, other.epsilon):
            return False
        return all(
            self.m[k].tobytes() == other.m[k].tobytes() and self.v[k].tobytes() == other.v[k].tobytes()
            for k in self.m
        )


def adam_step(params: NetworkParams, grads: Gradients, state: AdamState) -> tuple[NetworkParams, AdamState]:
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        dt = p.dtype.type
        m = dt(b1) * state.m[name] + dt(1.0 - b1) * g
        v = dt(b2) * state.v[name] + dt(1.0 - b2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        new_params[name] = p - dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.epsilon))
        new_m[name], new_v[name] = m, v
    return params.replace(new_params), AdamState(
        new_m, new_v, t, state.lr, state.beta1, state.beta2, state.epsilon
    )
