"""Adam with bias correction, global-norm clipping and a freeze mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(store: ParameterStore, names) -> float:
    return float(np.sqrt(sum(np.sum(store[n].grad ** 2) for n in names)))


def adam_step(store: ParameterStore, state: AdamState) -> float:
    """Apply one Adam update to every non-frozen parameter and clear all grads.

    Returns the pre-clipping global gradient norm.
    """
    names = store.trainable()
    norm = global_norm(store, names)
    factor = 1.0
    if state.clip_norm is not None and norm > state.clip_norm:
        factor = state.clip_norm / norm

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in names:
        p = store[name]
        g = p.grad * factor
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            v = state.v[name] = np.zeros_like(p.value)
        if m.shape != p.value.shape or v.shape != p.value.shape:
            raise ValueError(f"moment shape drift for {name}: {m.shape} vs {p.value.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    store.zero_grad()
    return norm
