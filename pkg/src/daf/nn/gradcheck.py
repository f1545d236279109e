"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from collections.abc import Callable, Iterable

import numpy as np

from .params import ParameterStore
from .tensor import Tensor


class NonDeterministicError(RuntimeError):
    pass


def grad_check(
    f: Callable[[], Tensor],
    store: ParameterStore,
    h: float = 1e-5,
    names: Iterable[str] | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` rebuilds a scalar loss from the current values in ``store``.  Each
    coordinate's error is |a - n| / max(|a|, |n|, 1e-8).  With ``max_coords``
    set, at most that many coordinates per parameter are sampled.
    """
    names = list(store) if names is None else list(names)
    store.zero_grad()
    loss = f()
    base = float(loss.value)
    loss.backward()
    analytic = {n: store[n].grad.copy() for n in names}
    store.zero_grad()

    if float(f().value) != base:
        raise NonDeterministicError("loss changed on re-evaluation at the same point")

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        p = store[name]
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        grad = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().value)
            flat[i] = orig - h
            down = float(f().value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = grad[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
