"""Differentiable layers and primitives with hand-derived backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor


class EmptySequenceError(ValueError):
    pass


def _accumulate(t: Tensor, g):
    if t.requires_grad:
        t.grad += g


def sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --------------------------------------------------------------------------
# Elementwise and structural


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def backward(out):
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    return Tensor(a.value + b.value, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(out):
        _accumulate(a, c * out.grad)

    return Tensor(c * a.value, (a,), backward)


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""

    def backward(out):
        _accumulate(a, np.broadcast_to(out.grad, a.shape))

    return Tensor(a.value.sum(), (a,), backward)


def mean(a: Tensor) -> Tensor:
    return scale(total(a), 1.0 / a.value.size)


def dot(a: Tensor, b) -> Tensor:
    """Inner product of two same-shape tensors (``b`` may be an array)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: {a.shape} vs {b.shape}")

    def backward(out):
        _accumulate(a, out.grad * b.value)
        _accumulate(b, out.grad * a.value)

    return Tensor(np.sum(a.value * b.value), (a, b), backward)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the last axis; leading shapes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim == 0 or a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: {a.shape} and {b.shape}")
    p = a.shape[-1]

    def backward(out):
        _accumulate(a, out.grad[..., :p])
        _accumulate(b, out.grad[..., p:])

    return Tensor(np.concatenate([a.value, b.value], axis=-1), (a, b), backward)


def stack(items: list[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    items = [as_tensor(t) for t in items]
    if not items:
        raise ShapeError("stack of nothing")

    def backward(out):
        for i, t in enumerate(items):
            _accumulate(t, out.grad[i])

    return Tensor(np.stack([t.value for t in items]), items, backward)


def index(a: Tensor, i: int) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a.grad[i] += out.grad

    return Tensor(a.value[i], (a,), backward)


def take_rows(a: Tensor, rows) -> Tensor:
    """a[rows] for an integer index array; repeated rows accumulate."""
    rows = np.asarray(rows, dtype=np.int64)

    def backward(out):
        if a.requires_grad:
            np.add.at(a.grad, rows, out.grad)

    return Tensor(a.value[rows], (a,), backward)


def concat_rows(items: list[Tensor]) -> Tensor:
    """Join 2-D tensors along the first axis."""
    items = [as_tensor(t) for t in items]
    if not items:
        raise ShapeError("concat_rows of nothing")
    bounds = np.cumsum([0] + [t.shape[0] for t in items])

    def backward(out):
        for t, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            _accumulate(t, out.grad[lo:hi])

    return Tensor(np.concatenate([t.value for t in items]), items, backward)


def neg_log_at(q: Tensor, i: int) -> Tensor:
    """-log q[i] for a probability vector q."""
    qi = q.value[i]

    def backward(out):
        if q.requires_grad:
            q.grad[i] -= out.grad / qi

    return Tensor(-np.log(qi), (q,), backward)


# --------------------------------------------------------------------------
# Layers


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = W x + b. ``x`` may carry leading batch axes: (..., d_in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.value.ndim != 2 or x.shape[-1:] != W.shape[1:] or b.shape != W.shape[:1]:
        raise ShapeError(f"affine: x{x.shape} W{W.shape} b{b.shape}")

    def backward(out):
        g = out.grad
        if x.requires_grad:
            x.grad += g @ W.value
        if W.requires_grad:
            W.grad += g.reshape(-1, g.shape[-1]).T @ x.value.reshape(-1, x.shape[-1])
        if b.requires_grad:
            b.grad += g.reshape(-1, g.shape[-1]).sum(axis=0)

    return Tensor(x.value @ W.value.T + b.value, (x, W, b), backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"vocabulary overflow: id {int(ids.max())} >= {vocab}")

    def backward(out):
        if table.requires_grad:
            np.add.at(table.grad, ids, out.grad)

    return Tensor(table.value[ids], (table,), backward)


def conv1d(frames: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 1-D cross-correlation over time followed by ReLU.

    frames: (k, d_in); kernels: (d_out, w, d_in); bias: (d_out,).
    Returns (m, d_out) with m = (k - w) // stride + 1.
    """
    frames, kernels = as_tensor(frames), as_tensor(kernels)
    if bias is None:
        bias = as_tensor(np.zeros(kernels.shape[0]))
    k, d_in = frames.shape
    d_out, w, d_k = kernels.shape
    if d_k != d_in or bias.shape != (d_out,):
        raise ShapeError(f"conv1d: frames{frames.shape} kernels{kernels.shape} bias{bias.shape}")
    if stride < 1:
        raise ValueError("stride must be positive")
    if k < w:
        raise EmptySequenceError(f"utterance too short for kernel: {k} frames < width {w}")
    m = (k - w) // stride + 1
    starts = stride * np.arange(m)
    idx = starts[:, None] + np.arange(w)[None, :]
    patches = frames.value[idx].reshape(m, w * d_in)
    flat_k = kernels.value.reshape(d_out, w * d_in)
    pre = patches @ flat_k.T + bias.value
    out_val = np.maximum(pre, 0.0)

    def backward(out):
        g = out.grad * (pre > 0)
        if kernels.requires_grad:
            kernels.grad += (g.T @ patches).reshape(d_out, w, d_in)
        if bias.requires_grad:
            bias.grad += g.sum(axis=0)
        if frames.requires_grad:
            gp = (g @ flat_k).reshape(m, w, d_in)
            np.add.at(frames.grad, idx, gp)

    return Tensor(out_val, (frames, kernels, bias), backward)


def lstm_sequence(inputs: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM from zero state over ``inputs`` (n, d_in); return last h.

    Gate blocks in Wx (4H, d_in), Wh (4H, H), b (4H,) are ordered
    input, forget, output, candidate.
    """
    inputs, Wx, Wh, b = as_tensor(inputs), as_tensor(Wx), as_tensor(Wh), as_tensor(b)
    if inputs.value.ndim != 2 or inputs.shape[0] == 0:
        raise EmptySequenceError("empty utterance")
    n, d_in = inputs.shape
    H = Wh.shape[1]
    if Wx.shape != (4 * H, d_in) or Wh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: inputs{inputs.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}")

    x = inputs.value
    xw = x @ Wx.value.T + b.value
    hs = np.zeros((n + 1, H))
    cs = np.zeros((n + 1, H))
    gates = np.empty((n, 4 * H))
    tanh_c = np.empty((n, H))
    wh = Wh.value
    for t in range(n):
        z = xw[t] + wh @ hs[t]
        ifo = sigmoid_np(z[: 3 * H])
        cand = np.tanh(z[3 * H:])
        gates[t, : 3 * H] = ifo
        gates[t, 3 * H:] = cand
        cs[t + 1] = ifo[H:2 * H] * cs[t] + ifo[:H] * cand
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = ifo[2 * H:3 * H] * tanh_c[t]

    def backward(out):
        dz_all = np.empty((n, 4 * H))
        dh = out.grad.copy()
        dc = np.zeros(H)
        for t in range(n - 1, -1, -1):
            i_g = gates[t, :H]
            f_g = gates[t, H:2 * H]
            o_g = gates[t, 2 * H:3 * H]
            cand = gates[t, 3 * H:]
            dc = dc + dh * o_g * (1.0 - tanh_c[t] ** 2)
            dz = dz_all[t]
            dz[:H] = dc * cand * i_g * (1.0 - i_g)
            dz[H:2 * H] = dc * cs[t] * f_g * (1.0 - f_g)
            dz[2 * H:3 * H] = dh * tanh_c[t] * o_g * (1.0 - o_g)
            dz[3 * H:] = dc * i_g * (1.0 - cand ** 2)
            dh = wh.T @ dz
            dc = dc * f_g
        if Wx.requires_grad:
            Wx.grad += dz_all.T @ x
        if Wh.requires_grad:
            Wh.grad += dz_all.T @ hs[:-1]
        if b.requires_grad:
            b.grad += dz_all.sum(axis=0)
        if inputs.requires_grad:
            inputs.grad += dz_all @ Wx.value

    return Tensor(hs[n].copy(), (inputs, Wx, Wh, b), backward)


def lstm_batch(inputs: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> Tensor:
    """``lstm_sequence`` over a batch of equal-length sequences (B, n, d_in) -> (B, H)."""
    inputs, Wx, Wh, b = as_tensor(inputs), as_tensor(Wx), as_tensor(Wh), as_tensor(b)
    if inputs.value.ndim != 3 or 0 in inputs.shape:
        raise EmptySequenceError("empty utterance batch")
    B, n, d_in = inputs.shape
    H = Wh.shape[1]
    if Wx.shape != (4 * H, d_in) or Wh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: inputs{inputs.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}")

    x = inputs.value
    xw = x @ Wx.value.T + b.value
    hs = np.zeros((n + 1, B, H))
    cs = np.zeros((n + 1, B, H))
    gates = np.empty((n, B, 4 * H))
    tanh_c = np.empty((n, B, H))
    wh = Wh.value
    for t in range(n):
        z = xw[:, t] + hs[t] @ wh.T
        ifo = sigmoid_np(z[:, : 3 * H])
        cand = np.tanh(z[:, 3 * H:])
        gates[t, :, : 3 * H] = ifo
        gates[t, :, 3 * H:] = cand
        cs[t + 1] = ifo[:, H:2 * H] * cs[t] + ifo[:, :H] * cand
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = ifo[:, 2 * H:3 * H] * tanh_c[t]

    def backward(out):
        dz_all = np.empty((n, B, 4 * H))
        dh = out.grad.copy()
        dc = np.zeros((B, H))
        for t in range(n - 1, -1, -1):
            i_g = gates[t, :, :H]
            f_g = gates[t, :, H:2 * H]
            o_g = gates[t, :, 2 * H:3 * H]
            cand = gates[t, :, 3 * H:]
            dc = dc + dh * o_g * (1.0 - tanh_c[t] ** 2)
            dz = dz_all[t]
            dz[:, :H] = dc * cand * i_g * (1.0 - i_g)
            dz[:, H:2 * H] = dc * cs[t] * f_g * (1.0 - f_g)
            dz[:, 2 * H:3 * H] = dh * tanh_c[t] * o_g * (1.0 - o_g)
            dz[:, 3 * H:] = dc * i_g * (1.0 - cand ** 2)
            dh = dz @ wh
            dc = dc * f_g
        if Wx.requires_grad:
            Wx.grad += np.einsum("tbk,btd->kd", dz_all, x)
        if Wh.requires_grad:
            Wh.grad += np.einsum("tbk,tbh->kh", dz_all, hs[:-1])
        if b.requires_grad:
            b.grad += dz_all.sum(axis=(0, 1))
        if inputs.requires_grad:
            inputs.grad += np.einsum("tbk,kd->btd", dz_all, Wx.value)

    return Tensor(hs[n].copy(), (inputs, Wx, Wh, b), backward)


# --------------------------------------------------------------------------
# Activations and losses


def softmax(z: Tensor) -> Tensor:
    z = as_tensor(z)
    if not np.all(np.isfinite(z.value)):
        raise ValueError("softmax of non-finite input")
    e = np.exp(z.value - z.value.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(out):
        g = out.grad
        _accumulate(z, p * (g - np.sum(g * p, axis=-1, keepdims=True)))

    return Tensor(p, (z,), backward)


def sigmoid(z: Tensor) -> Tensor:
    z = as_tensor(z)
    s = sigmoid_np(np.atleast_1d(z.value)).reshape(z.shape)

    def backward(out):
        _accumulate(z, out.grad * s * (1.0 - s))

    return Tensor(s, (z,), backward)


def softplus_np(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def neg_log_sigmoid(z: Tensor) -> Tensor:
    """-log(sigmoid(z)) elementwise, stable for large |z|."""
    z = as_tensor(z)
    val = softplus_np(-z.value)

    def backward(out):
        s = sigmoid_np(np.atleast_1d(z.value)).reshape(z.shape)
        _accumulate(z, -out.grad * (1.0 - s))

    return Tensor(val, (z,), backward)


def gate_mix(q: Tensor, stacked: Tensor) -> Tensor:
    """Mixture sum_a q[a] * stacked[a] over the leading axis of ``stacked``."""
    q, stacked = as_tensor(q), as_tensor(stacked)
    if q.value.ndim != 1 or stacked.shape[0] != q.shape[0]:
        raise ShapeError(f"gate_mix: q{q.shape} vs stacked{stacked.shape}")
    val = np.tensordot(q.value, stacked.value, axes=(0, 0))

    def backward(out):
        if q.requires_grad:
            nd = stacked.value.ndim
            q.grad += np.tensordot(stacked.value, out.grad, axes=(tuple(range(1, nd)), tuple(range(nd - 1))))
        if stacked.requires_grad:
            stacked.grad += np.multiply.outer(q.value, out.grad)

    return Tensor(val, (q, stacked), backward)
