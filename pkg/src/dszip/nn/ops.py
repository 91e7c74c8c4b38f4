"""Differentiable operations on Tensors.

Only what the predictor needs, nothing more. All reductions run in a fixed
order (plain numpy calls on fixed shapes), so repeated evaluation of the same
graph on the same build is bit-identical, which the coder relies on.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make

GELU_C = 0.7978845608  # sqrt(2/pi), truncated; fixed so outputs never drift
GELU_A = 0.044715
LN_EPS = 1e-5


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accum_grad(g @ b.data.T)
        if b.requires_grad or b._parents:
            b.accum_grad(a.data.T @ g)

    return make(out, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (B, n) + (n,)."""
    out = x.data + b.data

    def backward(g):
        if x.requires_grad or x._parents:
            x.accum_grad(g)
        if b.requires_grad or b._parents:
            b.accum_grad(g.sum(axis=0))

    return make(out, (x, b), backward)


def bmm(a: Tensor, w: Tensor) -> Tensor:
    """Per-row matmul: (B, d) x (B, d, e) -> (B, e). Rows stay independent."""
    out = np.matmul(a.data[:, None, :], w.data)[:, 0, :]

    def backward(g):
        if a.requires_grad or a._parents:
            a.accum_grad(np.matmul(g[:, None, :], w.data.transpose(0, 2, 1))[:, 0, :])
        if w.requires_grad or w._parents:
            w.accum_grad(a.data[:, :, None] * g[:, None, :])

    return make(out, (a, w), backward)


def conv1d(x: Tensor, kern: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1-d convolution over the middle axis.

    x: (B, T, C_in), kern: (k, C_in, C_out) with k odd, zero padding. The tap
    loop runs in ascending order in both passes.
    """
    bsz, t, cin = x.data.shape
    k, _, cout = kern.data.shape
    pad = k // 2
    xp = np.zeros((bsz, t + 2 * pad, cin), dtype=x.data.dtype)
    xp[:, pad:pad + t, :] = x.data
    out = np.broadcast_to(bias.data, (bsz, t, cout)).copy()
    flat = xp.reshape(bsz * (t + 2 * pad), cin)
    for j in range(k):
        win = xp[:, j:j + t, :].reshape(bsz * t, cin)
        out += (win @ kern.data[j]).reshape(bsz, t, cout)

    def backward(g):
        g2 = g.reshape(bsz * t, cout)
        if bias.requires_grad or bias._parents:
            bias.accum_grad(g.sum(axis=(0, 1)))
        if kern.requires_grad or kern._parents:
            dk = np.empty_like(kern.data)
            for j in range(k):
                win = xp[:, j:j + t, :].reshape(bsz * t, cin)
                dk[j] = win.T @ g2
            kern.accum_grad(dk)
        if x.requires_grad or x._parents:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + t, :] += (g2 @ kern.data[j].T).reshape(bsz, t, cin)
            x.accum_grad(dxp[:, pad:pad + t, :])

    del flat
    return make(out, (x, kern, bias), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize over the last axis, then apply learnable gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.data.dtype))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if bias.requires_grad or bias._parents:
            bias.accum_grad(g.sum(axis=lead))
        if gain.requires_grad or gain._parents:
            gain.accum_grad((g * xhat).sum(axis=lead))
        if x.requires_grad or x._parents:
            gg = g * gain.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x.accum_grad((gg - m1 - xhat * m2) * inv)

    return make(out, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated gaussian error linear unit."""
    d = x.data
    u = GELU_C * (d + GELU_A * d * d * d)
    t = np.tanh(u)
    out = 0.5 * d * (1.0 + t)

    def backward(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * d * d)
        x.accum_grad(g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du))

    return make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # exp may overflow to inf for strongly negative gates; the quotient then
    # saturates to exactly 0.0, which is the value we want
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x.accum_grad(g * s * (1.0 - s))

    return make(s, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accum_grad(g)
        if b.requires_grad or b._parents:
            b.accum_grad(g)

    return make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a.accum_grad(g * b.data)
        if b.requires_grad or b._parents:
            b.accum_grad(g * a.data)

    return make(out, (a, b), backward)


def mix(alpha: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Convex blend alpha*a + (1-alpha)*b, all elementwise."""
    out = alpha.data * a.data + (1.0 - alpha.data) * b.data

    def backward(g):
        if alpha.requires_grad or alpha._parents:
            alpha.accum_grad(g * (a.data - b.data))
        if a.requires_grad or a._parents:
            a.accum_grad(g * alpha.data)
        if b.requires_grad or b._parents:
            b.accum_grad(g * (1.0 - alpha.data))

    return make(out, (alpha, a, b), backward)


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a scalar parameter (residual weights)."""
    out = x.data * s.data

    def backward(g):
        if x.requires_grad or x._parents:
            x.accum_grad(g * s.data)
        if s.requires_grad or s._parents:
            s.accum_grad(np.asarray((g * x.data).sum(), dtype=s.data.dtype).reshape(s.data.shape))

    return make(out, (x, s), backward)


def slice_last(x: Tensor, n: int) -> Tensor:
    """Take the last n channels: (B, m) -> (B, n)."""
    out = np.ascontiguousarray(x.data[:, -n:])

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, -n:] = g
        x.accum_grad(dx)

    return make(out, (x,), backward)


def flatten2(x: Tensor) -> Tensor:
    """(B, T, D) -> (B, T*D)."""
    b = x.data.shape[0]
    out = np.ascontiguousarray(x.data).reshape(b, -1)

    def backward(g):
        x.accum_grad(g.reshape(x.data.shape))

    return make(out, (x,), backward)


def roll_cache(m: np.ndarray, g: Tensor) -> Tensor:
    """Shift the cache left by the block width and append the new block.

    The old cache is history, not part of the current graph; gradient flows
    only into the appended block.
    """
    d = g.data.shape[1]
    out = np.concatenate([m[:, d:], g.data], axis=1)

    def backward(grad):
        g.accum_grad(grad[:, -d:])

    return make(out, (g,), backward)


def embed(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows: (A, D) indexed by (B, T) -> (B, T, D)."""
    out = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table.accum_grad(dt)

    return make(out, (table,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax in float64. Plain function, no graph.

    float64 keeps every entry strictly positive for any float32 logit spread,
    which the frequency quantizer requires.
    """
    z = logits.astype(np.float64, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, targets: np.ndarray):
    """Mean cross-entropy in nats plus the float64 probability rows.

    Backward is the fused (p - onehot) / B form, cast back to the logit dtype.
    """
    z = logits.data.astype(np.float64, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    rows = np.arange(targets.shape[0])
    nll = -logp[rows, targets]
    loss = nll.mean()

    def backward(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        d *= g / targets.shape[0]
        logits.accum_grad(d.astype(logits.data.dtype, copy=False))

    out = make(np.asarray(loss), (logits,), backward)
    return out, probs


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g):
        x.accum_grad(np.full_like(x.data, g))

    return make(out, (x,), backward)


def check_finite(arr: np.ndarray, step: int) -> None:
    """Raise if a forward pass produced NaN or inf."""
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite value in forward output at step {step}")
