"""A small reverse-mode differentiation engine over numpy float64 arrays.

Forward operators record themselves on the active :class:`Tape`; calling
:func:`backward` walks the tape in reverse and accumulates gradients into
leaf tensors (normally :class:`Parameter` objects)::

    with Tape() as tape:
        loss = softmax_cross_entropy(dense(x, W, b), labels)
    backward(loss)
    sgd_momentum_step([W, b], lr=0.01, momentum=0.9)
"""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, LabelRangeError, NumericError, ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape", "_op_index", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tape = None  # set when produced by a recorded op
        self._op_index = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf tensor carrying its gradient and momentum buffers."""

    __slots__ = ("velocity", "version", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.velocity = np.zeros_like(self.data)
        self.version = 0
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --- tape ------------------------------------------------------------------

_ACTIVE: list["Tape"] = []


class _Op:
    __slots__ = ("out", "inputs", "backward", "versions")

    def __init__(self, out, inputs, backward, versions):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.versions = versions


class Tape:
    """Ordered record of executed forward operations.

    Use as a context manager; operators executed inside the block are
    recorded when at least one input needs a gradient.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self.closed = False

    def __enter__(self):
        if self.closed:
            raise GraphError("tape was cleared and cannot record again")
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def clear(self):
        """Drop saved state; any later backward through this tape fails."""
        for op in self.ops:
            op.out._tape = None
        self.ops = []
        self.closed = True

    def __len__(self):
        return len(self.ops)


def _record(out_data, inputs, backward_fn, op_name: str) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op_name} produced non-finite values")
    tape = _ACTIVE[-1] if _ACTIVE else None
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data)
    if needs:
        out.requires_grad = True
        out._tape = tape
        out._op_index = len(tape.ops)
        versions = tuple(t.version if isinstance(t, Parameter) else None for t in inputs)
        tape.ops.append(_Op(out, inputs, backward_fn, versions))
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``grad`` (+=).

    ``loss`` is normally a scalar; ``grad`` seeds the output gradient and
    defaults to ones. Raises :class:`GraphError` when the loss was not
    produced on a live tape, or when a parameter has been updated since
    it was used in the forward pass.
    """
    tape = loss._tape
    if tape is None or tape.closed:
        raise GraphError("loss was not produced by a live tape")
    end = loss._op_index
    if end >= len(tape.ops) or tape.ops[end].out is not loss:
        raise GraphError("loss is not recorded on its tape")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=DTYPE)
    if seed.shape != loss.shape:
        raise ShapeError(f"seed gradient shape {seed.shape} != loss shape {loss.shape}")
    grads = {id(loss): seed.copy()}
    for op in reversed(tape.ops[: end + 1]):
        g = grads.pop(id(op.out), None)
        if g is None:
            continue
        for t, v in zip(op.inputs, op.versions):
            if v is not None and t.version != v:
                raise GraphError(f"{t!r} changed after the forward pass; record is stale")
        in_grads = op.backward(g)
        for t, gi in zip(op.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad += gi
            elif id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# --- operators -------------------------------------------------------------

def dense(x, W: Tensor, b: Tensor) -> Tensor:
    """Affine map ``y = x @ W + b`` for ``x[batch, in]``, ``W[in, out]``."""
    x = as_tensor(x)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] \
            or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")
    xd, Wd = x.data, W.data

    def bw(g):
        return g @ Wd.T, xd.T @ g, g.sum(axis=0)

    return _record(xd @ Wd + b.data, (x, W, b), bw, "dense")


def conv1d(x, K: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over time of ``x[batch, ch_in, T]`` with ``K[ch_out, ch_in, k]``.

    Output length is ``(T + 2*padding - k) // stride + 1``. ``b`` may be None
    for bias-free convolutions.
    """
    x = as_tensor(x)
    if x.data.ndim != 3 or K.data.ndim != 3 or x.shape[1] != K.shape[1]:
        raise ShapeError(f"conv1d: x{x.shape} K{K.shape}")
    if b is not None and b.shape != (K.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} for {K.shape[0]} filters")
    if stride < 1 or padding < 0:
        raise ShapeError("conv1d: stride must be >= 1 and padding >= 0")
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    B, Cin, T = xd.shape
    Cout, _, k = K.shape
    if T < k:
        raise ShapeError(f"conv1d: length {T} shorter than kernel {k}")
    Tout = (T - k) // stride + 1
    win = sliding_window_view(xd, k, axis=2)[:, :, ::stride, :]  # B, Cin, Tout, k
    Kd = K.data
    out = np.tensordot(win, Kd, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        dK = np.tensordot(g, win, axes=([0, 2], [0, 2]))
        dwin = np.tensordot(g, Kd, axes=([1], [0]))  # B, Tout, Cin, k
        dx = np.zeros((B, Cin, T))
        span = stride * (Tout - 1) + 1
        for j in range(k):
            dx[:, :, j:j + span:stride] += dwin[:, :, :, j].transpose(0, 2, 1)
        if padding:
            dx = dx[:, :, padding:T - padding]
        db = g.sum(axis=(0, 2)) if b is not None else None
        return dx, dK, db

    inputs = (x, K, b) if b is not None else (x, K)
    return _record(out, inputs, bw if b is not None else (lambda g: bw(g)[:2]), "conv1d")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def max_pool1d(x, k: int, stride: int | None = None) -> Tensor:
    """Windowed maximum over time; gradient goes to the first maximal index."""
    x = as_tensor(x)
    stride = k if stride is None else stride
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool1d expects [batch, ch, T], got {x.shape}")
    B, C, T = x.shape
    if T < k or k < 1 or stride < 1:
        raise ShapeError(f"max_pool1d: T={T}, k={k}, stride={stride}")
    win = sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    Tout = out.shape[2]
    src = arg + (np.arange(Tout) * stride)[None, None, :]

    def bw(g):
        dx = np.zeros((B, C, T))
        bi, ci, _ = np.indices(src.shape, sparse=True)
        np.add.at(dx, (bi, ci, src), g)
        return (dx,)

    return _record(np.ascontiguousarray(out), (x,), bw, "max_pool1d")


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool expects [batch, ch, T>=1], got {x.shape}")
    T = x.shape[2]

    def bw(g):
        return (np.repeat(g[:, :, None] / T, T, axis=2),)

    return _record(x.data.mean(axis=2), (x,), bw, "global_avg_pool")


def batch_norm(x, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of ``x[batch, ch, T]`` over batch and time.

    In training mode batch statistics are used and the running statistics
    (updated in place) track them with an exponential moving average.
    """
    x = as_tensor(x)
    if x.data.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
        raise ShapeError(f"batch_norm: x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    xd = x.data
    g_ = gamma.data[None, :, None]
    if training:
        n = xd.shape[0] * xd.shape[2]
        mean = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * (var * n / (n - 1) if n > 1 else var)
    else:
        mean, var = running_mean, running_var
    if eps == 0 and np.any(var == 0):
        raise NumericError("batch_norm: zero variance with eps = 0")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None]) * inv[None, :, None]
    out = g_ * xhat + beta.data[None, :, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        gx = g * g_
        if training:
            dx = inv[None, :, None] * (gx - gx.mean(axis=(0, 2), keepdims=True)
                                       - xhat * (gx * xhat).mean(axis=(0, 2), keepdims=True))
        else:
            dx = gx * inv[None, :, None]
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), bw, "batch_norm")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm(x, W_x: Tensor, W_h: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over ``x[batch, T, in]`` from a zero state; return ``h_T``.

    Gate blocks in ``W_x[in, 4H]``, ``W_h[H, 4H]`` and ``b[4H]`` are ordered
    input, forget, candidate, output.
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"lstm expects [batch, T, in], got {x.shape}")
    B, T, D = x.shape
    H = W_h.shape[0]
    if T == 0:
        raise ShapeError("lstm: empty sequence")
    if W_x.shape != (D, 4 * H) or W_h.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: x{x.shape} W_x{W_x.shape} W_h{W_h.shape} b{b.shape}")
    xd, Wx, Wh = x.data, W_x.data, W_h.data
    xproj = xd @ Wx + b.data  # B, T, 4H
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    for t in range(T):
        z = xproj[:, t] + hs[t] @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        cs[t + 1] = f * cs[t] + i * gg
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, gg, o], axis=1)

    def bw(g):
        dz_all = np.empty((B, T, 4 * H))
        dWh = np.zeros_like(Wh)
        dh = g
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f, gg, o = (gates[t][:, k * H:(k + 1) * H] for k in range(4))
            tc = np.tanh(cs[t + 1])
            do = dh * tc
            dc = dc + dh * o * (1 - tc * tc)
            di = dc * gg
            dgg = dc * i
            df = dc * cs[t]
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                 dgg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dz_all[:, t] = dz
            dWh += hs[t].T @ dz
            dh = dz @ Wh.T
            dc = dc * f
        dx = dz_all @ Wx.T
        dWx = xd.reshape(B * T, D).T @ dz_all.reshape(B * T, 4 * H)
        db = dz_all.sum(axis=(0, 1))
        return dx, dWx, dWh, db

    return _record(hs[T].copy(), (x, W_x, W_h, b), bw, "lstm")


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError(f"logits {logits.shape} vs {len(labels)} labels")
    B, C = logits.shape
    if C < 2:
        raise ShapeError("need at least two classes")
    if len(labels) and (labels.min() < 0 or labels.max() >= C):
        raise LabelRangeError(f"labels must lie in [0, {C})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(B), labels] - logsum
    loss = -logp.mean()
    probs = np.exp(z - logsum[:, None])

    def bw(g):
        d = probs.copy()
        d[np.arange(B), labels] -= 1.0
        return (d * (g / B),)

    return _record(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _record(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),), "transpose")


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    return _record(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.full(x.shape, float(g)),), "sum")


# --- optimizer -------------------------------------------------------------

def sgd_momentum_step(params, lr: float, momentum: float = 0.9) -> None:
    """In-place update ``v <- momentum*v - lr*g``; ``p <- p + v``."""
    for p in params:
        p.velocity *= momentum
        p.velocity -= lr * p.grad
        p.data += p.velocity
        p.version += 1


class SGD:
    def __init__(self, params, lr: float = 0.01, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        sgd_momentum_step(self.params, self.lr, self.momentum)


# --- layers ----------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Container base: parameters, buffers and child modules are found by
    attribute inspection, in assignment order."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        zero_grads(self.parameters())

    def __call__(self, x):
        return self.forward(x)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng):
        self.W = Parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.b = Parameter(np.zeros(n_out))

    def forward(self, x):
        return dense(x, self.W, self.b)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        self.K = Parameter(glorot_uniform(rng, (c_out, c_in, k), c_in * k, c_out * k))
        self.b = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding

    @property
    def kernel_size(self) -> int:
        return self.K.shape[2]

    def out_length(self, T: int) -> int:
        T = T + 2 * self.padding
        if T < self.kernel_size:
            return 0
        return (T - self.kernel_size) // self.stride + 1

    def forward(self, x):
        return conv1d(x, self.K, self.b, self.stride, self.padding)


class BatchNorm1d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          self.training, self.momentum, self.eps)


class LSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng, forget_bias: float = 1.0):
        H = hidden
        self.W_x = Parameter(glorot_uniform(rng, (n_in, 4 * H), n_in, 4 * H))
        self.W_h = Parameter(glorot_uniform(rng, (H, 4 * H), H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        self.b = Parameter(b)
        self.hidden = H

    def forward(self, x):
        return lstm(x, self.W_x, self.W_h, self.b)


def state_dict(module: Module) -> "OrderedDict[str, np.ndarray]":
    """Named parameter and buffer arrays (copies)."""
    out = OrderedDict((n, p.data.copy()) for n, p in module.named_parameters())
    for n, buf in module.named_buffers():
        out[n] = buf.copy()
    return out


def load_state_dict(module: Module, state) -> None:
    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())
    expected = set(params) | set(buffers)
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise ShapeError(f"state mismatch; missing={missing} unexpected={extra}")
    for name, arr in state.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != np.shape(arr):
            raise ShapeError(f"{name}: shape {np.shape(arr)} != {target.shape}")
        target[...] = arr
        if name in params:
            params[name].version += 1
