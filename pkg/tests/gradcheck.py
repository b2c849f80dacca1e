"""Central finite-difference gradient oracle for the autodiff operators."""
import numpy as np

from alc import autodiff_nn as nn


def numeric_grad(f, arrays, h=1e-5):
    """d f(arrays) / d arrays[i] for a scalar-valued numpy function ``f``."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(arrays)
            a[i] = old - h
            fm = f(arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_op(op, arrays, rng, h=1e-5):
    """Max relative error between reverse-mode and numeric gradients.

    ``op`` maps a list of leaf tensors to an output tensor; the checked
    scalar is ``sum(out * R)`` for a fixed random ``R``.
    """
    leaves = [nn.Parameter(a.copy()) for a in arrays]
    with nn.Tape():
        out = op(leaves)
    R = rng.normal(size=out.shape)
    nn.backward(out, R)
    analytic = [p.grad.copy() for p in leaves]

    def f(arrs):
        return float(np.sum(op([nn.Tensor(a) for a in arrs]).data * R))

    numeric = numeric_grad(f, [a.copy() for a in arrays], h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def away_from_zero(x, margin=1e-3):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 5, x)


def _lstm_op(ts):
    return nn.lstm(*ts)


def _bn_op(ts):
    x, g, b = ts
    C = g.shape[0]
    return nn.batch_norm(x, g, b, np.zeros(C), np.ones(C), training=True)


def _bn_eval_op(ts):
    x, g, b = ts
    C = g.shape[0]
    return nn.batch_norm(x, g, b, np.linspace(-0.5, 0.5, C), np.linspace(0.5, 2.0, C),
                         training=False)


def _ce_op(labels):
    return lambda ts: nn.softmax_cross_entropy(ts[0], labels)


def operator_cases(rng):
    """Yield ``(name, op, arrays)`` with fresh random small inputs."""
    B = int(rng.integers(1, 4))
    n_in, n_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    yield "dense", lambda ts: nn.dense(*ts), [rng.normal(size=(B, n_in)),
                                              rng.normal(size=(n_in, n_out)),
                                              rng.normal(size=n_out)]
    cin, cout, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    T = int(rng.integers(k, k + 6))
    yield "conv1d", (lambda ts, s=stride, p=pad: nn.conv1d(*ts, stride=s, padding=p)), [
        rng.normal(size=(B, cin, T)), rng.normal(size=(cout, cin, k)), rng.normal(size=cout)]
    yield "relu", lambda ts: nn.relu(ts[0]), [away_from_zero(rng.normal(size=(B, 3, 5)))]
    pk, ps = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    yield "max_pool1d", (lambda ts, k=pk, s=ps: nn.max_pool1d(ts[0], k, s)), [
        rng.permutation(B * 2 * 7).reshape(B, 2, 7) * 0.1 + rng.normal(size=(B, 2, 7)) * 1e-3]
    yield "global_avg_pool", lambda ts: nn.global_avg_pool(ts[0]), [rng.normal(size=(B, 3, 4))]
    C = int(rng.integers(1, 4))
    yield "batch_norm", _bn_op, [rng.normal(size=(max(B, 2), C, 4)), rng.normal(size=C),
                                 rng.normal(size=C)]
    yield "batch_norm_eval", _bn_eval_op, [rng.normal(size=(B, C, 4)), rng.normal(size=C),
                                           rng.normal(size=C)]
    D, H, Tl = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    yield "lstm", _lstm_op, [rng.normal(size=(B, Tl, D)), rng.normal(size=(D, 4 * H)) * 0.7,
                             rng.normal(size=(H, 4 * H)) * 0.7, rng.normal(size=4 * H) * 0.5]
    Cc = int(rng.integers(2, 5))
    labels = rng.integers(0, Cc, size=B)
    yield "softmax_cross_entropy", _ce_op(labels), [rng.normal(size=(B, Cc)) * 2]
