"""
Reverse-mode gradients on a tiny convolutional network
======================================================

Build a conv -> relu -> pool -> dense stack by hand, record it on a tape,
and compare the reverse-mode gradient of the kernel against central
finite differences.
"""

import numpy as np

from alc import autodiff_nn as nn

rng = np.random.default_rng(0)
x = rng.normal(size=(2, 3, 16))
labels = np.array([0, 2])

K = nn.Parameter(rng.normal(size=(4, 3, 5)) * 0.3)
b = nn.Parameter(np.zeros(4))
W = nn.Parameter(rng.normal(size=(4, 3)) * 0.3)
c = nn.Parameter(np.zeros(3))


def loss_value():
    h = nn.global_avg_pool(nn.relu(nn.conv1d(x, K, b, stride=2)))
    return nn.softmax_cross_entropy(nn.dense(h, W, c), labels)


with nn.Tape() as tape:
    loss = loss_value()
nn.backward(loss)
print(f"loss {float(loss.data):.5f}, {len(tape)} recorded ops")

###############################################################################
# Finite differences on a few kernel entries

h = 1e-5
for idx in [(0, 0, 0), (1, 2, 3), (3, 1, 4)]:
    old = K.data[idx]
    K.data[idx] = old + h
    up = float(loss_value().data)
    K.data[idx] = old - h
    down = float(loss_value().data)
    K.data[idx] = old
    print(idx, "analytic", f"{K.grad[idx]:+.8f}", "numeric", f"{(up - down) / (2 * h):+.8f}")

###############################################################################
# One momentum step lowers the loss

nn.sgd_momentum_step([K, b, W, c], lr=0.1, momentum=0.9)
print(f"loss after one step {float(loss_value().data):.5f}")
