"""
Reverse-mode gradients on small graphs
======================================

Build a few expressions, backpropagate, and compare with central
differences.
"""

import numpy as np

from puembed import tensor as T
from puembed.tensor import Tensor

# d/dx (x * x) at 3
x = Tensor(3.0, requires_grad=True)
T.backward(x * x)
print("d(x*x)/dx at 3:", x.grad)

# one leaf feeding two branches collects both path gradients
w = Tensor(np.array([0.5, -1.0]), requires_grad=True)
a, b = np.array([2.0, 3.0]), np.array([-4.0, 7.0])
T.backward(T.sum(w * a) + T.sum(w * b))
print("shared leaf gradient:", w.grad, "expected", a + b)

# a small MLP with a log-softmax head
rng = np.random.default_rng(0)
params = {
    "w1": rng.normal(size=(4, 8)),
    "w2": rng.normal(size=(8, 3)),
    "x": rng.normal(size=(5, 4)),
}
labels = np.eye(3)[rng.integers(0, 3, size=5)]


def loss(p):
    h = T.elu(p["x"] @ p["w1"])
    return -T.sum(T.log_softmax(h @ p["w2"]) * labels) * (1 / 5)


print("max relative error vs finite differences:", T.grad_check(loss, params))

# ELU at exactly zero uses slope 1, abs at zero uses 0
z = Tensor(np.zeros(2), requires_grad=True)
T.backward(T.sum(T.elu(z)) + T.sum(T.abs(z)))
print("kink conventions:", z.grad)
