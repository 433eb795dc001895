"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation eagerly computes its value with numpy and records its inputs
plus a closure mapping the output gradient to input gradients. ``backward``
walks the recorded graph in reverse topological order, so a leaf reached
through several paths (for example a weight-shared encoder applied to both
sentences of a pair) receives the sum of its path gradients.

Subgradient conventions: ``abs`` has derivative 0 at 0; ``elu`` has
derivative 1 at 0 (left and right limits agree).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sparse_matmul",
    "concat",
    "abs",
    "exp",
    "log",
    "elu",
    "sigmoid",
    "log_sigmoid",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "reshape",
    "topological_order",
    "backward",
    "gradients",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self.parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, data, parents, backward_fn):
    if not np.isfinite(data).all():
        raise NumericError(f"{op}: non-finite value in forward output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = None
    out.op = op
    out.parents = tuple(parents)
    out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise binary ------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul", f"expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def sparse_matmul(matrix, x):
    """``matrix @ x`` for a constant scipy.sparse ``matrix``; differentiable in ``x``."""
    x = as_tensor(x)
    if x.ndim != 2 or matrix.shape[1] != x.shape[0]:
        raise ShapeError("sparse_matmul", f"cannot multiply {matrix.shape} by {x.shape}")
    out = np.asarray(matrix @ x.data)
    return _make("sparse_matmul", out, (x,), lambda g: (np.asarray(matrix.T @ g),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", "no operands")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError("concat", f"incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, backward_fn)


# -- elementwise unary -------------------------------------------------------


def abs(a):  # noqa: A001
    a = as_tensor(a)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive argument")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def elu(a):
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    out = np.where(pos, x, np.expm1(np.minimum(x, 0.0)))
    deriv = np.where(x >= 0, 1.0, out + 1.0)
    return _make("elu", out, (a,), lambda g: (g * deriv,))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a):
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _make("log_sigmoid", out, (a,), lambda g: (g * _stable_sigmoid(-a.data),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _make("log_softmax", out, (a,),
                 lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


# -- reductions and reshaping ------------------------------------------------


def sum(a, axis=None):  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=np.float64), (a,), backward_fn)


def mean(a, axis=None):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean", "mean over an empty axis")
    out = a.data.mean(axis=axis)

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make("mean", np.asarray(out, dtype=np.float64), (a,), backward_fn)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {a.shape} to {shape}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def _getitem(a, index):
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("getitem", str(exc)) from None

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", np.array(out, dtype=np.float64), (a,), backward_fn)


# -- differentiation ---------------------------------------------------------


def topological_order(output):
    """Nodes reachable from ``output``, each after all of its inputs."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output):
    """Populate ``.grad`` of every trainable leaf feeding the scalar ``output``."""
    if not isinstance(output, Tensor):
        raise UsageError("backward expects a Tensor produced by a forward pass")
    if output.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    grads = {id(output): np.ones_like(output.data)}
    for node in reversed(topological_order(output)):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.grad = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return output


def gradients(output, params):
    """Gradients of scalar ``output`` w.r.t. each named leaf in ``params``.

    Leaves not reached by the graph get a zero gradient.
    """
    for p in params.values():
        p.grad = None
    backward(output)
    grads = {}
    for name, p in params.items():
        grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    return grads


def grad_check(fn, params, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a dict of leaf Tensors (same keys as ``params``) to a scalar
    Tensor. The error per element is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if eps <= 0:
        raise UsageError("eps must be positive")
    values = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(vals, trainable):
        leaves = {k: Tensor(v, requires_grad=trainable, name=k) for k, v in vals.items()}
        out = fn(leaves)
        if not isinstance(out, Tensor) or out.size != 1:
            raise UsageError("grad_check needs a scalar-valued function")
        return out, leaves

    out, leaves = run(values, True)
    analytic = gradients(out, leaves)

    worst = 0.0
    for name, arr in values.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = run(values, False)[0].item()
            arr[idx] = orig - eps
            down = run(values, False)[0].item()
            arr[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name][idx]
            err = np.abs(a - numeric) / max(1.0, np.abs(a), np.abs(numeric))
            worst = max(worst, float(err))
    return worst
