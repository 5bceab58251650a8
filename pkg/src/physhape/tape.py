"""Reverse-mode automatic differentiation on numpy arrays.

A Tape records one closure per operation; backward() replays them in
reverse. All values are float64 ndarrays. Every operation accepts a mix
of Node and plain ndarray/scalar operands, and an operation whose
operands are all plain does not touch the tape. Frozen networks are
therefore passed as plain arrays and receive exactly zero gradient by
construction, with no masking logic anywhere.

Only basic indexing is supported by Node.__getitem__ (slices, ints,
tuples thereof); fancy indexing would need scatter-add and nothing in
this package requires it.
"""

import numpy as np


class Tape:
    __slots__ = ("ops",)

    def __init__(self):
        self.ops = []

    def add(self, fn):
        self.ops.append(fn)

    def backward(self, root):
        """Seed d(root)/d(root) = 1 and replay the tape in reverse."""
        if root.grad is None:
            root.grad = np.ones_like(root.val)
        for fn in reversed(self.ops):
            fn()


class Node:
    __slots__ = ("val", "grad", "tape")

    def __init__(self, val, tape):
        self.val = np.asarray(val, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.val.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def leaf(tape, arr):
    """Wrap an array as a differentiable tape leaf."""
    return Node(arr, tape)


def raw(x):
    """Value of a Node, or the operand itself if it is already plain."""
    return x.val if isinstance(x, Node) else x


def detach(x):
    return x.val if isinstance(x, Node) else np.asarray(x)


def _gbuf(node):
    if node.grad is None:
        # np.zeros gets lazily zeroed pages for large buffers, unlike
        # zeros_like's explicit memset; row matrices here reach ~10 MB
        node.grad = np.zeros(node.val.shape, dtype=node.val.dtype)
    return node.grad


def _gset(node, arr):
    """Accumulate a gradient contribution that the caller freshly
    allocated (never a view of live data); the first contribution is
    adopted as the buffer instead of being added into zeros."""
    if node.grad is None:
        node.grad = arr
    else:
        node.grad += arr


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return x.shape if isinstance(x, (Node, np.ndarray)) else ()


def add(a, b):
    t = _tape_of(a, b)
    ov = raw(a) + raw(b)
    if t is None:
        return ov
    out = Node(ov, t)
    sa, sb = _shape(a), _shape(b)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(a, Node):
            _gbuf(a)[...] += _unbroadcast(g, sa)
        if isinstance(b, Node):
            _gbuf(b)[...] += _unbroadcast(g, sb)

    t.add(bw)
    return out


def sub(a, b):
    t = _tape_of(a, b)
    ov = raw(a) - raw(b)
    if t is None:
        return ov
    out = Node(ov, t)
    sa, sb = _shape(a), _shape(b)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(a, Node):
            _gbuf(a)[...] += _unbroadcast(g, sa)
        if isinstance(b, Node):
            _gbuf(b)[...] -= _unbroadcast(g, sb)

    t.add(bw)
    return out


def mul(a, b):
    t = _tape_of(a, b)
    av, bv = raw(a), raw(b)
    ov = av * bv
    if t is None:
        return ov
    out = Node(ov, t)
    sa, sb = _shape(a), _shape(b)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(a, Node):
            _gbuf(a)[...] += _unbroadcast(g * bv, sa)
        if isinstance(b, Node):
            _gbuf(b)[...] += _unbroadcast(g * av, sb)

    t.add(bw)
    return out


def div(a, b):
    t = _tape_of(a, b)
    av, bv = raw(a), raw(b)
    ov = av / bv
    if t is None:
        return ov
    out = Node(ov, t)
    sa, sb = _shape(a), _shape(b)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(a, Node):
            _gbuf(a)[...] += _unbroadcast(g / bv, sa)
        if isinstance(b, Node):
            _gbuf(b)[...] -= _unbroadcast(g * av / (bv * bv), sb)

    t.add(bw)
    return out


def neg(a):
    if not isinstance(a, Node):
        return -a
    out = Node(-a.val, a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] -= out.grad

    a.tape.add(bw)
    return out


def matmul(a, b):
    t = _tape_of(a, b)
    av, bv = raw(a), raw(b)
    ov = av @ bv
    if t is None:
        return ov
    out = Node(ov, t)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(a, Node):
            _gbuf(a)[...] += g @ bv.T
        if isinstance(b, Node):
            _gbuf(b)[...] += av.T @ g

    t.add(bw)
    return out


def tsum(a, axis=None):
    if not isinstance(a, Node):
        return np.sum(a, axis=axis)
    out = Node(np.sum(a.val, axis=axis), a.tape)

    def bw():
        g = out.grad
        if g is None:
            return
        if axis is None:
            _gbuf(a)[...] += g
        else:
            _gbuf(a)[...] += np.expand_dims(g, axis)

    a.tape.add(bw)
    return out


def tmean(a, axis=None):
    n = np.prod(_shape(a)) if axis is None else _shape(a)[axis]
    return mul(tsum(a, axis=axis), 1.0 / float(n))


def square(a):
    if not isinstance(a, Node):
        return a * a
    av = a.val
    out = Node(av * av, a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += 2.0 * av * out.grad

    a.tape.add(bw)
    return out


def sqrt(a):
    if not isinstance(a, Node):
        return np.sqrt(a)
    ov = np.sqrt(a.val)
    out = Node(ov, a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += 0.5 * out.grad / ov

    a.tape.add(bw)
    return out


def tabs(a):
    if not isinstance(a, Node):
        return np.abs(a)
    av = a.val
    out = Node(np.abs(av), a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += np.sign(av) * out.grad

    a.tape.add(bw)
    return out


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes only through the interior."""
    if not isinstance(a, Node):
        return np.clip(a, lo, hi)
    av = a.val
    out = Node(np.clip(av, lo, hi), a.tape)
    mask = (av > lo) & (av < hi)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += mask * out.grad

    a.tape.add(bw)
    return out


def relu(a):
    """max(a, 0); subgradient 0 at the kink, so a hinge at its boundary
    contributes no pull."""
    if not isinstance(a, Node):
        return np.maximum(a, 0.0)
    av = a.val
    out = Node(np.maximum(av, 0.0), a.tape)
    mask = av > 0.0

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += mask * out.grad

    a.tape.add(bw)
    return out


def _sigmoid_val(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a):
    if not isinstance(a, Node):
        return _sigmoid_val(np.asarray(a, dtype=np.float64))
    ov = _sigmoid_val(a.val)
    out = Node(ov, a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += ov * (1.0 - ov) * out.grad

    a.tape.add(bw)
    return out


def take(a, idx):
    """Basic indexing of a Node. Backward scatters into the index."""
    if not isinstance(a, Node):
        return a[idx]
    out = Node(a.val[idx], a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[idx] += out.grad

    a.tape.add(bw)
    return out


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.reshape(a, shape)
    orig = a.val.shape
    out = Node(a.val.reshape(shape), a.tape)

    def bw():
        if out.grad is not None:
            _gbuf(a)[...] += out.grad.reshape(orig)

    a.tape.add(bw)
    return out
