"""Dense networks and input-jet propagation.

The jet of a network at a point is its value together with the first and
second derivatives with respect to the 3D input. Because the input
dimension is fixed at 3, jets are propagated forward through the layer
stack as extra batch rows: for a batch of n points the row matrix holds

    rows[0 : n]            values
    rows[n : 4n]           3 tangent blocks (d/dx1, d/dx2, d/dx3)
    rows[4n : 4n + 6h]     6 second-order blocks for the first h points,
                           direction pairs (11, 22, 33, 12, 13, 23)

so every affine layer is a single matrix product over all rows, and the
activation update is a handful of fused elementwise kernels. Points that
need second derivatives must come first in the batch.

The same code path serves plain evaluation (ndarray rows) and training
(tape Node rows); see tape.py for the constant-propagation rule.
"""

import numpy as np

from . import tape as tp
from .tape import Node, Tape

# second-order direction pairs, Voigt-like ordering
JET_I = np.array([0, 1, 2, 0, 0, 1])
JET_J = np.array([0, 1, 2, 1, 2, 2])

SOFTPLUS_BETA = 100.0


def act(x, kind, order=0):
    """Activation value (order 0) or its order-th derivative.

    kind is "tanh" or "softplus" (sharpness 100). Orders 0..4 are
    supported; everything is an elementwise closed form.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        t = np.tanh(x)
        if order == 0:
            return t
        s = 1.0 - t * t
        if order == 1:
            return s
        if order == 2:
            return -2.0 * t * s
        if order == 3:
            return s * (4.0 * t * t - 2.0 * s)
        if order == 4:
            return 16.0 * t * s * s - 8.0 * t ** 3 * s
    elif kind == "softplus":
        b = SOFTPLUS_BETA
        if order == 0:
            return np.logaddexp(0.0, b * x) / b
        s = _sigmoid(b * x)
        if order == 1:
            return s
        sp = s * (1.0 - s)
        if order == 2:
            return b * sp
        if order == 3:
            return b * b * sp * (1.0 - 2.0 * s)
        if order == 4:
            return b ** 3 * sp * (1.0 - 6.0 * s + 6.0 * s * s)
    else:
        raise ValueError("unknown activation kind %r" % (kind,))
    raise ValueError("unsupported derivative order %d" % order)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DenseNet:
    """Small fully-connected net, float64, one activation kind for all
    hidden layers, linear output scaled by out_scale.

    widths includes input and output, e.g. (3, 16, 16, 3).
    """

    def __init__(self, widths, kind="tanh", seed=0, out_scale=1.0,
                 geometric_radius=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        for a, b in zip(widths, widths[1:]):
            if a <= 0 or b <= 0:
                raise ValueError("layer widths must be positive")
        if kind not in ("tanh", "softplus"):
            raise ValueError("unknown activation kind %r" % (kind,))
        self.widths = widths
        self.kind = kind
        self.out_scale = float(out_scale)
        rng = np.random.default_rng(seed)
        self.Ws = []
        self.bs = []
        nlay = len(widths) - 1
        for k in range(nlay):
            fi, fo = widths[k], widths[k + 1]
            if geometric_radius is not None:
                if k < nlay - 1:
                    W = rng.normal(0.0, np.sqrt(2.0 / fo), size=(fi, fo))
                    b = np.zeros(fo)
                else:
                    # positive-inside start: f(x) ~ radius - |x|
                    W = -rng.normal(np.sqrt(np.pi / fi),
                                    1e-5, size=(fi, fo))
                    b = np.full(fo, float(geometric_radius))
            else:
                lim = np.sqrt(6.0 / (fi + fo))
                W = rng.uniform(-lim, lim, size=(fi, fo))
                b = np.zeros(fo)
            self.Ws.append(np.ascontiguousarray(W, dtype=np.float64))
            self.bs.append(np.ascontiguousarray(b, dtype=np.float64))

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def params(self):
        """Flat list of parameter arrays (mutated in place by optimizers)."""
        out = []
        for W, b in zip(self.Ws, self.bs):
            out.append(W)
            out.append(b)
        return out

    def copy_params(self):
        return [p.copy() for p in self.params()]

    def set_params(self, arrs):
        for p, a in zip(self.params(), arrs):
            p[...] = a

    def checksum(self):
        return float(sum(np.sum(np.abs(p)) for p in self.params()))

    def to_tensors(self, prefix=""):
        d = {prefix + "meta": _encode_meta(self)}
        for k, (W, b) in enumerate(zip(self.Ws, self.bs)):
            d[prefix + "layer%d/W" % k] = W
            d[prefix + "layer%d/b" % k] = b
        return d

    @classmethod
    def from_tensors(cls, d, prefix=""):
        widths, kind, out_scale = _decode_meta(d[prefix + "meta"])
        net = cls(widths, kind=kind, seed=0, out_scale=out_scale)
        for k in range(len(widths) - 1):
            net.Ws[k][...] = d[prefix + "layer%d/W" % k]
            net.bs[k][...] = d[prefix + "layer%d/b" % k]
        return net


_KIND_CODE = {"tanh": 0.0, "softplus": 1.0}
_CODE_KIND = {0.0: "tanh", 1.0: "softplus"}


def _encode_meta(net):
    return np.array([float(len(net.widths))] + [float(w) for w in net.widths]
                    + [_KIND_CODE[net.kind], net.out_scale])


def _decode_meta(v):
    n = int(v[0])
    widths = tuple(int(w) for w in v[1:1 + n])
    kind = _CODE_KIND[float(v[1 + n])]
    return widths, kind, float(v[2 + n])


def forward(net, x):
    """Plain batched evaluation. x is (3,) or (N, 3); returns matching shape."""
    single = np.ndim(x) == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.in_dim:
        raise ValueError("input width %d, net expects %d"
                         % (h.shape[1], net.in_dim))
    nlay = len(net.Ws)
    for k in range(nlay):
        h = h @ net.Ws[k] + net.bs[k]
        if k < nlay - 1:
            h = act(h, net.kind, 0)
    h = h * net.out_scale
    return h[0] if single else h


def wrap_params(t, net):
    """Tape leaves for every layer; gradients land on leaf.grad."""
    return [(tp.leaf(t, W), tp.leaf(t, b)) for W, b in zip(net.Ws, net.bs)]


def make_jet_rows(X, n_hess):
    """Input row matrix for jet propagation; constant (never a Node)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    rows = np.zeros((4 * n + 6 * n_hess, 3))
    rows[:n] = X
    for d in range(3):
        rows[n + d * n: n + (d + 1) * n, d] = 1.0
    return rows


def _affine_rows(x, W, b, nval):
    """rows @ W with bias added to value rows only."""
    xv, Wv, bv = tp.raw(x), tp.raw(W), tp.raw(b)
    ov = xv @ Wv
    ov[:nval] += bv
    t = tp._tape_of(x, W, b)
    if t is None:
        return ov
    out = Node(ov, t)

    def bw():
        g = out.grad
        if g is None:
            return
        if isinstance(W, Node):
            tp._gset(W, xv.T @ g)
        if isinstance(b, Node):
            tp._gset(b, g[:nval].sum(axis=0))
        if isinstance(x, Node):
            tp._gset(x, g @ Wv.T)

    t.add(bw)
    return out


def _jet_act_arrays(z, kind, n, h):
    """Forward jet update through an activation. Returns (out, stash)."""
    w = z.shape[1]
    zv = z[:n]
    if kind == "tanh":
        t0 = np.tanh(zv)
        a1 = 1.0 - t0 * t0
        a2 = -2.0 * t0 * a1
        stash = t0
        v = t0
    else:
        b = SOFTPLUS_BETA
        s = _sigmoid(b * zv)
        a1 = s
        a2 = b * s * (1.0 - s)
        stash = s
        v = np.logaddexp(0.0, b * zv) / b
    out = np.empty_like(z)
    out[:n] = v
    zg = z[n:4 * n].reshape(3, n, w)
    np.multiply(zg, a1[None], out=out[n:4 * n].reshape(3, n, w))
    if h:
        zh = z[4 * n:].reshape(6, h, w)
        oh = out[4 * n:].reshape(6, h, w)
        a1h, a2h = a1[:h], a2[:h]
        tmp = np.empty((h, w))
        for e in range(6):
            np.multiply(zg[JET_I[e], :h], zg[JET_J[e], :h], out=oh[e])
            oh[e] *= a2h
            np.multiply(a1h, zh[e], out=tmp)
            oh[e] += tmp
    return out, (stash, a1, a2)


def _jet_act(z, kind, n, h):
    zval = tp.raw(z)
    ov, (stash, a1, a2) = _jet_act_arrays(zval, kind, n, h)
    if not isinstance(z, Node):
        return ov
    t = z.tape
    out = Node(ov, t)
    w = zval.shape[1]

    def bw():
        g = out.grad
        if g is None:
            return
        if kind == "tanh":
            a3 = a1 * (4.0 * stash * stash - 2.0 * a1)
        else:
            a3 = SOFTPLUS_BETA * a2 * (1.0 - 2.0 * stash)
        gz = tp._gbuf(z)
        gv = g[:n]
        gg = g[n:4 * n].reshape(3, n, w)
        zg = zval[n:4 * n].reshape(3, n, w)
        acc = np.einsum("dnw,dnw->nw", gg, zg)
        acc *= a2
        acc += gv * a1
        gz[:n] += acc
        gzg = gz[n:4 * n].reshape(3, n, w)
        gzg += gg * a1[None]
        if h:
            gh = g[4 * n:].reshape(6, h, w)
            zh = zval[4 * n:].reshape(6, h, w)
            a1h, a2h, a3h = a1[:h], a2[:h], a3[:h]
            gzh = gz[4 * n:].reshape(6, h, w)
            S = np.einsum("ehw,ehw->hw", gh, zh)
            S *= a2h
            T = np.zeros((h, w))
            tmp = np.empty((h, w))
            tmp2 = np.empty((h, w))
            for e in range(6):
                gi = zg[JET_I[e], :h]
                gj = zg[JET_J[e], :h]
                ghe = gh[e]
                np.multiply(ghe, gi, out=tmp)
                tmp *= gj
                T += tmp
                np.multiply(a2h, ghe, out=tmp)
                np.multiply(tmp, gj, out=tmp2)
                gzg[JET_I[e], :h] += tmp2
                np.multiply(tmp, gi, out=tmp2)
                gzg[JET_J[e], :h] += tmp2
                np.multiply(a1h, ghe, out=tmp2)
                gzh[e] += tmp2
            T *= a3h
            S += T
            gz[:h] += S

    t.add(bw)
    return out


class JetRows:
    """View bundle over a propagated row matrix.

    value()  -> (n, out)
    grad()   -> (3, n, out), grad()[d, p, i] = d u_i / d x_d
    hess()   -> (6, h, out), pair order (11, 22, 33, 12, 13, 23)
    """

    def __init__(self, rows, n, h, out_dim):
        self.rows = rows
        self.n = n
        self.h = h
        self.out_dim = out_dim

    def value(self):
        return self.rows[: self.n]

    def grad(self):
        r = self.rows[self.n: 4 * self.n]
        return tp.reshape(r, (3, self.n, self.out_dim)) \
            if isinstance(r, Node) else r.reshape(3, self.n, self.out_dim)

    def hess(self):
        r = self.rows[4 * self.n:]
        return tp.reshape(r, (6, self.h, self.out_dim)) \
            if isinstance(r, Node) else r.reshape(6, self.h, self.out_dim)


def jet_forward(net, X, n_hess, params=None):
    """Propagate values, tangents, and (for the first n_hess points)
    second-order rows through the net.

    With params=None this is a pure ndarray computation on the frozen
    net. With params=wrap_params(tape, net) the result is differentiable
    with respect to the parameters.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 0 <= n_hess <= n:
        raise ValueError("n_hess must lie in [0, n]")
    rows = make_jet_rows(X, n_hess)
    layers = params if params is not None else \
        list(zip(net.Ws, net.bs))
    nlay = len(layers)
    for k, (W, b) in enumerate(layers):
        rows = _affine_rows(rows, W, b, n)
        if k < nlay - 1:
            rows = _jet_act(rows, net.kind, n, n_hess)
    if net.out_scale != 1.0:
        rows = tp.mul(rows, net.out_scale)
    return JetRows(rows, n, n_hess, net.out_dim)


class InputJet:
    """Full jet at a single point: value (out,), gradient (out, 3),
    Hessian (out, 3, 3) symmetric by construction."""

    def __init__(self, x, value, grad, hess):
        self.x = x
        self.value = value
        self.grad = grad
        self.hess = hess


def input_jet(net, x):
    x = np.asarray(x, dtype=np.float64)
    jr = jet_forward(net, x[None], 1)
    # the value is taken from forward() so the two agree bit-exactly
    # (BLAS kernels for different row counts differ in the last ulp)
    val = forward(net, x)
    g = jr.grad()[:, 0, :].T.copy()            # (out, 3)
    hrows = jr.hess()[:, 0, :]                 # (6, out)
    H = np.empty((net.out_dim, 3, 3))
    for e in range(6):
        H[:, JET_I[e], JET_J[e]] = hrows[e]
        H[:, JET_J[e], JET_I[e]] = hrows[e]
    return InputJet(x, val, g, H)


def param_gradient(loss_fn, *nets):
    """Gradient of a scalar loss with respect to every parameter of the
    given nets. loss_fn(tape, *wrapped) must return a scalar Node, where
    wrapped[i] is the (W, b) leaf list for nets[i].

    Returns (loss_value, grads) with grads[i] a flat list matching
    nets[i].params() order; parameters the loss never touched get zeros.
    """
    t = Tape()
    wrapped = [wrap_params(t, net) for net in nets]
    loss = loss_fn(t, *wrapped)
    if not np.isfinite(loss.val):
        from .errors import DivergenceError
        raise DivergenceError("non-finite loss %r" % (loss.val,))
    t.backward(loss)
    grads = []
    for net, lay in zip(nets, wrapped):
        gs = []
        for W, b in lay:
            gs.append(W.grad if W.grad is not None else np.zeros_like(W.val))
            gs.append(b.grad if b.grad is not None else np.zeros_like(b.val))
        grads.append(gs)
    return float(loss.val), grads
