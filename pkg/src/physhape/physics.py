"""Displacement network and the physics-informed losses.

The stress prediction couples geometry and displacement: strain comes
from the displacement Jacobian, Hooke's law gives a full-material
"tilde" stress, and multiplying by the density yields the predicted
stress. The PDE residual expands the divergence of that product with
the product rule, so it needs the density gradient and the displacement
input-Hessian; both come out of one jet propagation per batch.

All loss assembly below is written against the tape ops, which pass
plain ndarrays through unchanged. The same code therefore serves the
public (numpy, diagnostic) loss functions and the differentiable
training path; only the parameter wrapping differs.
"""

import numpy as np

from . import elasticity as el, nets, tape as tp
from .errors import ValidationError, DivergenceError
from .geometry import density
from .nets import DenseNet
from .optim import Adam

# Voigt pair index of tensor component (i, j)
_M = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])


class DisplacementField:
    """The displacement net: 3 coordinates to 3 components, smooth tanh
    hidden layers, outputs damped by a fixed 0.1 scale so training
    starts near zero displacement."""

    def __init__(self, net=None, widths=(3, 125, 125, 125, 125, 125, 3),
                 seed=0, out_scale=0.1):
        if net is None:
            net = DenseNet(widths, kind="tanh", seed=seed,
                           out_scale=out_scale)
        if net.out_dim != 3 or net.in_dim != 3:
            raise ValidationError("displacement net must map 3 -> 3")
        self.net = net

    def u(self, X):
        return nets.forward(self.net, np.atleast_2d(X))

    def to_tensors(self, prefix="u/"):
        return self.net.to_tensors(prefix)

    @classmethod
    def from_tensors(cls, d, prefix="u/"):
        return cls(net=DenseNet.from_tensors(d, prefix))


class PhysicsWeights:
    def __init__(self, w_pde=1.0, w_bc=50.0, w_fem=1.0):
        for name, w in (("w_pde", w_pde), ("w_bc", w_bc), ("w_fem", w_fem)):
            if w < 0:
                raise ValidationError("%s must be nonnegative" % name)
        self.w_pde = float(w_pde)
        self.w_bc = float(w_bc)
        self.w_fem = float(w_fem)


class FieldPrediction:
    """Pointwise bundle: displacement, strain, density-coupled stress."""

    def __init__(self, x, u, strain, stress, vm, rho):
        self.x = x
        self.u = u
        self.strain = strain
        self.stress = stress
        self.vm = vm
        self.rho = rho


def _jet_arrays(U, X, n_hess, params=None):
    """(value, grad, hess) for the displacement field.

    U may be a DisplacementField (net jets) or any object exposing
    jet_arrays(X, n_hess) -> the same triple (analytic test stand-ins).
    """
    if params is None and hasattr(U, "jet_arrays"):
        return U.jet_arrays(X, n_hess)
    jr = nets.jet_forward(U.net, X, n_hess, params=params)
    return jr.value(), jr.grad(), jr.hess()


def geometry_cache(G, dp, X, n_grad):
    """Plain-array density and density gradient for a frozen geometry.

    Gradient rows are only returned for the first n_grad points (the
    PDE stencil); density covers the whole batch. Accepts an SdfField
    or any analytic field with f/grad_f.
    """
    X = np.asarray(X, dtype=np.float64)
    if hasattr(G, "net"):
        jr = nets.jet_forward(G.net, X, 0)
        f = jr.value()[:, 0]
        gf = jr.grad()[:, :, 0]
    else:
        f = G.f(X)
        gf = G.grad_f(X).T
    rho = tp.sigmoid(f / dp.tau)
    bell = rho * (1.0 - rho) / dp.tau
    drho = bell[None, :n_grad] * gf[:, :n_grad]
    return rho, drho


def _tilde_stress(grad, mat, n=None):
    """Six full-material stress components from displacement tangents.

    grad is the (3, N, 3) tangent block, grad[d, p, i] = du_i/dx_d.
    Slicing to the first n points happens before any arithmetic.
    """
    sl = slice(None) if n is None else slice(0, n)
    g = lambda d, i: tp.take(grad, (d, sl, i))
    lam, mu = mat.lam, mat.mu
    e11, e22, e33 = g(0, 0), g(1, 1), g(2, 2)
    tr = tp.add(tp.add(e11, e22), e33)
    s11 = tp.add(tp.mul(e11, 2.0 * mu), tp.mul(tr, lam))
    s22 = tp.add(tp.mul(e22, 2.0 * mu), tp.mul(tr, lam))
    s33 = tp.add(tp.mul(e33, 2.0 * mu), tp.mul(tr, lam))
    s12 = tp.mul(tp.add(g(1, 0), g(0, 1)), mu)
    s13 = tp.mul(tp.add(g(2, 0), g(0, 2)), mu)
    s23 = tp.mul(tp.add(g(2, 1), g(1, 2)), mu)
    return [s11, s22, s33, s12, s13, s23]


def _pde_residual(s_tilde, hess, rho, drho, mat, F=None):
    """Equilibrium residual rows over the Hessian stencil.

    Expands div(rho * s_tilde) + rho F with the product rule; the
    second-order part uses the Navier form (lam + mu) grad(div u)
    + mu laplace(u).
    """
    lam, mu = mat.lam, mat.mu
    h = lambda e, i: tp.take(hess, (e, slice(None), i))
    res = []
    for i in range(3):
        adv = None
        for j in range(3):
            term = tp.mul(drho[j], s_tilde[_M[i][j]])
            adv = term if adv is None else tp.add(adv, term)
        graddiv = None
        for k in range(3):
            term = h(_M[i][k], k)
            graddiv = term if graddiv is None else tp.add(graddiv, term)
        lap = tp.add(tp.add(h(0, i), h(1, i)), h(2, i))
        second = tp.add(tp.mul(graddiv, lam + mu), tp.mul(lap, mu))
        r = tp.add(adv, tp.mul(rho, second))
        if F is not None:
            r = tp.add(r, tp.mul(rho, F[:, i]))
        res.append(r)
    return res


def _mean_sq3(a, b, c):
    return tp.tmean(tp.add(tp.add(tp.square(a), tp.square(b)),
                           tp.square(c)))


class PlBatch:
    """Frozen point batch for the pretraining loss.

    Concatenation order puts the PDE points first so they own the
    second-order jet rows: [domain | traction | fem anchors | dirichlet].
    """

    def __init__(self, sets, fem_ds, F=None):
        if len(sets.domain) == 0 or len(sets.gu) == 0 or len(sets.gf) == 0:
            raise ValidationError("pretraining needs domain, dirichlet "
                                  "and traction points")
        if len(fem_ds) == 0:
            raise ValidationError("pretraining needs a non-empty anchor "
                                  "dataset")
        self.n_pde = len(sets.domain)
        self.n_gf = len(sets.gf)
        self.n_fem = len(fem_ds)
        self.n_gu = len(sets.gu)
        self.X = np.concatenate([sets.domain.points, sets.gf.points,
                                 fem_ds.x, sets.gu.points])
        a = self.n_pde
        b = a + self.n_gf
        c = b + self.n_fem
        self.sl_gf = slice(a, b)
        self.sl_fem = slice(b, c)
        self.sl_gu = slice(c, c + self.n_gu)
        self.normals = sets.gf.normals
        self.Fbar = sets.gf.F
        self.ubar = sets.gu.u_bar
        self.u_fem = fem_ds.u
        self.s_fem = fem_ds.sigma
        if F is not None:
            F = np.broadcast_to(np.asarray(F, dtype=np.float64),
                                (self.n_pde, 3))
        self.F = F


def pl_losses(U, G, dp, mat, batch, u_params=None, geo=None):
    """The three physics-layer losses over a PlBatch.

    With u_params=None everything is plain numpy and the return values
    are floats; with wrapped parameters they are tape Nodes. geo is the
    (rho, drho) cache from geometry_cache, computed here if omitted.
    """
    if geo is None:
        geo = geometry_cache(G, dp, batch.X, batch.n_pde)
    rho, drho = geo
    val, grad, hess = _jet_arrays(U, batch.X, batch.n_pde, params=u_params)

    s_all = _tilde_stress(grad, mat)
    s_pde = [tp.take(s, slice(0, batch.n_pde)) for s in s_all]
    res = _pde_residual(s_pde, hess, rho[:batch.n_pde],
                        [drho[d] for d in range(3)], mat, F=batch.F)
    loss_pde = _mean_sq3(*res)

    u_gu = tp.take(val, (batch.sl_gu, slice(None)))
    du = tp.sub(u_gu, batch.ubar)
    dirichlet = tp.tmean(tp.tsum(tp.square(du), axis=1))

    rho_gf = rho[batch.sl_gf]
    n = batch.normals
    tr_terms = []
    for i in range(3):
        t = None
        for j in range(3):
            term = tp.mul(tp.take(s_all[_M[i][j]], batch.sl_gf), n[:, j])
            t = term if t is None else tp.add(t, term)
        tr_terms.append(tp.sub(tp.mul(t, rho_gf), batch.Fbar[:, i]))
    traction = _mean_sq3(*tr_terms)
    loss_bc = tp.add(dirichlet, traction)

    u_f = tp.take(val, (batch.sl_fem, slice(None)))
    umis = tp.tmean(tp.tsum(tp.square(tp.sub(u_f, batch.u_fem)), axis=1))
    rho_f = rho[batch.sl_fem]
    smis = None
    for c in range(6):
        d = tp.sub(tp.mul(tp.take(s_all[c], batch.sl_fem), rho_f),
                   batch.s_fem[:, c])
        sq = tp.square(d)
        smis = sq if smis is None else tp.add(smis, sq)
    loss_fem = tp.add(umis, tp.tmean(smis))
    return loss_pde, loss_bc, loss_fem


def predict(U, G, dp, mat, x):
    """Pointwise field prediction (plain numpy)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    val, grad, _ = _jet_arrays(U, X, 0)
    jac = np.transpose(grad, (1, 2, 0))  # (n, i, j) = du_i/dx_j
    eps = el.strain(jac)
    rho = density(G, dp, X)
    stress = rho[:, None] * el.stress(eps, mat)
    vm = el.von_mises(stress)
    return FieldPrediction(X, val, eps, stress, vm, rho)


def _check_finite_residual(value, X, what):
    bad = ~np.isfinite(np.asarray(value))
    if bad.any():
        i = int(np.argmax(bad))
        raise DivergenceError("non-finite %s at point %s" % (what, X[i]))


def loss_pde(U, G, dp, mat, F, domain_points):
    """Mean squared equilibrium-residual norm (diagnostic numpy path)."""
    X = np.atleast_2d(domain_points)
    if len(X) == 0:
        raise ValidationError("loss_pde needs at least one point")
    rho, drho = geometry_cache(G, dp, X, len(X))
    _, grad, hess = _jet_arrays(U, X, len(X))
    s = _tilde_stress(grad, mat)
    Fb = None if F is None else \
        np.broadcast_to(np.asarray(F, dtype=np.float64), (len(X), 3))
    res = _pde_residual(s, hess, rho, list(drho), mat, F=Fb)
    for r in res:
        _check_finite_residual(r, X, "pde residual")
    return float(np.mean(res[0] ** 2 + res[1] ** 2 + res[2] ** 2))


def loss_bc(U, G, dp, mat, gu, gf):
    """Dirichlet plus traction mean squared mismatch (numpy path)."""
    if len(gu) == 0 or len(gf) == 0:
        raise ValidationError("loss_bc needs non-empty boundary sets")
    X = np.concatenate([gu.points, gf.points])
    rho, _ = geometry_cache(G, dp, X, 0)
    val, grad, _ = _jet_arrays(U, X, 0)
    du = val[:len(gu)] - gu.u_bar
    dirichlet = float(np.mean(np.sum(du ** 2, axis=1)))
    s = _tilde_stress(grad, mat)
    sl = slice(len(gu), None)
    rho_f = rho[sl]
    acc = np.zeros(len(gf))
    for i in range(3):
        t = sum(s[_M[i][j]][sl] * gf.normals[:, j] for j in range(3))
        acc += (t * rho_f - gf.F[:, i]) ** 2
    return dirichlet + float(np.mean(acc))


def loss_fem(U, G, dp, mat, fem_ds):
    """Anchor mismatch: displacements plus stress components (numpy)."""
    if len(fem_ds) == 0:
        raise ValidationError("loss_fem needs a non-empty dataset")
    X = fem_ds.x
    rho, _ = geometry_cache(G, dp, X, 0)
    val, grad, _ = _jet_arrays(U, X, 0)
    umis = float(np.mean(np.sum((val - fem_ds.u) ** 2, axis=1)))
    s = _tilde_stress(grad, mat)
    smis = sum((s[c] * rho - fem_ds.sigma[:, c]) ** 2 for c in range(6))
    return umis + float(np.mean(smis))


def tilde_stress_at(U, mat, X):
    """Frozen full-material stress components (6, N) plus their
    von-Mises row; factors out of the density by homogeneity."""
    _, grad, _ = _jet_arrays(U, np.atleast_2d(X), 0)
    s = _tilde_stress(grad, mat)
    s = np.stack([np.asarray(c) for c in s])
    vm = el.von_mises(np.moveaxis(s, 0, -1))
    return s, vm


class PretrainReport:
    def __init__(self, history, best_epoch, epochs):
        self.history = np.asarray(history)
        self.best_epoch = best_epoch
        self.epochs = epochs

    def final(self):
        if len(self.history) == 0:
            return None
        return self.history[-1]


HISTORY_HEADER = "epoch,L_pl,L_pde,L_bc,L_fem"


def save_history_csv(path, history):
    with open(path, "w", newline="\n") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for row in history:
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n"
                     % (int(row[0]), *row[1:]))


def pretrain(U, G, dp, mat, sets, fem_ds, weights=None, epochs=10000,
             lr=5e-3, F=None):
    """Minimize the weighted physics loss over U with the geometry held
    frozen (its parameters are never touched). Full-batch updates, one
    per epoch. Returns a PretrainReport; on divergence the best
    checkpoint is restored before the error propagates."""
    if weights is None:
        weights = PhysicsWeights()
    if epochs < 0:
        raise ValidationError("epochs must be nonnegative")
    batch = PlBatch(sets, fem_ds, F=F)
    geo = geometry_cache(G, dp, batch.X, batch.n_pde)

    history = []
    if epochs == 0:
        return PretrainReport(np.zeros((0, 5)), 0, 0)

    params = U.net.params()
    opt = Adam(params, lr=lr)
    best = (np.inf, U.net.copy_params(), 0)

    def closure(t, wrapped):
        lp, lb, lf = pl_losses(U, G, dp, mat, batch, u_params=wrapped,
                               geo=geo)
        comps.append((lp.val, lb.val, lf.val))
        total = tp.add(tp.add(tp.mul(lp, weights.w_pde),
                              tp.mul(lb, weights.w_bc)),
                       tp.mul(lf, weights.w_fem))
        return total

    for ep in range(epochs):
        comps = []
        try:
            lv, grads = nets.param_gradient(closure, U.net)
        except DivergenceError:
            U.net.set_params(best[1])
            raise DivergenceError(
                "pretraining diverged at epoch %d; best checkpoint "
                "(epoch %d) restored" % (ep, best[2]),
                best=best[1], history=history, epoch=ep)
        opt.step(params, grads[0])
        lp, lb, lf = comps[0]
        history.append((ep, lv, lp, lb, lf))
        if lv < best[0]:
            best = (lv, U.net.copy_params(), ep)
    return PretrainReport(history, best[2], epochs)
