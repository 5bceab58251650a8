"""Geometry-side losses and the alternating co-training loop.

Every t-th epoch is a geometry step: the displacement net is frozen,
its full-material stress is cached, and the geometry net takes one
plain gradient step on the weighted sum of the stress-uniformity term,
the exterior-preservation term, the volume hinge, and the eikonal
regularizer. All other epochs are physics steps: the geometry is
frozen (density and its gradient cached as plain arrays) and the
displacement net descends the physics loss.

The stress-uniformity terms couple to the density twice: the predicted
von-Mises is rho times the cached full-material value, and the
integrand weights it by rho again. The derivative of (vmax - rho*vm) *
rho changes sign at rho*vm = vmax/2, so density grows where predicted
stress is above half the (detached) maximum and shrinks where it is
below; material migrates toward stress concentrations instead of only
being carved away.

Updates are plain gradient descent, not Adam. The geometry rate 1e-6
only moves the level set because the constraint weights (1e5, 1e4)
put the raw gradients at a matching scale; a normalizing optimizer
would erase exactly that balance.
"""

import numpy as np

from . import fem as fem_mod, nets, physics, tape as tp
from .errors import ValidationError, DivergenceError
from .geometry import density

EIK_EPS = 1e-30  # keeps the gradient of |grad f| finite at zero


class CoTrainConfig:
    """Knobs of the alternating loop.

    M_v is the target mean density over the domain samples; None defers
    to the initial shape's mean plus 0.05. two_phase selects the gated
    combined loss; the plain spread loss is kept for ablations.
    """

    def __init__(self, w_design=25.0, w_gc=100000.0, w_vr=10000.0,
                 w_eikonal=10.0, t=10, epoch_max=500, alpha=1e-6,
                 beta=1e-3, M_v=None, two_phase=True, no_gc=False,
                 no_design=False, no_fem_embed=False, no_physics=False):
        if t < 2:
            raise ValidationError("alternation period t must be >= 2")
        for name, w in (("w_design", w_design), ("w_gc", w_gc),
                        ("w_vr", w_vr), ("w_eikonal", w_eikonal)):
            if w < 0:
                raise ValidationError("%s must be nonnegative" % name)
        if M_v is not None and not 0.0 < M_v < 1.0:
            raise ValidationError("M_v must lie in (0, 1)")
        if epoch_max < 0:
            raise ValidationError("epoch_max must be nonnegative")
        if alpha <= 0 or beta <= 0:
            raise ValidationError("learning rates must be positive")
        self.w_design = float(w_design)
        self.w_gc = float(w_gc)
        self.w_vr = float(w_vr)
        self.w_eikonal = float(w_eikonal)
        self.t = int(t)
        self.epoch_max = int(epoch_max)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.M_v = None if M_v is None else float(M_v)
        self.two_phase = bool(two_phase)
        self.no_gc = bool(no_gc)
        self.no_design = bool(no_design)
        self.no_fem_embed = bool(no_fem_embed)
        self.no_physics = bool(no_physics)


def schedule_counts(epochs, t):
    """(geometry steps, physics steps) over `epochs` at period t."""
    geo = -(-epochs // t)
    return geo, epochs - geo


def default_volume_target(G, dp, points):
    """Initial mean density plus a 5% growth allowance."""
    vf = float(np.mean(density(G, dp, points)))
    return min(vf + 0.05, 0.99)


def _design_core(rho, vm_hat):
    """Spread of rho-weighted von-Mises: detached sample max minus the
    density-weighted mean. Works on Nodes or plain arrays."""
    w = tp.mul(rho, vm_hat)
    total_rho = tp.tsum(rho)
    if float(tp.raw(total_rho)) <= 1e-9:
        raise ValidationError("degenerate geometry: total density is "
                              "zero over the sample set")
    vmax = float(np.max(tp.raw(w)))
    return tp.sub(vmax, tp.div(tp.tsum(w), total_rho))


def _combine_core(rho, vm_hat, M_v):
    """Gated uniformity loss: exactly 0 while mean density <= M_v,
    otherwise the plain mean of (vmax - vm_hat) * rho with vmax
    detached."""
    if float(np.mean(tp.raw(rho))) <= M_v:
        return 0.0
    vmax = float(np.max(tp.raw(vm_hat)))
    return tp.tmean(tp.mul(tp.sub(vmax, vm_hat), rho))


def _eikonal_core(g0, g1, g2):
    q = tp.add(tp.add(tp.square(g0), tp.square(g1)), tp.square(g2))
    norm = tp.sqrt(tp.add(q, EIK_EPS))
    return tp.tmean(tp.square(tp.sub(norm, 1.0)))


def loss_design(pred):
    """Public form over a FieldPrediction batch."""
    return float(_design_core(pred.rho, pred.vm))


def loss_gc(G, dp, gc):
    """Mean squared density drift on the frozen exterior set."""
    if len(gc) == 0:
        raise ValidationError("constraint set is empty")
    rho = density(G, dp, gc.points)
    return float(np.mean((rho - gc.rho) ** 2))


def loss_vr(G, dp, points, M_v):
    """Hinge on the mean density over the domain samples."""
    if len(points) == 0:
        raise ValidationError("volume loss needs at least one point")
    vf = float(np.mean(density(G, dp, points)))
    return max(vf - M_v, 0.0)


def loss_combine(U, G, dp, mat, points, M_v):
    """Public gated form; evaluates the prediction itself."""
    pred = physics.predict(U, G, dp, mat, points)
    return float(_combine_core(pred.rho, pred.vm, M_v))


class CoTrainReport:
    """Per-epoch trajectories plus the before/after re-simulation.

    rows columns: epoch, kind (0 geometry, 1 physics), total loss,
    design, gc, vr, eikonal, pde, bc, fem (inapplicable entries NaN),
    volume fraction, gate state.
    """

    def __init__(self, rows, initial_vf, final_vf, M_v,
                 initial_max_vm=None, final_max_vm=None):
        self.rows = np.asarray(rows, dtype=np.float64)
        self.initial_vf = initial_vf
        self.final_vf = final_vf
        self.M_v = M_v
        self.initial_max_vm = initial_max_vm
        self.final_max_vm = final_max_vm

    @property
    def vf_trajectory(self):
        return self.rows[:, 10]

    @property
    def gate_trajectory(self):
        return self.rows[:, 11]

    def gate_open_epoch(self):
        open_at = np.nonzero(self.rows[:, 11] > 0)[0]
        return int(self.rows[open_at[0], 0]) if len(open_at) else None

    def summary(self):
        return {
            "epochs": int(len(self.rows)),
            "initial_vf": self.initial_vf,
            "final_vf": self.final_vf,
            "M_v": self.M_v,
            "initial_max_vm": self.initial_max_vm,
            "final_max_vm": self.final_max_vm,
            "gate_open_epoch": self.gate_open_epoch(),
        }

    def save_csv(self, path):
        header = ("epoch,kind,L_total,L_design,L_gc,L_vr,L_eik,"
                  "L_pde,L_bc,L_fem,vf,gate")
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for r in self.rows:
                fh.write("%d,%d," % (int(r[0]), int(r[1]))
                         + ",".join("%.17g" % v for v in r[2:]) + "\n")


def resimulate(G, dp, mat, bspec, resolution):
    """Voxelize the current geometry and solve the anchored BVP.

    Returns (max von-Mises, solution, hex mesh); this is the metric the
    co-training claims are judged against.
    """
    mesh = fem_mod.voxelize(G, dp, resolution)
    sol = fem_mod.solve(mesh, mat, bspec)
    return float(fem_mod.max_von_mises(sol)), sol, mesh


def _geometry_closure(G, dp, cfg, M_v, X_dom, vm_tilde, gc, parts):
    """Build the geometry loss on a tape; returns the closure."""
    X_geo = np.concatenate([X_dom, gc.points])
    n_dom = len(X_dom)

    def closure(t, wrapped):
        jr = nets.jet_forward(G.net, X_geo, 0, params=wrapped)
        f = tp.take(jr.rows, (slice(0, len(X_geo)), 0))
        rho = tp.sigmoid(tp.mul(f, 1.0 / dp.tau))
        rho_dom = tp.take(rho, slice(0, n_dom))
        rho_gc = tp.take(rho, slice(n_dom, None))
        grad = jr.grad()
        gs = [tp.take(grad, (d, slice(0, n_dom), 0)) for d in range(3)]

        if cfg.no_design:
            design = 0.0
        else:
            vm_hat = tp.mul(rho_dom, vm_tilde)
            design = _combine_core(rho_dom, vm_hat, M_v) if cfg.two_phase \
                else _design_core(rho_dom, vm_hat)
        gcl = 0.0 if cfg.no_gc else \
            tp.tmean(tp.square(tp.sub(rho_gc, gc.rho)))
        vr = tp.relu(tp.sub(tp.tmean(rho_dom), M_v))
        eik = _eikonal_core(*gs)

        total = tp.mul(eik, cfg.w_eikonal)
        total = tp.add(total, tp.mul(vr, cfg.w_vr))
        if not isinstance(gcl, float):
            total = tp.add(total, tp.mul(gcl, cfg.w_gc))
        if not isinstance(design, float):
            total = tp.add(total, tp.mul(design, cfg.w_design))
        parts[:] = [float(tp.raw(v)) if not isinstance(v, float) else v
                    for v in (design, gcl, vr, eik)]
        return total

    return closure


def _sgd(params, grads, lr):
    for p, g in zip(params, grads):
        p -= lr * g


def _check_params(net, what):
    for p in net.params():
        if not np.all(np.isfinite(p)):
            raise DivergenceError("%s parameters left finite range" % what)


def cotrain(U, G, dp, mat, sets, fem_ds, cfg, bspec=None,
            fem_resolution=None, F=None, checkpoint_fn=None,
            checkpoint_every=0):
    """Alternating optimization of Algorithm form: one geometry step
    every t epochs (epoch 0 included), physics steps otherwise. U and G
    are updated in place; a CoTrainReport is returned.

    When bspec and fem_resolution are given, the initial and final
    geometries are re-simulated and the max von-Mises pair lands in the
    report. On divergence both nets are restored to the last completed
    epoch and the error carries that epoch index.
    """
    if not hasattr(G, "net"):
        raise ValidationError("co-training needs a neural geometry field")
    batch = physics.PlBatch(sets, fem_ds, F=F)
    X_dom = sets.domain.points
    gc = sets.gc
    if len(gc) == 0:
        raise ValidationError("co-training needs a non-empty exterior "
                              "constraint set")
    M_v = cfg.M_v if cfg.M_v is not None \
        else default_volume_target(G, dp, X_dom)

    pw = physics.PhysicsWeights(
        w_fem=0.0 if cfg.no_fem_embed else 1.0)
    initial_vf = float(np.mean(density(G, dp, X_dom)))
    initial_vm = final_vm = None
    if bspec is not None and fem_resolution is not None:
        initial_vm = resimulate(G, dp, mat, bspec, fem_resolution)[0]

    geo = physics.geometry_cache(G, dp, batch.X, batch.n_pde)
    vm_tilde = None
    rows = []
    vf = initial_vf
    u_snap, g_snap = U.net.copy_params(), G.net.copy_params()

    for epoch in range(cfg.epoch_max):
        gate = 1.0 if vf > M_v else 0.0
        nan = np.nan
        try:
            if epoch % cfg.t == 0:
                if vm_tilde is None:
                    _, vm_tilde = physics.tilde_stress_at(U, mat, X_dom)
                parts = []
                lv, (grads,) = nets.param_gradient(
                    _geometry_closure(G, dp, cfg, M_v, X_dom, vm_tilde,
                                      gc, parts), G.net)
                _sgd(G.net.params(), grads, cfg.alpha)
                _check_params(G.net, "geometry")
                geo = physics.geometry_cache(G, dp, batch.X, batch.n_pde)
                vf = float(np.mean(geo[0][:batch.n_pde]))
                rows.append((epoch, 0, lv, parts[0], parts[1], parts[2],
                             parts[3], nan, nan, nan, vf, gate))
            elif cfg.no_physics:
                rows.append((epoch, 1, nan, nan, nan, nan, nan, nan,
                             nan, nan, vf, gate))
            else:
                comps = []

                def closure(t, wrapped):
                    lp, lb, lf = physics.pl_losses(
                        U, G, dp, mat, batch, u_params=wrapped, geo=geo)
                    comps.append((float(lp.val), float(lb.val),
                                  float(lf.val)))
                    return tp.add(
                        tp.add(tp.mul(lp, pw.w_pde), tp.mul(lb, pw.w_bc)),
                        tp.mul(lf, pw.w_fem))

                lv, (grads,) = nets.param_gradient(closure, U.net)
                _sgd(U.net.params(), grads, cfg.beta)
                _check_params(U.net, "displacement")
                vm_tilde = None  # displacement moved; stress cache stale
                lp, lb, lf = comps[0]
                rows.append((epoch, 1, lv, nan, nan, nan, nan, lp, lb,
                             lf, vf, gate))
        except DivergenceError:
            U.net.set_params(u_snap)
            G.net.set_params(g_snap)
            raise DivergenceError(
                "co-training diverged at epoch %d; both nets restored "
                "to epoch %d" % (epoch, epoch - 1),
                history=rows, epoch=epoch)
        u_snap, g_snap = U.net.copy_params(), G.net.copy_params()
        if checkpoint_fn is not None and checkpoint_every > 0 \
                and (epoch + 1) % checkpoint_every == 0:
            checkpoint_fn(epoch, U, G)

    final_vf = float(np.mean(density(G, dp, X_dom)))
    if bspec is not None and fem_resolution is not None:
        final_vm = resimulate(G, dp, mat, bspec, fem_resolution)[0]
    return CoTrainReport(np.asarray(rows).reshape(-1, 12), initial_vf,
                         final_vf, M_v, initial_vm, final_vm)
