"""Neural signed-distance geometry.

Sign convention is positive inside: interior points of the source mesh
get f > 0, exterior points f < 0. The density field is the sigmoid of
f / tau and equals 1/2 exactly on the zero level set.
"""

import numpy as np

from . import nets, tape as tp, mesh as meshmod
from .errors import ValidationError, DivergenceError
from .nets import DenseNet
from .optim import Adam

CLAMP_DELTA = 0.1
NEAR_SIGMAS = (0.005, 0.05)


class DensityParams:
    def __init__(self, tau=0.02):
        if tau <= 0:
            raise ValidationError("tau must be positive, got %r" % (tau,))
        self.tau = float(tau)


class SdfField:
    """A geometry net over the normalized computation cube.

    bounds is (lo, hi) shared by all axes; the fitted shape must stay
    inside with margin, which fit_sdf guarantees by requiring the mesh
    to be normalized into [-0.9, 0.9]^3 first.
    """

    def __init__(self, net=None, bounds=(-1.0, 1.0), widths=(3, 64, 64, 64, 1),
                 seed=0, geometric_radius=0.5):
        if net is None:
            net = DenseNet(widths, kind="softplus", seed=seed,
                           geometric_radius=geometric_radius)
        if net.out_dim != 1:
            raise ValidationError("geometry net must have one output")
        self.net = net
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.fit_report = None

    def f(self, X):
        return nets.forward(self.net, np.atleast_2d(X))[:, 0]

    def grad_f(self, X):
        jr = nets.jet_forward(self.net, np.atleast_2d(X), 0)
        return jr.grad()[:, :, 0].T.copy()

    def to_tensors(self, prefix="g/"):
        d = self.net.to_tensors(prefix)
        d[prefix + "bounds"] = np.array(self.bounds)
        return d

    @classmethod
    def from_tensors(cls, d, prefix="g/"):
        net = DenseNet.from_tensors(d, prefix)
        lo, hi = d[prefix + "bounds"]
        return cls(net=net, bounds=(lo, hi))


def density(field, dp, x):
    """Sigmoid(f / tau); strictly in (0, 1), monotone in f, 0.5 on the
    zero level set."""
    return tp.sigmoid(field.f(x) / dp.tau)


class SdfSampleSet:
    """Labeled points for fitting; strata tag 1 = near-surface, 0 = uniform.

    surface_points is an optional exact on-surface holdout used only for
    the fit report, never for training.
    """

    def __init__(self, points, labels, strata, surface_points=None):
        points = np.asarray(points, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if len(points) != len(labels):
            raise ValidationError("points and labels must align")
        if not np.all(np.isfinite(labels)):
            raise ValidationError("sdf labels must be finite")
        self.points = points
        self.labels = labels
        self.strata = np.asarray(strata, dtype=int)
        self.surface_points = surface_points

    def __len__(self):
        return len(self.points)


def _sample_on_faces(mesh, n, rng):
    areas = mesh.areas()
    pick = rng.choice(len(mesh.faces), size=n, p=areas / areas.sum())
    v0, v1, v2 = mesh.corners()
    r1 = np.sqrt(rng.uniform(size=(n, 1)))
    r2 = rng.uniform(size=(n, 1))
    return (1 - r1) * v0[pick] + r1 * (1 - r2) * v1[pick] + r1 * r2 * v2[pick]


def label_points(mesh, points, dist=None):
    """Signed distance labels at given points, positive inside.

    Magnitude is the exact unsigned distance to the mesh; sign comes
    from the ray-parity majority test.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if dist is None:
        dist = meshmod.MeshDistance(mesh)
    sign = np.where(meshmod.inside_mesh(points, mesh), 1.0, -1.0)
    return dist.query(points) * sign


def sample_mesh_sdf(mesh, n, near_fraction=0.9, noise_scale=1.0, seed=0,
                    bounds=(-1.0, 1.0), n_surface=2000):
    """Labeled SDF samples from a watertight mesh.

    Label = unsigned distance to the mesh, signed positive inside by the
    ray-parity test. near_fraction of the budget hugs the surface
    (Gaussian offsets at sigma 0.005 and 0.05, scaled by noise_scale);
    the rest is uniform in the cube. A separate batch of exact surface
    points rides along for fit reporting.
    """
    meshmod.require_watertight(mesh, "sample_mesh_sdf")
    if n < 1:
        raise ValidationError("sample count must be positive")
    if not 0.0 <= near_fraction <= 1.0:
        raise ValidationError("near_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_near = int(round(n * near_fraction))
    n_uni = n - n_near

    base = _sample_on_faces(mesh, n_near, rng)
    sig = np.where(rng.uniform(size=(n_near, 1)) < 0.5,
                   NEAR_SIGMAS[0], NEAR_SIGMAS[1]) * noise_scale
    lo, hi = bounds
    pts_near = np.clip(base + rng.normal(size=(n_near, 3)) * sig, lo, hi)
    pts_uni = rng.uniform(lo, hi, size=(n_uni, 3))
    points = np.concatenate([pts_near, pts_uni])

    labels = label_points(mesh, points)
    strata = np.concatenate([np.ones(n_near, dtype=int),
                             np.zeros(n_uni, dtype=int)])
    surface = _sample_on_faces(mesh, n_surface, rng) if n_surface else None
    return SdfSampleSet(points, labels, strata, surface_points=surface)


class FitConfig:
    """Training recipe for fit_sdf. Defaults follow the published setup
    (50 epochs of 200 steps, batch 16384, lr 5e-4, deep softplus net);
    tests shrink everything."""

    def __init__(self, epochs=50, steps_per_epoch=200, batch=16384,
                 lr=5e-4, n_samples=200000, seed=0,
                 widths=(3, 256, 256, 256, 256, 256, 256, 256, 1)):
        if epochs < 0 or steps_per_epoch < 1 or batch < 1:
            raise ValidationError("fit schedule must be positive")
        if lr <= 0:
            raise ValidationError("fit lr must be positive")
        self.epochs = int(epochs)
        self.steps_per_epoch = int(steps_per_epoch)
        self.batch = int(batch)
        self.lr = float(lr)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.widths = tuple(widths)


def _act_node(x, kind):
    a1 = nets.act(x.val, kind, 1)
    out = tp.Node(nets.act(x.val, kind, 0), x.tape)

    def bw():
        if out.grad is not None:
            tp._gbuf(x)[...] += a1 * out.grad

    x.tape.add(bw)
    return out


def _clamped_l1(wrapped, net, X, y):
    rows = X
    nlay = len(wrapped)
    for k, (W, b) in enumerate(wrapped):
        rows = tp.add(tp.matmul(rows, W), b)
        if k < nlay - 1:
            rows = _act_node(rows, net.kind)
    f = tp.mul(tp.take(rows, (slice(None), 0)), net.out_scale)
    d = CLAMP_DELTA
    return tp.tmean(tp.tabs(tp.sub(tp.clamp(f, -d, d), np.clip(y, -d, d))))


def fit_sdf(source, config=None, field=None):
    """Fit a geometry net with a clamped L1 loss on signed distances.

    source is either a watertight, normalized TriangleMesh (samples are
    drawn here) or a prebuilt SdfSampleSet. Returns the fitted SdfField
    with a fit_report dict attached (surface_error = mean |f| on the
    held-out surface points, final_loss, history). Divergence restores
    and reports the best checkpoint seen.
    """
    if config is None:
        config = FitConfig()
    if isinstance(source, meshmod.TriangleMesh):
        lo = source.vertices.min()
        hi = source.vertices.max()
        if lo < -0.95 or hi > 0.95:
            raise ValidationError(
                "mesh must be normalized into [-0.9, 0.9]^3 before "
                "fitting (bounds %.3f..%.3f); use normalize_mesh" % (lo, hi))
        samples = sample_mesh_sdf(source, config.n_samples, seed=config.seed)
    elif isinstance(source, SdfSampleSet):
        samples = source
    else:
        raise ValidationError("fit_sdf wants a TriangleMesh or SdfSampleSet")
    if len(samples) == 0:
        raise ValidationError("empty SDF sample set")
    if field is None:
        field = SdfField(widths=config.widths, seed=config.seed)
    net = field.net
    rng = np.random.default_rng(config.seed + 1)

    if samples.surface_points is not None:
        surf = samples.surface_points
        surf_true = np.zeros(len(surf))
        P, Y = samples.points, samples.labels
    else:
        # no exact surface batch: hold out 5% of the near stratum
        near_idx = np.where(samples.strata == 1)[0]
        if len(near_idx) == 0:
            near_idx = np.arange(len(samples))
        hold = near_idx[: max(1, len(near_idx) // 20)]
        mask = np.ones(len(samples), dtype=bool)
        mask[hold] = False
        surf, surf_true = samples.points[hold], samples.labels[hold]
        P, Y = samples.points[mask], samples.labels[mask]

    params = net.params()
    opt = Adam(params, lr=config.lr)
    best = (np.inf, net.copy_params())
    history = []
    last = np.nan
    for ep in range(config.epochs):
        ep_loss = 0.0
        for _ in range(config.steps_per_epoch):
            idx = rng.integers(0, len(P), size=min(config.batch, len(P)))
            Xb, yb = P[idx], Y[idx]
            try:
                lv, grads = nets.param_gradient(
                    lambda t, w: _clamped_l1(w, net, Xb, yb), net)
            except DivergenceError:
                net.set_params(best[1])
                raise DivergenceError(
                    "sdf fit diverged at epoch %d; best checkpoint "
                    "restored" % ep, best=best[1], history=history, epoch=ep)
            opt.step(params, grads[0])
            ep_loss += lv
        last = ep_loss / config.steps_per_epoch
        history.append(last)
        if last < best[0]:
            best = (last, net.copy_params())

    surf_err = float(np.mean(np.abs(field.f(surf) - surf_true)))
    field.fit_report = {"surface_error": surf_err, "final_loss": float(last),
                        "history": history}
    return field


def eikonal_loss(field, points):
    """Mean squared deviation of |grad f| from 1 over the batch."""
    g = field.grad_f(np.atleast_2d(points))
    gn = np.linalg.norm(g, axis=1)
    return float(np.mean((gn - 1.0) ** 2))


def extract_mesh(field, resolution=64):
    """Marching cubes on the zero level set; vertices in domain units.

    The sampled volume is padded with one negative layer outside the
    domain, so a field that is still positive at the walls (sloppy far
    field, or a shape grown to the edge) gets capped there instead of
    producing an open surface. Output is watertight.
    """
    from skimage import measure

    if resolution < 16:
        raise ValidationError("extraction resolution must be >= 16")
    lo, hi = field.bounds
    xs = np.linspace(lo, hi, resolution)
    step = xs[1] - xs[0]
    G = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1)
    vol = field.f(G.reshape(-1, 3)).reshape(resolution, resolution,
                                            resolution)
    if vol.max() <= 0.0:
        raise ValidationError("empty isosurface: field is nowhere "
                              "positive on the grid")
    # nudge exact zeros so no cell emits zero-area triangles
    vol[vol == 0.0] = 1e-12
    vol = np.pad(vol, 1, constant_values=-1.0)
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0,
                                                spacing=(step, step, step))
    verts = verts + (lo - step)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    faces = faces[areas > meshmod.DEGENERATE_AREA]
    return meshmod.TriangleMesh(verts, faces)
