"""Point-set construction for the physics losses.

Four families: domain points (dense near/inside the shape, sparse far
away), Dirichlet surface points with prescribed displacements, traction
points (loaded shape surface plus traction-free cube faces), and the
frozen geometry-constraint set of exterior densities.

All sets are bit-reproducible from (seed, config); rejection sampling
draws candidate batches in a fixed order.
"""

import numpy as np

from .errors import ValidationError
from .geometry import DensityParams, density

SURFACE_BAND = 0.02
_BATCH = 8192
_MAX_BATCHES = 400


class DenseSparseConfig:
    """Budget split for domain sampling.

    sparse_fraction of the points are uniform over the whole cube; the
    rest are rejection-sampled from the dense region, the band
    |f_init| < threshold united with the interior f_init >= 0.
    """

    def __init__(self, field, sparse_fraction=0.3, threshold=0.10):
        if not 0.0 <= sparse_fraction <= 1.0:
            raise ValidationError("sparse_fraction must lie in [0, 1]")
        if threshold <= 0:
            raise ValidationError("dense threshold must be positive")
        self.field = field
        self.sparse_fraction = float(sparse_fraction)
        self.threshold = float(threshold)


class DomainSamples:
    def __init__(self, points, dense):
        self.points = points
        self.dense = dense

    def __len__(self):
        return len(self.points)


class DirichletSamples:
    def __init__(self, points, u_bar):
        self.points = points
        self.u_bar = u_bar

    def __len__(self):
        return len(self.points)


class TractionSamples:
    """Surface points with outward unit normals and prescribed tractions
    (zero rows for the traction-free cube faces)."""

    def __init__(self, points, normals, F):
        nrm = np.linalg.norm(normals, axis=1)
        if len(normals) and not np.all(np.abs(nrm - 1.0) < 1e-9):
            raise ValidationError("traction normals must be unit length")
        self.points = points
        self.normals = normals
        self.F = F

    def __len__(self):
        return len(self.points)


class ConstraintSet:
    """Frozen exterior densities: rho was sampled at build time and is
    never re-evaluated when the geometry moves."""

    def __init__(self, points, rho):
        rho = np.asarray(rho, dtype=np.float64)
        if len(rho) and not np.all((rho > 0) & (rho < 1)):
            raise ValidationError("constraint densities must lie in (0, 1)")
        self.points = points
        self.rho = rho

    def __len__(self):
        return len(self.points)


class SampleSets:
    def __init__(self, domain, gu, gf, gc, seed):
        self.domain = domain
        self.gu = gu
        self.gf = gf
        self.gc = gc
        self.seed = seed


def _rejection(rng, bounds, predicate, n, what):
    lo, hi = bounds
    kept = []
    total = 0
    for _ in range(_MAX_BATCHES):
        cand = rng.uniform(lo, hi, size=(_BATCH, 3))
        good = cand[predicate(cand)]
        if len(good):
            kept.append(good)
            total += len(good)
        if total >= n:
            return np.concatenate(kept)[:n]
    raise ValidationError(
        "sampling failed: found %d of %d %s points after %d candidates"
        % (total, n, what, _MAX_BATCHES * _BATCH))


def sample_domain(bounds, N, cfg, seed):
    """Tagged domain points: dense (tag 1) near/inside the shape, sparse
    (tag 0) uniform over the cube."""
    if N < 1:
        raise ValidationError("need at least one domain point")
    rng = np.random.default_rng(seed)
    n_dense = int(round((1.0 - cfg.sparse_fraction) * N))
    n_sparse = N - n_dense
    f = cfg.field.f
    thr = cfg.threshold

    def in_dense(x):
        v = f(x)
        return (np.abs(v) < thr) | (v >= 0)

    parts = []
    tags = []
    if n_dense:
        parts.append(_rejection(rng, bounds, in_dense, n_dense, "dense"))
        tags.append(np.ones(n_dense, dtype=int))
    if n_sparse:
        lo, hi = bounds
        parts.append(rng.uniform(lo, hi, size=(n_sparse, 3)))
        tags.append(np.zeros(n_sparse, dtype=int))
    return DomainSamples(np.concatenate(parts), np.concatenate(tags))


def _project_to_surface(field, x):
    """One Newton step toward the zero level set along the gradient."""
    fv = field.f(x)
    g = field.grad_f(x)
    gn2 = np.maximum(np.einsum("ij,ij->i", g, g), 1e-12)
    return x - (fv / gn2)[:, None] * g


def _surface_points(field, region_pred, n, rng, bounds, what):
    """Rejection from the narrow band then one projection step; points
    that drift out of the band or the region are resampled."""

    kept = []
    total = 0
    for _ in range(_MAX_BATCHES):
        lo, hi = bounds
        cand = rng.uniform(lo, hi, size=(_BATCH, 3))
        band = np.abs(field.f(cand)) < SURFACE_BAND
        cand = cand[band & region_pred(cand)]
        if len(cand) == 0:
            continue
        cand = _project_to_surface(field, cand)
        ok = (np.abs(field.f(cand)) < SURFACE_BAND) & region_pred(cand) \
            & np.all((cand >= lo) & (cand <= hi), axis=1)
        cand = cand[ok]
        if len(cand):
            kept.append(cand)
            total += len(cand)
        if total >= n:
            return np.concatenate(kept)[:n]
    raise ValidationError(
        "sampling failed: found %d of %d %s surface points; check that "
        "the band intersects the shape" % (total, n, what))


def _outward_normals(field, x):
    """Outward = direction of decreasing f (positive inside)."""
    g = field.grad_f(x)
    return -g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_boundaries(bspec, field, N_u, N_f, seed, bounds=(-1.0, 1.0)):
    """Dirichlet and traction point sets.

    The traction set splits evenly between loaded shape-surface points
    (prescribed traction from bspec) and cube-face points (zero traction,
    axis-aligned outward normals).
    """
    if N_u < 1 or N_f < 1:
        raise ValidationError("boundary sample counts must be positive")
    rng = np.random.default_rng(seed)

    pu = _surface_points(field, bspec.in_dirichlet, N_u, rng, bounds,
                         "dirichlet")
    gu = DirichletSamples(pu, bspec.u_bar_at(pu))

    n_load = N_f // 2
    n_cube = N_f - n_load
    pl = _surface_points(field, bspec.in_load, n_load, rng, bounds, "loaded")
    nl = _outward_normals(field, pl)
    Fl = bspec.traction_at(pl)

    lo, hi = bounds
    pc = rng.uniform(lo, hi, size=(n_cube, 3))
    face = rng.integers(0, 6, size=n_cube)
    axis, side = face // 2, face % 2
    pc[np.arange(n_cube), axis] = np.where(side == 0, lo, hi)
    nc = np.zeros((n_cube, 3))
    nc[np.arange(n_cube), axis] = np.where(side == 0, -1.0, 1.0)
    Fc = np.zeros((n_cube, 3))

    gf = TractionSamples(np.concatenate([pl, pc]),
                         np.concatenate([nl, nc]),
                         np.concatenate([Fl, Fc]))
    return gu, gf


def build_constraint_set(field, margin, N_gc, seed, dp=None,
                         bounds=(-1.0, 1.0)):
    """Exterior points at least margin outside the shape, with densities
    frozen at build time."""
    if margin <= 0:
        raise ValidationError("constraint margin must be positive")
    if N_gc < 1:
        raise ValidationError("need at least one constraint point")
    if dp is None:
        dp = DensityParams()
    rng = np.random.default_rng(seed)
    pts = _rejection(rng, bounds, lambda x: field.f(x) < -margin, N_gc,
                     "exterior constraint")
    return ConstraintSet(pts, density(field, dp, pts))


def build_sample_sets(field, bspec, N_domain=8192, N_u=512, N_f=1024,
                      N_gc=2048, seed=0, sparse_fraction=0.3,
                      dense_threshold=0.10, gc_margin=0.1, dp=None,
                      bounds=(-1.0, 1.0)):
    """All four point families from one seed (the usual entry point)."""
    cfg = DenseSparseConfig(field, sparse_fraction, dense_threshold)
    dom = sample_domain(bounds, N_domain, cfg, seed)
    gu, gf = sample_boundaries(bspec, field, N_u, N_f, seed + 1,
                               bounds=bounds)
    gc = build_constraint_set(field, gc_margin, N_gc, seed + 2, dp=dp,
                              bounds=bounds)
    return SampleSets(dom, gu, gf, gc, seed)


def save_samples_csv(path, sets):
    """One row per point: set,x,y,z,tag,ux,uy,uz,nx,ny,nz,fx,fy,fz,rho.

    Unused columns hold 0 for the sets they do not apply to.
    """
    z3 = (0.0, 0.0, 0.0)

    def rows():
        for p, t in zip(sets.domain.points, sets.domain.dense):
            yield ("domain", p, float(t)) + z3 + z3 + z3 + (0.0,)
        for p, u in zip(sets.gu.points, sets.gu.u_bar):
            yield ("gu", p, 0.0) + tuple(u) + z3 + z3 + (0.0,)
        for p, n, F in zip(sets.gf.points, sets.gf.normals, sets.gf.F):
            yield ("gf", p, 0.0) + z3 + tuple(n) + tuple(F) + (0.0,)
        for p, r in zip(sets.gc.points, sets.gc.rho):
            yield ("gc", p, 0.0) + z3 + z3 + z3 + (float(r),)

    with open(path, "w") as fh:
        fh.write("set,x,y,z,tag,ux,uy,uz,nx,ny,nz,fx,fy,fz,rho\n")
        for name, p, *rest in rows():
            fh.write(name + "," + ",".join("%.17g" % v
                                           for v in tuple(p) + tuple(rest))
                     + "\n")
