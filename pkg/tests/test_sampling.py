import numpy as np
import pytest

from physhape import sampling as sp
from physhape.elasticity import BoundarySpec
from physhape.errors import ValidationError
from physhape.shapes import SphereField, BoxField

BOUNDS = (-1.0, 1.0)


def test_sample_domain_dense_tags_and_membership():
    field = SphereField(0.6)
    cfg = sp.DenseSparseConfig(field, sparse_fraction=0.3, threshold=0.10)
    dom = sp.sample_domain(BOUNDS, 1000, cfg, seed=0)
    assert len(dom) == 1000
    assert np.sum(dom.dense == 1) == 700
    f = field.f(dom.points[dom.dense == 1])
    assert np.all((np.abs(f) < 0.10) | (f >= 0))


def test_sample_domain_uniform_when_all_sparse():
    field = SphereField(0.6)
    cfg = sp.DenseSparseConfig(field, sparse_fraction=1.0)
    N = 16000
    dom = sp.sample_domain(BOUNDS, N, cfg, seed=1)
    assert np.all(dom.dense == 0)
    octant = ((dom.points > 0) * [1, 2, 4]).sum(axis=1)
    counts = np.bincount(octant, minlength=8)
    sigma = np.sqrt(N * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - N / 8) < 4 * sigma)


def test_sample_domain_deterministic():
    field = SphereField(0.5)
    cfg = sp.DenseSparseConfig(field)
    a = sp.sample_domain(BOUNDS, 500, cfg, seed=7)
    b = sp.sample_domain(BOUNDS, 500, cfg, seed=7)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.dense, b.dense)


def test_sample_domain_degenerate_field_errors():
    class Nowhere:
        def f(self, X):
            return np.full(len(np.atleast_2d(X)), -5.0)

    cfg = sp.DenseSparseConfig(Nowhere(), sparse_fraction=0.0,
                               threshold=0.05)
    sp._MAX_BATCHES  # rejection cap makes this terminate
    with pytest.raises(ValidationError, match="dense"):
        sp.sample_domain(BOUNDS, 10, cfg, seed=0)


def test_dense_sparse_config_validation():
    f = SphereField(0.5)
    with pytest.raises(ValidationError):
        sp.DenseSparseConfig(f, sparse_fraction=1.5)
    with pytest.raises(ValidationError):
        sp.DenseSparseConfig(f, threshold=0.0)


def test_sample_boundaries_regions_and_normals():
    field = BoxField((0.5, 0.5, 0.5))
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, -0.45),
                         load_band=(2, 0.45, 1.0), pressure=0.02)
    gu, gf = sp.sample_boundaries(bspec, field, 200, 400, seed=0)

    assert len(gu) == 200
    assert np.all(gu.points[:, 2] <= -0.45)
    assert np.all(np.abs(field.f(gu.points)) < sp.SURFACE_BAND)
    assert np.array_equal(gu.u_bar, np.zeros((200, 3)))

    assert len(gf) == 400
    loaded = np.abs(gf.F[:, 2] + 0.02) < 1e-12
    assert np.sum(loaded) == 200
    assert np.all(gf.points[loaded][:, 2] >= 0.45)
    assert np.all(np.abs(field.f(gf.points[loaded])) < sp.SURFACE_BAND)
    # mostly the top face; the band also clips a sliver of side wall
    top = np.allclose(gf.normals[loaded][:, 2], 1, atol=1e-6) \
        | (gf.normals[loaded][:, 2] > 0.99)
    assert np.mean(top) > 0.8

    free = ~loaded
    assert np.array_equal(gf.F[free], np.zeros((200, 3)))
    onface = np.abs(np.abs(gf.points[free]) - 1.0) < 1e-12
    assert np.all(onface.sum(axis=1) >= 1)
    # normals are signed unit axis vectors matching the face
    n = gf.normals[free]
    assert np.all(np.abs(n).sum(axis=1) == 1.0)
    hit = np.argmax(np.abs(n), axis=1)
    signs = n[np.arange(len(n)), hit]
    coords = gf.points[free][np.arange(len(n)), hit]
    assert np.all(coords == signs)


def test_sample_boundaries_sphere_normals_are_radial():
    field = SphereField(0.6)
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, -0.45),
                         load_band=(2, 0.45, 1.0), pressure=0.01)
    _, gf = sp.sample_boundaries(bspec, field, 50, 200, seed=1)
    loaded = np.abs(gf.F[:, 2] + 0.01) < 1e-12
    p = gf.points[loaded]
    radial = p / np.linalg.norm(p, axis=1, keepdims=True)
    assert np.max(np.abs(gf.normals[loaded] - radial)) < 1e-5


def test_sample_boundaries_empty_dirichlet_errors():
    field = SphereField(0.4)
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, -0.9),
                         load_band=(2, 0.9, 1.0))
    # the sphere never reaches |x3| > 0.4, so both bands miss it
    with pytest.raises(ValidationError, match="dirichlet"):
        sp.sample_boundaries(bspec, field, 50, 50, seed=0)


def test_constraint_set_margin_and_frozen_density():
    field = SphereField(0.5)
    gc = sp.build_constraint_set(field, margin=0.1, N_gc=500, seed=0)
    r = np.linalg.norm(gc.points, axis=1)
    assert np.all(r > 0.6)  # analytic: f < -0.1 means outside by 0.1
    assert np.all(gc.rho < 1.0 / (1.0 + np.exp(0.1 / 0.02)) + 1e-12)
    assert np.all((gc.rho > 0) & (gc.rho < 1))


def test_constraint_set_infeasible_margin_errors():
    field = SphereField(0.5)
    with pytest.raises(ValidationError, match="constraint"):
        sp.build_constraint_set(field, margin=5.0, N_gc=10, seed=0)
    with pytest.raises(ValidationError):
        sp.build_constraint_set(field, margin=-1.0, N_gc=10, seed=0)


def test_constraint_set_tiny_shape_covers_exterior():
    field = SphereField(0.15)
    gc = sp.build_constraint_set(field, margin=0.05, N_gc=4000, seed=2)
    octant = ((gc.points > 0) * [1, 2, 4]).sum(axis=1)
    counts = np.bincount(octant, minlength=8)
    assert counts.min() > 0.5 * len(gc) / 8


def test_build_sample_sets_reproducible():
    field = SphereField(0.6)
    bspec = BoundarySpec(dirichlet_band=(2, -0.65, -0.55),
                         load_band=(2, 0.55, 0.65), pressure=0.01)
    a = sp.build_sample_sets(field, bspec, N_domain=200, N_u=40, N_f=60,
                             N_gc=80, seed=3)
    b = sp.build_sample_sets(field, bspec, N_domain=200, N_u=40, N_f=60,
                             N_gc=80, seed=3)
    assert np.array_equal(a.domain.points, b.domain.points)
    assert np.array_equal(a.gu.points, b.gu.points)
    assert np.array_equal(a.gf.points, b.gf.points)
    assert np.array_equal(a.gf.normals, b.gf.normals)
    assert np.array_equal(a.gc.rho, b.gc.rho)
    for pts in (a.domain.points, a.gu.points, a.gf.points, a.gc.points):
        assert np.all((pts >= -1.0) & (pts <= 1.0))


def test_samples_csv_export(tmp_path):
    import os
    field = SphereField(0.6)
    bspec = BoundarySpec(dirichlet_band=(2, -0.65, -0.55),
                         load_band=(2, 0.55, 0.65), pressure=0.01)
    sets = sp.build_sample_sets(field, bspec, N_domain=50, N_u=10, N_f=20,
                                N_gc=30, seed=0)
    path = os.path.join(tmp_path, "sets.csv")
    sp.save_samples_csv(path, sets)
    lines = open(path).read().splitlines()
    assert lines[0].startswith("set,x,y,z")
    assert len(lines) == 1 + 50 + 10 + 20 + 30
    kinds = {ln.split(",")[0] for ln in lines[1:]}
    assert kinds == {"domain", "gu", "gf", "gc"}
