import os
import warnings

import numpy as np
import pytest

from physhape import fem
from physhape.elasticity import MaterialModel, BoundarySpec
from physhape.errors import ValidationError, IoError
from physhape.geometry import DensityParams
from physhape.shapes import SphereField, UnionField

MAT = MaterialModel(E=1.0, nu=0.3)


def full_fix(mesh, node_ids):
    fixed = np.zeros(mesh.ndof, dtype=bool)
    for c in range(3):
        fixed[3 * node_ids + c] = True
    return fixed


def tip_load(mesh, axis, total, comp):
    """Uniform traction on the high face along `axis`, quarter-split."""
    F = np.zeros(mesh.ndof)
    faces = [(e, a, s) for e, a, s in mesh.exterior_faces()
             if a == axis and s == 1]
    per = total / (len(faces) * 4.0)
    for e, a, s in faces:
        fn = mesh.incidence[e][fem._FACE_CORNERS[(a, s)]]
        F[3 * fn + comp] += per
    return F


def test_element_stiffness_symmetric_with_rigid_modes():
    KE = fem.element_stiffness(MAT, 0.7)
    assert np.array_equal(KE, KE.T)
    w = np.linalg.eigvalsh(KE)
    assert np.sum(np.abs(w) < 1e-12) == 6
    assert w[-1] > 0
    rigid = np.zeros(24)
    rigid[1::3] = 1.0
    assert np.abs(KE @ rigid).max() < 1e-15


def test_patch_test_linear_field_exact():
    mesh = fem.HexMesh(np.ones((3, 3, 8), dtype=bool), h=0.25)
    A = np.array([[1e-3, 4e-4, -2e-4],
                  [3e-4, -5e-4, 1e-4],
                  [-1e-4, 2e-4, 8e-4]])
    nodes = mesh.nodes
    lo, hi = nodes.min(0), nodes.max(0)
    bnd = np.any((nodes <= lo + 1e-12) | (nodes >= hi - 1e-12), axis=1)
    assert (~bnd).sum() > 0
    uexact = nodes @ A.T
    vals = np.zeros(mesh.ndof)
    vals[0::3], vals[1::3], vals[2::3] = uexact.T
    sol = fem.solve_system(mesh, MAT, np.repeat(bnd, 3), vals,
                           np.zeros(mesh.ndof), tol=1e-14)
    eex = np.array([A[0, 0], A[1, 1], A[2, 2],
                    A[0, 1] + A[1, 0], A[0, 2] + A[2, 0],
                    A[1, 2] + A[2, 1]])
    assert np.abs(sol.strain - eex).max() < 1e-10
    assert np.abs(sol.u - uexact).max() < 1e-10


def cantilever_error(nelx, sec, h):
    mesh = fem.HexMesh(np.ones((nelx, sec, sec), dtype=bool), h=h)
    nodes = mesh.nodes
    fixed = full_fix(mesh, np.where(nodes[:, 0] < 1e-12)[0])
    P = 1e-3 * (sec * h) ** 2
    F = tip_load(mesh, 0, -P, 2)
    sol = fem.solve_system(mesh, MAT, fixed, np.zeros(mesh.ndof), F)
    L, b = nelx * h, sec * h
    I = b ** 4 / 12
    G = MAT.E / (2 * (1 + MAT.nu))
    kappa = 10 * (1 + MAT.nu) / (12 + 11 * MAT.nu)
    delta = P * L ** 3 / (3 * MAT.E * I) + P * L / (kappa * G * b * b)
    tipn = np.where(nodes[:, 0] > L - 1e-12)[0]
    return -sol.u[tipn, 2].mean() / delta - 1.0, sol


def test_cantilever_matches_beam_theory():
    err, sol = cantilever_error(40, 4, 1.0)
    assert abs(err) < 0.08
    # global equilibrium of reactions against the applied load
    R = sol.reactions.reshape(-1, 3).sum(axis=0)
    Fz = sol.applied[2::3].sum()
    assert abs(R[2] + Fz) / abs(Fz) < 1e-6


def test_cantilever_refinement_monotone():
    e1, _ = cantilever_error(40, 4, 1.0)
    e2, _ = cantilever_error(80, 8, 0.5)
    assert abs(e2) < abs(e1)


def test_energy_consistency():
    _, sol = cantilever_error(40, 4, 1.0)
    K = fem.assemble(sol.mesh, MAT)
    u = sol.u.ravel()
    f = sol.applied + sol.reactions
    assert abs(u @ K @ u - f @ u) / abs(f @ u) < 1e-8


def test_solve_deterministic():
    _, a = cantilever_error(20, 4, 1.0)
    _, b = cantilever_error(20, 4, 1.0)
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.stress, b.stress)


def bar_solution(p=1e-3):
    mesh = fem.HexMesh(np.ones((4, 4, 16), dtype=bool), h=0.1,
                       origin=(-0.2, -0.2, -0.8))
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, -0.8 + 1e-9),
                         load_band=(2, 0.8 - 1e-9, 1.0), pressure=p)
    return mesh, fem.solve(mesh, MAT, bspec)


def test_confined_compression_stress():
    p = 1e-3
    mesh, sol = bar_solution(p)
    c = mesh.centroids()
    mid = np.abs(c[:, 2]) < 0.06
    assert abs(sol.stress[mid, 2].mean() + p) / p < 0.03
    assert abs(fem.max_von_mises(sol) - p) / p < 0.05


def test_zero_load_zero_stress():
    mesh = fem.HexMesh(np.ones((3, 3, 3), dtype=bool), h=0.2)
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, 1e-9),
                         load_band=(2, 10.0, 11.0), pressure=0.01)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        sol = fem.solve(mesh, MAT, bspec)
    assert any("load band missed" in str(x.message) for x in w)
    assert fem.max_von_mises(sol) < 1e-12
    assert np.all(sol.u == 0.0)


def test_kirsch_stress_concentration():
    n, hole, nz, h = 40, 8, 2, 1.0
    occ = np.ones((n, n, nz), dtype=bool)
    cx = np.arange(n) + 0.5
    X, Y = np.meshgrid(cx, cx, indexing="ij")
    occ[(X ** 2 + Y ** 2) < hole ** 2] = False
    mesh = fem.HexMesh(occ, h=h)
    nodes = mesh.nodes
    fixed = np.zeros(mesh.ndof, dtype=bool)
    fixed[3 * np.where(nodes[:, 0] < 1e-12)[0]] = True
    fixed[3 * np.where(nodes[:, 1] < 1e-12)[0] + 1] = True
    fixed[3 * np.where(np.abs(nodes[:, 2] - nz * h / 2) < 1e-12)[0] + 2] \
        = True
    s_inf = 1e-3
    F = np.zeros(mesh.ndof)
    for e, a, s in mesh.exterior_faces():
        if a == 0 and s == 1 and mesh.centroids()[e][0] > n - 1:
            fn = mesh.incidence[e][fem._FACE_CORNERS[(a, s)]]
            F[3 * fn] += 0.25 * h * h * s_inf
    sol = fem.solve_system(mesh, MAT, fixed, np.zeros(mesh.ndof), F)
    factor = fem.max_von_mises(sol) / s_inf
    assert 2.2 <= factor <= 3.4


def test_rigid_body_guard():
    mesh = fem.HexMesh(np.ones((2, 2, 2), dtype=bool), h=0.5)
    bspec = BoundarySpec(dirichlet_band=(2, -1.0, -0.5),
                         load_band=(2, 0.9, 1.1), pressure=1e-3)
    with pytest.raises(ValidationError, match="constrained"):
        fem.solve(mesh, MAT, bspec)
    # collinear supports get caught too
    fixed = np.zeros(mesh.ndof, dtype=bool)
    line = np.where((mesh.nodes[:, 1] < 1e-12)
                    & (mesh.nodes[:, 2] < 1e-12))[0]
    for c in range(3):
        fixed[3 * line + c] = True
    with pytest.raises(ValidationError, match="collinear"):
        fem._check_support(mesh.nodes[line])


def test_voxelize_sphere_volume():
    mesh = fem.voxelize(SphereField(0.5), DensityParams(), 64)
    vol = mesh.n_elements * mesh.h ** 3
    exact = 4.0 / 3.0 * np.pi * 0.5 ** 3
    assert abs(vol - exact) / exact < 0.05
    assert mesh.pruned_components == 0


def test_voxelize_prunes_islands():
    two = UnionField([SphereField(0.35, (-0.5, 0, 0)),
                      SphereField(0.2, (0.55, 0, 0))])
    mesh = fem.voxelize(two, DensityParams(), 48)
    assert mesh.pruned_components == 1
    assert mesh.pruned_voxels > 0
    assert np.all(mesh.centroids()[:, 0] < 0)


def test_voxelize_empty_and_low_resolution():
    with pytest.raises(ValidationError, match="empty"):
        fem.voxelize(SphereField(0.001), DensityParams(), 32)
    with pytest.raises(ValidationError):
        fem.voxelize(SphereField(0.5), DensityParams(), 8)


def test_incidence_valid():
    mesh = fem.voxelize(SphereField(0.4), DensityParams(), 24)
    assert mesh.incidence.min() >= 0
    assert mesh.incidence.max() < mesh.n_nodes
    for row in mesh.incidence[:50]:
        assert len(set(row)) == 8


@pytest.fixture(scope="module")
def bar_dataset():
    mesh, sol = bar_solution()
    return mesh, sol, fem.export_dataset(sol, mesh, n_points=300, seed=0)


def test_export_dataset_points_and_determinism(bar_dataset):
    mesh, sol, ds = bar_dataset
    assert len(ds) == 300
    lo = mesh.origin - 1e-12
    hi = mesh.origin + mesh.h * np.array(mesh.occ.shape) + 1e-12
    assert np.all((ds.x >= lo) & (ds.x <= hi))
    ds2 = fem.export_dataset(sol, mesh, n_points=300, seed=0)
    assert np.array_equal(ds.x, ds2.x)
    assert np.array_equal(ds.sigma, ds2.sigma)


def test_export_centroid_stress_bit_exact(bar_dataset):
    mesh, sol, ds = bar_dataset
    cent = mesh.centroids()
    n_cent = int(round(0.7 * 300))
    for i in range(0, n_cent, 37):
        e = np.where(np.all(np.abs(cent - ds.x[i]) < 1e-12, axis=1))[0]
        assert len(e) == 1
        assert np.array_equal(ds.sigma[i], sol.stress[e[0]])


def test_export_clamps_with_warning(bar_dataset):
    mesh, sol, _ = bar_dataset
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ds = fem.export_dataset(sol, mesh, n_points=10 ** 6, seed=0)
    assert any("clamped" in str(x.message) for x in w)
    assert len(ds) < 10 ** 6


def test_dataset_csv_roundtrip(tmp_path, bar_dataset):
    _, _, ds = bar_dataset
    path = os.path.join(tmp_path, "d.csv")
    fem.save_dataset(path, ds)
    back = fem.import_dataset(path)
    assert back.provenance == "imported"
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.u, ds.u)
    assert np.array_equal(back.sigma, ds.sigma)


def test_import_dataset_errors(tmp_path):
    head = "x1,x2,x3,u1,u2,u3,s11,s22,s33,s12,s13,s23"
    p = os.path.join(tmp_path, "bad.csv")

    with open(p, "w") as f:
        f.write(head + "\n")
    with pytest.raises(ValidationError, match="no records"):
        fem.import_dataset(p)

    with open(p, "w") as f:
        f.write(head + "\n" + ",".join(["0.1"] * 6 + ["nan"] + ["0"] * 5)
                + "\n")
    with pytest.raises(ValidationError, match="2"):
        fem.import_dataset(p)

    with open(p, "w") as f:
        f.write(head + "\n0.1,0.2\n")
    with pytest.raises(IoError, match="2"):
        fem.import_dataset(p)

    with open(p, "w") as f:
        f.write(head + "\n" + ",".join(["7.0"] + ["0"] * 11) + "\n")
    with pytest.raises(ValidationError, match="outside"):
        fem.import_dataset(p)

    with pytest.raises(IoError):
        fem.import_dataset(os.path.join(tmp_path, "missing.csv"))


def test_split_dataset(bar_dataset):
    _, _, ds = bar_dataset
    tr, ho = fem.split_dataset(ds, 0.3, seed=1)
    assert len(tr) == 210 and len(ho) == 90
    tr2, ho2 = fem.split_dataset(ds, 0.3, seed=1)
    assert np.array_equal(tr.x, tr2.x)
    both = np.concatenate([tr.x, ho.x])
    assert len(np.unique(both, axis=0)) == len(np.unique(ds.x, axis=0))
