"""Elasticity kernel identities and invariances.

Rotation invariance uses full 3x3 tensors rebuilt from Voigt vectors;
rotations come from QR factorizations of seeded Gaussian matrices.
"""

import numpy as np
import pytest

from physhape import elasticity as el
from physhape.elasticity import (MaterialModel, lame, strain, stress,
                                 strain_from_stress, von_mises, traction,
                                 equilibrium_residual, BoundarySpec)
from physhape.errors import ValidationError


def voigt_to_tensor(s):
    return np.array([[s[0], s[3], s[4]],
                     [s[3], s[1], s[5]],
                     [s[4], s[5], s[2]]])


def tensor_to_voigt(T):
    return np.array([T[0, 0], T[1, 1], T[2, 2], T[0, 1], T[0, 2], T[1, 2]])


def test_lame_paper_values():
    lam, mu = lame(1.0, 0.3)
    assert abs(lam - 0.576923076923) < 1e-9
    assert abs(mu - 0.384615384615) < 1e-9


def test_lame_nu_zero_and_linearity():
    lam, mu = lame(1.0, 0.0)
    assert lam == 0.0 and mu == 0.5
    l1, m1 = lame(1.0, 0.3)
    l2, m2 = lame(2.0, 0.3)
    assert np.allclose([l2, m2], [2 * l1, 2 * m1], rtol=1e-15)


def test_lame_rejects_incompressible():
    with pytest.raises(ValidationError):
        lame(1.0, 0.5)


def test_material_model_validates():
    with pytest.raises(ValidationError):
        MaterialModel(nu=0.0)
    with pytest.raises(ValidationError):
        MaterialModel(E=-1.0)
    m = MaterialModel()
    assert m.lam > 0 and m.mu > 0


def test_strain_uniaxial_shear_rotation():
    J = np.zeros((3, 3))
    J[0, 0] = 1.0
    np.testing.assert_array_equal(strain(J), [1, 0, 0, 0, 0, 0])

    J = np.zeros((3, 3))
    J[0, 1] = 1.0  # u = (x2, 0, 0)
    np.testing.assert_array_equal(strain(J), [0, 0, 0, 1, 0, 0])

    W = np.array([[0, 1, -2], [-1, 0, 0.5], [2, -0.5, 0]])  # skew
    np.testing.assert_allclose(strain(W), 0.0, atol=1e-15)


def test_stress_trivial_cases():
    m = MaterialModel()
    np.testing.assert_array_equal(stress(np.zeros(6), m), np.zeros(6))
    e = np.array([2.0, 2.0, 2.0, 0, 0, 0])
    s = stress(e, m)
    want = (3 * m.lam + 2 * m.mu) * 2.0
    np.testing.assert_allclose(s[:3], want, rtol=1e-15)
    np.testing.assert_array_equal(s[3:], 0.0)
    e = np.array([0, 0, 0, 0.7, 0, 0])
    s = stress(e, m)
    np.testing.assert_allclose(s[3], m.mu * 0.7, rtol=1e-15)
    assert np.all(s[[0, 1, 2, 4, 5]] == 0.0)


def test_stress_uniaxial_strain_closed_form():
    # u = (a x1, 0, 0): s11 = (lam + 2 mu) a, s22 = s33 = lam a
    m = MaterialModel()
    a = 0.37
    s = stress(np.array([a, 0, 0, 0, 0, 0]), m)
    np.testing.assert_allclose(s[0], (m.lam + 2 * m.mu) * a, rtol=1e-15)
    np.testing.assert_allclose(s[1], m.lam * a, rtol=1e-15)
    np.testing.assert_allclose(s[2], m.lam * a, rtol=1e-15)


def test_hooke_roundtrip():
    m = MaterialModel(E=2.3, nu=0.27)
    rng = np.random.default_rng(0)
    e = rng.normal(size=(50, 6))
    back = strain_from_stress(stress(e, m), m)
    np.testing.assert_allclose(back, e, rtol=1e-12, atol=1e-13)


def test_dmatrix_consistent_with_kernel():
    m = MaterialModel()
    rng = np.random.default_rng(1)
    e = rng.normal(size=6)
    np.testing.assert_allclose(m.dmatrix() @ e, stress(e, m), rtol=1e-14)


def test_von_mises_identities_exact():
    s = np.zeros(6)
    s[0] = -2.5
    assert abs(von_mises(s) - 2.5) < 1e-12
    p = np.array([3.7, 3.7, 3.7, 0, 0, 0])
    assert von_mises(p) < 1e-12
    t = np.zeros(6)
    t[3] = 1.3
    assert abs(von_mises(t) - np.sqrt(3) * 1.3) < 1e-12


def test_von_mises_hydrostatic_shift_invariance():
    rng = np.random.default_rng(2)
    for _ in range(200):
        s = rng.normal(size=6)
        p = rng.normal()
        sp = s.copy()
        sp[:3] += p
        assert abs(von_mises(sp) - von_mises(s)) < 1e-10


def test_von_mises_rotation_invariance_1000():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        s = rng.normal(size=6) * rng.uniform(0.1, 10)
        T = voigt_to_tensor(s)
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        sr = tensor_to_voigt(Q @ T @ Q.T)
        assert abs(von_mises(sr) - von_mises(s)) < 1e-9


def test_kernels_linear():
    m = MaterialModel()
    rng = np.random.default_rng(4)
    e1, e2 = rng.normal(size=(2, 6))
    np.testing.assert_allclose(stress(2.5 * e1 + e2, m),
                               2.5 * stress(e1, m) + stress(e2, m),
                               rtol=1e-13, atol=1e-15)
    J1, J2 = rng.normal(size=(2, 3, 3))
    np.testing.assert_allclose(strain(3.0 * J1 - J2),
                               3.0 * strain(J1) - strain(J2),
                               rtol=1e-13, atol=1e-15)


def test_traction_cases():
    s = np.zeros(6)
    s[2] = -0.01
    np.testing.assert_allclose(traction(s, [0, 0, 1.0]), [0, 0, -0.01],
                               atol=1e-18)
    np.testing.assert_array_equal(traction(np.zeros(6), [1.0, 0, 0]),
                                  np.zeros(3))
    s = np.zeros(6)
    s[3] = 0.6
    np.testing.assert_allclose(traction(s, [1.0, 0, 0]), [0, 0.6, 0],
                               atol=1e-18)
    with pytest.raises(ValidationError):
        traction(s, [1.0, 1.0, 0.0])


def test_traction_matches_tensor_product():
    rng = np.random.default_rng(5)
    s = rng.normal(size=6)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    np.testing.assert_allclose(traction(s, n), voigt_to_tensor(s) @ n,
                               rtol=1e-14)


def test_equilibrium_residual():
    np.testing.assert_array_equal(
        equilibrium_residual(np.zeros(3), 0.7, np.zeros(3)), np.zeros(3))
    g = 9.8
    r = equilibrium_residual(np.array([0, 0, -0.5 * g]), 0.5,
                             np.array([0, 0, g]))
    np.testing.assert_allclose(r, 0.0, atol=1e-15)
    d = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(equilibrium_residual(d, 0.0, np.ones(3)),
                                  d)


def test_boundary_spec_bands():
    bs = BoundarySpec(dirichlet_band=(2, -1.0, -0.9), load_band=(2, 0.5, 1.0),
                      pressure=0.25)
    x = np.array([[0, 0, -0.95], [0, 0, 0.7], [0, 0, 0.0]])
    np.testing.assert_array_equal(bs.in_dirichlet(x), [True, False, False])
    np.testing.assert_array_equal(bs.in_load(x), [False, True, False])
    np.testing.assert_array_equal(bs.u_bar_at(x), np.zeros((3, 3)))
    F = bs.traction_at(x)
    np.testing.assert_array_equal(F[:, 2], [-0.25] * 3)
    with pytest.raises(ValidationError):
        BoundarySpec(dirichlet_band=(2, -1, 0.0), load_band=(2, -0.5, 1.0))


def test_von_mises_node_path_matches_array_path():
    from physhape.tape import Tape
    from physhape import tape as tp
    from physhape.elasticity import von_mises_components
    rng = np.random.default_rng(6)
    s = rng.normal(size=(40, 6))
    t = Tape()
    comps = [tp.leaf(t, s[:, k].copy()) for k in range(6)]
    vm = von_mises_components(*comps)
    np.testing.assert_allclose(vm.val, von_mises(s), rtol=1e-14)
    loss = tp.tmean(vm)
    t.backward(loss)
    # finite difference one component
    h = 1e-7
    sp = s.copy()
    sp[:, 0] += h
    sm = s.copy()
    sm[:, 0] -= h
    want = (von_mises(sp).mean() - von_mises(sm).mean()) / (2 * h)
    np.testing.assert_allclose(comps[0].grad.sum(), want, rtol=1e-5)


def test_von_mises_gradient_finite_at_zero_stress():
    from physhape.tape import Tape
    from physhape import tape as tp
    from physhape.elasticity import von_mises_components
    t = Tape()
    comps = [tp.leaf(t, np.zeros(3)) for _ in range(6)]
    vm = von_mises_components(*comps)
    t.backward(tp.tmean(vm))
    for c in comps:
        assert np.all(np.isfinite(c.grad))
