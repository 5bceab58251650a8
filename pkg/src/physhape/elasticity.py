"""Linear-elasticity kernels in Voigt notation.

Components are ordered (11, 22, 33, 12, 13, 23). Shear strain uses the
engineering convention, gamma_ij = du_i/dx_j + du_j/dx_i, so the shear
stress law is simply sigma_ij = mu * gamma_ij and the stored shear
stresses equal the tensor components.

Every kernel is written with arithmetic that works both on plain numpy
arrays and on tape Nodes, so the same formulas serve the FEM oracle and
the differentiable physics losses. Inputs may be single 6-vectors or
batches shaped (..., 6) / component tuples of (...) arrays.
"""

import numpy as np

from . import tape as tp
from .errors import ValidationError

VM_EPS = 1e-30  # under the sqrt so the gradient at zero stress is finite


def lame(E, nu):
    """Lame parameters from Young's modulus and Poisson ratio."""
    if E <= 0:
        raise ValidationError("E must be positive, got %r" % (E,))
    if nu >= 0.5:
        raise ValidationError("nu = %r is incompressible or beyond; "
                              "need nu < 0.5" % (nu,))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


class MaterialModel:
    """Isotropic material; lam and mu are recomputed from (E, nu) on
    construction and never stored stale."""

    def __init__(self, E=1.0, nu=0.3):
        if not 0.0 < nu < 0.5:
            raise ValidationError("nu must lie in (0, 0.5), got %r" % (nu,))
        if E <= 0:
            raise ValidationError("E must be positive, got %r" % (E,))
        self.E = float(E)
        self.nu = float(nu)
        self.lam, self.mu = lame(self.E, self.nu)

    def dmatrix(self):
        """6x6 stiffness for engineering-shear Voigt vectors."""
        lam, mu = self.lam, self.mu
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[0, 0] = D[1, 1] = D[2, 2] = lam + 2.0 * mu
        D[3, 3] = D[4, 4] = D[5, 5] = mu
        return D


class BoundarySpec:
    """Support and load regions as axis bands on the normalized domain.

    dirichlet_band and load_band are (axis, lo, hi) triples selecting
    lo <= x[axis] <= hi. u_bar is the prescribed displacement on the
    support (constant 3-vector or callable of points); pressure p loads
    the shape surface inside the load band with traction (0, 0, -p).
    """

    def __init__(self, dirichlet_band=(2, -1.0, -0.95), u_bar=(0.0, 0.0, 0.0),
                 load_band=(2, 0.95, 1.0), pressure=0.01):
        self.dirichlet_band = tuple(dirichlet_band)
        self.load_band = tuple(load_band)
        self.u_bar = u_bar
        self.pressure = float(pressure)
        if self.dirichlet_band[0] == self.load_band[0]:
            a, (lo1, hi1) = self.dirichlet_band[0], self.dirichlet_band[1:]
            lo2, hi2 = self.load_band[1:]
            if max(lo1, lo2) <= min(hi1, hi2):
                raise ValidationError("dirichlet and load bands overlap on "
                                      "axis %d" % a)

    def in_dirichlet(self, x):
        a, lo, hi = self.dirichlet_band
        x = np.asarray(x)
        return (x[..., a] >= lo) & (x[..., a] <= hi)

    def in_load(self, x):
        a, lo, hi = self.load_band
        x = np.asarray(x)
        return (x[..., a] >= lo) & (x[..., a] <= hi)

    def u_bar_at(self, x):
        if callable(self.u_bar):
            return np.asarray(self.u_bar(x), dtype=np.float64)
        x = np.asarray(x)
        return np.broadcast_to(np.asarray(self.u_bar, dtype=np.float64),
                               x.shape).copy()

    def traction_at(self, x):
        x = np.asarray(x)
        F = np.zeros(x.shape)
        F[..., 2] = -self.pressure
        return F


def strain(jac):
    """Voigt strain from a displacement Jacobian.

    jac[..., i, j] = du_i/dx_j. Returns (..., 6) with engineering shear.
    """
    jac = np.asarray(jac, dtype=np.float64)
    e = np.empty(jac.shape[:-2] + (6,))
    e[..., 0] = jac[..., 0, 0]
    e[..., 1] = jac[..., 1, 1]
    e[..., 2] = jac[..., 2, 2]
    e[..., 3] = jac[..., 0, 1] + jac[..., 1, 0]
    e[..., 4] = jac[..., 0, 2] + jac[..., 2, 0]
    e[..., 5] = jac[..., 1, 2] + jac[..., 2, 1]
    return e


def stress(eps, mat):
    """Isotropic Hooke law on Voigt strain (engineering shear)."""
    eps = np.asarray(eps, dtype=np.float64)
    lam, mu = mat.lam, mat.mu
    tr = eps[..., 0] + eps[..., 1] + eps[..., 2]
    s = np.empty_like(eps)
    s[..., 0] = 2.0 * mu * eps[..., 0] + lam * tr
    s[..., 1] = 2.0 * mu * eps[..., 1] + lam * tr
    s[..., 2] = 2.0 * mu * eps[..., 2] + lam * tr
    s[..., 3] = mu * eps[..., 3]
    s[..., 4] = mu * eps[..., 4]
    s[..., 5] = mu * eps[..., 5]
    return s


def strain_from_stress(s, mat):
    """Inverse Hooke law (compliance), for round-trip checks."""
    s = np.asarray(s, dtype=np.float64)
    E, nu = mat.E, mat.nu
    mu = mat.mu
    tr = s[..., 0] + s[..., 1] + s[..., 2]
    e = np.empty_like(s)
    for k in range(3):
        e[..., k] = ((1.0 + nu) * s[..., k] - nu * tr) / E
    e[..., 3] = s[..., 3] / mu
    e[..., 4] = s[..., 4] / mu
    e[..., 5] = s[..., 5] / mu
    return e


def von_mises(s):
    """Von-Mises stress of Voigt vectors shaped (..., 6)."""
    s = np.asarray(s, dtype=np.float64)
    d01 = s[..., 0] - s[..., 1]
    d12 = s[..., 1] - s[..., 2]
    d20 = s[..., 2] - s[..., 0]
    q = 0.5 * (d01 * d01 + d12 * d12 + d20 * d20) \
        + 3.0 * (s[..., 3] ** 2 + s[..., 4] ** 2 + s[..., 5] ** 2)
    return np.sqrt(q + VM_EPS)


def von_mises_components(s11, s22, s33, s12, s13, s23):
    """Von-Mises from separate components; works on tape Nodes."""
    d01 = s11 - s22
    d12 = s22 - s33
    d20 = s33 - s11
    q = 0.5 * (tp.square(d01) + tp.square(d12) + tp.square(d20)) \
        + 3.0 * (tp.square(s12) + tp.square(s13) + tp.square(s23))
    return tp.sqrt(q + VM_EPS)


def traction(s, n):
    """Traction vector sigma . n of Voigt stress (..., 6) against unit
    normals (..., 3)."""
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    nrm = np.linalg.norm(n, axis=-1)
    if not np.all(np.abs(nrm - 1.0) < 1e-9):
        raise ValidationError("traction normal is not unit length")
    t = np.empty(s.shape[:-1] + (3,))
    t[..., 0] = s[..., 0] * n[..., 0] + s[..., 3] * n[..., 1] \
        + s[..., 4] * n[..., 2]
    t[..., 1] = s[..., 3] * n[..., 0] + s[..., 1] * n[..., 1] \
        + s[..., 5] * n[..., 2]
    t[..., 2] = s[..., 4] * n[..., 0] + s[..., 5] * n[..., 1] \
        + s[..., 2] * n[..., 2]
    return t


def equilibrium_residual(stress_divergence, rho, F):
    """Modified equilibrium residual div(sigma_hat) + rho * F."""
    d = np.asarray(stress_divergence, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    return d + rho[..., None] * F if d.ndim > 1 else d + rho * F
