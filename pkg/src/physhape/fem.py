"""Voxel finite elements for linear elasticity.

The density field is thresholded into a regular grid of trilinear
hexahedra (one shared element stiffness, 2x2x2 Gauss quadrature), the
SPD system is solved with Jacobi-preconditioned conjugate gradients
after eliminating Dirichlet dofs, and stresses are recovered at element
centroids. This is the crisp physics oracle the neural side is anchored
to; low-density voxels are simply excluded rather than softened.
"""

import warnings

import numpy as np
from scipy import ndimage, sparse

from . import elasticity as el
from .errors import ValidationError, DivergenceError

# local corner order: counterclockwise bottom face, then top
_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
])
_XI = 2.0 * _CORNERS - 1.0  # reference coordinates of corners

# corner ids of each voxel face, keyed by (axis, side)
_FACE_CORNERS = {
    (axis, side): np.where(_CORNERS[:, axis] == side)[0]
    for axis in range(3) for side in (0, 1)
}


def _shape_gradients(xi, eta, zeta, h):
    """dN/dx at one reference point, shape (8, 3)."""
    ref = np.array([xi, eta, zeta])
    g = np.empty((8, 3))
    for a in range(8):
        terms = 1.0 + _XI[a] * ref
        for d in range(3):
            others = [k for k in range(3) if k != d]
            g[a, d] = _XI[a, d] / 8.0 * terms[others[0]] * terms[others[1]]
    return g * (2.0 / h)


def _bmat(xi, eta, zeta, h):
    """Strain-displacement matrix (6, 24), engineering shear rows."""
    g = _shape_gradients(xi, eta, zeta, h)
    B = np.zeros((6, 24))
    for a in range(8):
        c = 3 * a
        B[0, c + 0] = g[a, 0]
        B[1, c + 1] = g[a, 1]
        B[2, c + 2] = g[a, 2]
        B[3, c + 0] = g[a, 1]
        B[3, c + 1] = g[a, 0]
        B[4, c + 0] = g[a, 2]
        B[4, c + 2] = g[a, 0]
        B[5, c + 1] = g[a, 2]
        B[5, c + 2] = g[a, 1]
    return B


def element_stiffness(mat, h):
    """Shared 24x24 stiffness for an h-sized voxel of the material."""
    D = mat.dmatrix()
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    detJ = (h / 2.0) ** 3
    KE = np.zeros((24, 24))
    for xi in gp:
        for eta in gp:
            for zeta in gp:
                B = _bmat(xi, eta, zeta, h)
                KE += B.T @ D @ B * detJ
    return 0.5 * (KE + KE.T)


class HexMesh:
    """Active voxels of a regular grid plus compacted node numbering."""

    def __init__(self, occ, h, origin=(0.0, 0.0, 0.0),
                 pruned_components=0, pruned_voxels=0):
        occ = np.asarray(occ, dtype=bool)
        if occ.ndim != 3:
            raise ValidationError("occupancy must be a 3d grid")
        if not occ.any():
            raise ValidationError("empty shape: no active voxels")
        self.occ = occ
        self.h = float(h)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.pruned_components = pruned_components
        self.pruned_voxels = pruned_voxels

        self.elements = np.argwhere(occ)
        nx, ny, nz = occ.shape
        self._nodes_per = (ny + 1) * (nz + 1)

        corner = self.elements[:, None, :] + _CORNERS[None, :, :]
        grid_ids = (corner[..., 0] * (ny + 1) + corner[..., 1]) \
            * (nz + 1) + corner[..., 2]
        used = np.unique(grid_ids)
        self.incidence = np.searchsorted(used, grid_ids)
        i = used // ((ny + 1) * (nz + 1))
        rem = used % ((ny + 1) * (nz + 1))
        j = rem // (nz + 1)
        k = rem % (nz + 1)
        self.nodes = self.origin + self.h * np.stack([i, j, k], axis=1)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def ndof(self):
        return 3 * self.n_nodes

    def centroids(self):
        return self.origin + self.h * (self.elements + 0.5)

    def edofs(self):
        return (3 * self.incidence[:, :, None]
                + np.arange(3)[None, None, :]).reshape(-1, 24)

    def exterior_faces(self):
        """(element index, axis, side) triples on the free boundary."""
        out = []
        occ = self.occ
        nx, ny, nz = occ.shape
        for eidx, (i, j, k) in enumerate(self.elements):
            for axis in range(3):
                for side in (0, 1):
                    nb = [i, j, k]
                    nb[axis] += 1 if side else -1
                    inside = 0 <= nb[axis] < occ.shape[axis]
                    if not inside or not occ[nb[0], nb[1], nb[2]]:
                        out.append((eidx, axis, side))
        return out


def voxelize(field, dp, resolution, threshold=0.5, bounds=None):
    """Threshold the density at voxel centers into a HexMesh, keeping
    only the largest face-connected component."""
    if resolution < 16:
        raise ValidationError("voxel resolution must be >= 16")
    if bounds is None:
        bounds = getattr(field, "bounds", (-1.0, 1.0))
    lo, hi = bounds
    h = (hi - lo) / resolution
    centers = lo + h * (np.arange(resolution) + 0.5)
    G = np.stack(np.meshgrid(centers, centers, centers, indexing="ij"),
                 axis=-1).reshape(-1, 3)
    from .geometry import density
    rho = np.empty(len(G))
    step = 65536
    for s in range(0, len(G), step):
        rho[s:s + step] = density(field, dp, G[s:s + step])
    occ = (rho >= threshold).reshape(resolution, resolution, resolution)
    if not occ.any():
        raise ValidationError("empty shape: density never reaches the "
                              "voxel threshold %g" % threshold)
    labels, ncomp = ndimage.label(occ)
    pruned_comp = 0
    pruned_vox = 0
    if ncomp > 1:
        counts = np.bincount(labels.ravel())[1:]
        keep = 1 + int(np.argmax(counts))
        pruned_comp = ncomp - 1
        pruned_vox = int(counts.sum() - counts[keep - 1])
        occ = labels == keep
    return HexMesh(occ, h, origin=(lo, lo, lo),
                   pruned_components=pruned_comp, pruned_voxels=pruned_vox)


class FemSolution:
    def __init__(self, mesh, u, strain, stress, vm, reactions, applied,
                 iterations, residual, converged):
        self.mesh = mesh
        self.u = u
        self.strain = strain
        self.stress = stress
        self.vm = vm
        self.reactions = reactions
        self.applied = applied
        self.iterations = iterations
        self.residual = residual
        self.converged = converged


def jacobi_pcg(A, b, tol=1e-8, maxiter=None):
    """Conjugate gradients with diagonal preconditioning.

    Returns (x, iterations, relative-residual history, converged).
    """
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return np.zeros_like(b), 0, [0.0], True
    if maxiter is None:
        maxiter = int(20 * np.sqrt(len(b))) + 10
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValidationError("system diagonal has nonpositive entries; "
                              "structure is not well constrained")
    Minv = 1.0 / diag
    x = np.zeros_like(b)
    r = b.copy()
    z = Minv * r
    p = z.copy()
    rz = r @ z
    history = []
    for it in range(maxiter):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bn
        history.append(rel)
        if rel <= tol:
            return x, it + 1, history, True
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, history, False


def assemble(mesh, mat):
    """Global stiffness (CSR) from the shared element matrix."""
    KE = element_stiffness(mat, mesh.h)
    ed = mesh.edofs()
    nel = len(ed)
    rows = np.repeat(ed, 24, axis=1).ravel()
    cols = np.tile(ed, (1, 24)).ravel()
    data = np.tile(KE.ravel(), nel)
    K = sparse.coo_matrix((data, (rows, cols)),
                          shape=(mesh.ndof, mesh.ndof)).tocsr()
    return K


def solve_system(mesh, mat, fixed_mask, fixed_vals, F, tol=1e-8,
                 maxiter=None):
    """Low-level solve with per-dof constraints (Dirichlet elimination).

    fixed_mask/fixed_vals/F are flat (ndof,) arrays; components can be
    constrained independently (symmetry planes and patch tests need
    that). Reaction forces are recovered on the constrained dofs.
    """
    fixed_mask = np.asarray(fixed_mask, dtype=bool)
    fixed_vals = np.asarray(fixed_vals, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if fixed_mask.shape != (mesh.ndof,):
        raise ValidationError("fixed_mask must cover all %d dofs"
                              % mesh.ndof)
    if not fixed_mask.any():
        raise ValidationError("no constrained dofs: rigid-body modes")

    K = assemble(mesh, mat)
    free = np.where(~fixed_mask)[0]
    fixed = np.where(fixed_mask)[0]
    u = np.zeros(mesh.ndof)
    u[fixed] = fixed_vals[fixed]

    if len(free):
        Kff = K[free][:, free]
        rhs = F[free] - K[free][:, fixed] @ u[fixed]
        uf, its, hist, ok = jacobi_pcg(Kff, rhs, tol=tol, maxiter=maxiter)
        if not ok:
            raise DivergenceError(
                "fem solve stalled at relative residual %.3g after %d "
                "iterations" % (hist[-1], its), history=hist)
        u[free] = uf
        residual = hist[-1] if hist else 0.0
    else:
        its, residual = 0, 0.0

    reactions = np.zeros(mesh.ndof)
    reactions[fixed] = (K @ u - F)[fixed]

    B0 = _bmat(0.0, 0.0, 0.0, mesh.h)
    ue = u[mesh.edofs()]
    strain = ue @ B0.T
    stress = el.stress(strain, mat)
    vm = el.von_mises(stress)
    return FemSolution(mesh, u.reshape(-1, 3), strain, stress, vm,
                       reactions, F, its, residual, True)


def _check_support(coords):
    if len(coords) < 3:
        raise ValidationError(
            "only %d constrained nodes; need at least 3 non-collinear "
            "(check the support predicate)" % len(coords))
    d = coords - coords.mean(axis=0)
    if np.linalg.matrix_rank(d, tol=1e-9) < 2:
        raise ValidationError("constrained nodes are collinear; "
                              "rigid-body rotation is unconstrained")


def solve(mesh, mat, bspec, tol=1e-8, maxiter=None):
    """Boundary-value solve from a band spec: clamp the Dirichlet band,
    apply the prescribed traction over exterior faces in the load band
    that face against it (quarter of the face force to each node)."""
    dir_nodes = np.where(bspec.in_dirichlet(mesh.nodes))[0]
    _check_support(mesh.nodes[dir_nodes])
    fixed_mask = np.zeros(mesh.ndof, dtype=bool)
    fixed_vals = np.zeros(mesh.ndof)
    ubar = bspec.u_bar_at(mesh.nodes[dir_nodes])
    for c in range(3):
        fixed_mask[3 * dir_nodes + c] = True
        fixed_vals[3 * dir_nodes + c] = ubar[:, c]

    F = np.zeros(mesh.ndof)
    area = mesh.h ** 2
    n_loaded = 0
    for eidx, axis, side in mesh.exterior_faces():
        center = mesh.centroids()[eidx].copy()
        center[axis] += (0.5 if side else -0.5) * mesh.h
        if not bspec.in_load(center[None])[0]:
            continue
        traction = bspec.traction_at(center[None])[0]
        normal = np.zeros(3)
        normal[axis] = 1.0 if side else -1.0
        if traction @ normal >= 0:
            continue  # load only pushes on faces it points into
        n_loaded += 1
        fnodes = mesh.incidence[eidx][_FACE_CORNERS[(axis, side)]]
        for c in range(3):
            F[3 * fnodes + c] += 0.25 * area * traction[c]
    if n_loaded == 0:
        warnings.warn("load band missed the shape surface; applied "
                      "load is zero", stacklevel=2)
    return solve_system(mesh, mat, fixed_mask, fixed_vals, F, tol=tol,
                        maxiter=maxiter)


def max_von_mises(sol):
    """The headline metric: peak element von-Mises stress."""
    return float(sol.vm.max())


class FemDataset:
    """Anchor records (x, u, sigma) for the physics losses."""

    def __init__(self, x, u, sigma, provenance="internal"):
        self.x = np.asarray(x, dtype=np.float64)
        self.u = np.asarray(u, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        if not (len(self.x) == len(self.u) == len(self.sigma)):
            raise ValidationError("dataset arrays must align")
        for a in (self.x, self.u, self.sigma):
            if not np.all(np.isfinite(a)):
                raise ValidationError("dataset tensors must be finite")
        self.provenance = provenance

    def __len__(self):
        return len(self.x)


def _surface_node_stress(mesh, sol):
    """Per-node stress as the average over incident elements."""
    acc = np.zeros((mesh.n_nodes, 6))
    cnt = np.zeros(mesh.n_nodes)
    for a in range(8):
        np.add.at(acc, mesh.incidence[:, a], sol.stress)
        np.add.at(cnt, mesh.incidence[:, a], 1.0)
    return acc / cnt[:, None]


def export_dataset(sol, mesh, n_points=7000, seed=0):
    """Sample anchors: 70% element centroids (exact recovered sigma),
    30% surface nodes (exact nodal u, incident-average sigma)."""
    rng = np.random.default_rng(seed)
    n_cent = int(round(0.7 * n_points))
    n_surf = n_points - n_cent

    surf_nodes = np.unique(np.concatenate([
        mesh.incidence[e][_FACE_CORNERS[(a, s)]]
        for e, a, s in mesh.exterior_faces()]))
    if n_cent > mesh.n_elements or n_surf > len(surf_nodes):
        n_cent = min(n_cent, mesh.n_elements)
        n_surf = min(n_surf, len(surf_nodes))
        warnings.warn("dataset request clamped to %d centroid + %d "
                      "surface points" % (n_cent, n_surf), stacklevel=2)

    ce = rng.choice(mesh.n_elements, size=n_cent, replace=False)
    sn = rng.choice(surf_nodes, size=n_surf, replace=False)

    cent = mesh.centroids()[ce]
    ucent = sol.u[mesh.incidence[ce]].mean(axis=1)
    scent = sol.stress[ce]

    nstress = _surface_node_stress(mesh, sol)
    x = np.concatenate([cent, mesh.nodes[sn]])
    u = np.concatenate([ucent, sol.u[sn]])
    s = np.concatenate([scent, nstress[sn]])
    return FemDataset(x, u, s, provenance="internal")


def split_dataset(ds, holdout_fraction=0.3, seed=0):
    """Deterministic train/holdout split."""
    rng = np.random.default_rng(seed)
    n = len(ds)
    n_hold = int(round(holdout_fraction * n))
    perm = rng.permutation(n)
    hold, train = perm[:n_hold], perm[n_hold:]
    return (FemDataset(ds.x[train], ds.u[train], ds.sigma[train],
                       ds.provenance),
            FemDataset(ds.x[hold], ds.u[hold], ds.sigma[hold],
                       ds.provenance))


_CSV_HEADER = "x1,x2,x3,u1,u2,u3,s11,s22,s33,s12,s13,s23"


def save_dataset(path, ds):
    with open(path, "w", newline="\n") as fh:
        fh.write(_CSV_HEADER + "\n")
        for x, u, s in zip(ds.x, ds.u, ds.sigma):
            fh.write(",".join("%.17g" % v for v in (*x, *u, *s)) + "\n")


def import_dataset(path, bounds=(-1.0, 1.0)):
    """Parse the anchor CSV; provenance is tagged imported."""
    try:
        fh = open(path, "r")
    except OSError as e:
        from .errors import IoError
        raise IoError("cannot open dataset %s: %s" % (path, e))
    rows = []
    with fh:
        header = fh.readline().strip()
        if header != _CSV_HEADER:
            from .errors import IoError
            raise IoError("%s: unexpected header %r" % (path, header))
        for ln, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 12:
                from .errors import IoError
                raise IoError("%s:%d: expected 12 fields, got %d"
                              % (path, ln, len(parts)))
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                from .errors import IoError
                raise IoError("%s:%d: non-numeric field" % (path, ln))
            if not np.all(np.isfinite(vals)):
                raise ValidationError("%s:%d: non-finite value"
                                      % (path, ln))
            rows.append(vals)
    if not rows:
        raise ValidationError("%s: dataset has no records" % path)
    arr = np.array(rows)
    x = arr[:, :3]
    if bounds is not None:
        lo, hi = bounds
        if np.any(x < lo) or np.any(x > hi):
            bad = int(np.argmax(np.any((x < lo) | (x > hi), axis=1)))
            raise ValidationError(
                "dataset point %d lies outside the domain cube" % bad)
    return FemDataset(x, arr[:, 3:6], arr[:, 6:], provenance="imported")
