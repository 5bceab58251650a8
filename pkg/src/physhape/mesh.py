"""Triangle meshes: validation, distance queries, inside tests, I/O.

The distance query is exact: a KD-tree over triangle centroids proposes
k candidates, the point-triangle distance is evaluated in closed form on
each, and a widening ball re-query runs whenever the k-th centroid
distance cannot certify the minimum (any triangle's surface lies within
r_max of its centroid, r_max = max centroid-to-vertex distance).

The inside test casts three fixed, slightly tilted axis rays per query
point and takes the parity majority. Tilting avoids edge-on hits against
axis-aligned geometry; candidate triangles per ray come from a 2D
bounding-box binning in the plane transverse to the ray.
"""

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError, IoError

DEGENERATE_AREA = 1e-12

# three fixed ray directions, irrational-ish tilts, unit length
_RAY_DIRS = np.array([
    [1.0, 0.0377214, 0.0941421],
    [0.0941421, 1.0, 0.0377214],
    [0.0377214, 0.0941421, 1.0],
])
_RAY_DIRS /= np.linalg.norm(_RAY_DIRS, axis=1, keepdims=True)


class TriangleMesh:
    """Vertices (V, 3) float64, faces (F, 3) int, optional per-vertex
    scalar attribute (used for stress coloring on export)."""

    def __init__(self, vertices, faces, vertex_attr=None):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError("faces must be (F, 3)")
        if len(self.faces) and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValidationError("face index out of range")
        areas = self.areas()
        if np.any(areas <= DEGENERATE_AREA):
            bad = int(np.argmin(areas))
            raise ValidationError(
                "degenerate triangle %d (area %.3g)" % (bad, areas[bad]))
        self.vertex_attr = None if vertex_attr is None \
            else np.asarray(vertex_attr, dtype=np.float64)

    def corners(self):
        v = self.vertices
        f = self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def areas(self):
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def centroids(self):
        a, b, c = self.corners()
        return (a + b + c) / 3.0

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def open_edges(mesh):
    """Edges not shared by exactly two faces (empty iff watertight)."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    _, inv, counts = np.unique(e, axis=0, return_inverse=True,
                               return_counts=True)
    bad = counts[inv] != 2
    return np.unique(e[bad], axis=0)


def is_watertight(mesh):
    return len(open_edges(mesh)) == 0


def require_watertight(mesh, context=""):
    bad = open_edges(mesh)
    if len(bad):
        shown = ", ".join("(%d,%d)" % (a, b) for a, b in bad[:8])
        more = "" if len(bad) <= 8 else " and %d more" % (len(bad) - 8)
        raise ValidationError(
            "%smesh is not watertight: %d open edges: %s%s"
            % (context and context + ": ", len(bad), shown, more))


def normalize_mesh(mesh, half_extent=0.9):
    """Uniform scale + translation into [-half_extent, half_extent]^3.

    Returns (mesh, transform) where transform = (scale, offset) maps
    normalized coordinates back to source units: x_src = x/scale + offset.
    """
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    span = float((hi - lo).max())
    if span <= 0:
        raise ValidationError("mesh has zero extent")
    scale = 2.0 * half_extent / span
    verts = (mesh.vertices - center) * scale
    return TriangleMesh(verts, mesh.faces, mesh.vertex_attr), (scale, center)


def save_obj(path, mesh, attr_path=None):
    with open(path, "w") as f:
        f.write("# physhape triangle mesh\n")
        for v in mesh.vertices:
            f.write("v %.17g %.17g %.17g\n" % tuple(v))
        for a, b, c in mesh.faces + 1:
            f.write("f %d %d %d\n" % (a, b, c))
    if attr_path is not None and mesh.vertex_attr is not None:
        with open(attr_path, "w") as f:
            f.write("vertex,stress\n")
            for i, s in enumerate(mesh.vertex_attr):
                f.write("%d,%.17g\n" % (i, s))


def load_obj(path):
    verts = []
    faces = []
    try:
        fh = open(path, "r")
    except OSError as e:
        raise IoError("cannot open mesh %s: %s" % (path, e))
    with fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise IoError("%s:%d: short vertex record" % (path, ln))
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise IoError("%s:%d: only triangle faces are "
                                  "supported" % (path, ln))
                idx = [int(p.split("/")[0]) for p in parts[1:4]]
                faces.append([i - 1 for i in idx])
    if not verts or not faces:
        raise IoError("%s: no usable v/f records" % path)
    return TriangleMesh(np.array(verts), np.array(faces))


def _point_triangle_batch(p, v0, v1, v2):
    """Closed-form closest distance from points to aligned triangles.

    All arguments (M, 3); returns squared distances (M,). Region-based
    projection onto the triangle's plane with edge/vertex clamping.
    """
    e0 = v1 - v0
    e1 = v2 - v0
    d = v0 - p
    a = np.einsum("ij,ij->i", e0, e0)
    b = np.einsum("ij,ij->i", e0, e1)
    c = np.einsum("ij,ij->i", e1, e1)
    dd = np.einsum("ij,ij->i", e0, d)
    e = np.einsum("ij,ij->i", e1, d)
    det = a * c - b * b
    s = b * e - c * dd
    t = b * dd - a * e

    s_out = np.empty_like(s)
    t_out = np.empty_like(t)

    inside = (s + t <= det) & (s >= 0) & (t >= 0)
    safe_det = np.where(det > 0, det, 1.0)
    s_out[inside] = (s / safe_det)[inside]
    t_out[inside] = (t / safe_det)[inside]

    # clamp to each edge and vertex; cheapest correct route at this scale
    # is to evaluate all three edge projections and take the best
    rest = ~inside
    if np.any(rest):
        idx = np.where(rest)[0]
        pr, v0r, e0r, e1r = p[idx], v0[idx], e0[idx], e1[idx]
        ar, br, cr = a[idx], b[idx], c[idx]
        ddr, er = dd[idx], e[idx]
        cands = np.empty((3, len(idx)))
        scand = np.empty((3, len(idx)))
        tcand = np.empty((3, len(idx)))
        # edge v0-v1: t = 0, s = clamp(-dd/a)
        s1 = np.clip(-ddr / np.where(ar > 0, ar, 1.0), 0.0, 1.0)
        scand[0], tcand[0] = s1, 0.0
        # edge v0-v2: s = 0, t = clamp(-e/c)
        t2 = np.clip(-er / np.where(cr > 0, cr, 1.0), 0.0, 1.0)
        scand[1], tcand[1] = 0.0, t2
        # edge v1-v2: s + t = 1
        numer = cr + er - br - ddr
        denom = ar - 2 * br + cr
        s3 = np.clip(numer / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
        scand[2], tcand[2] = s3, 1.0 - s3
        for k in range(3):
            q = v0r + scand[k][:, None] * e0r + tcand[k][:, None] * e1r
            cands[k] = np.einsum("ij,ij->i", q - pr, q - pr)
        best = np.argmin(cands, axis=0)
        s_out[idx] = scand[best, np.arange(len(idx))]
        t_out[idx] = tcand[best, np.arange(len(idx))]

    q = v0 + s_out[:, None] * e0 + t_out[:, None] * e1
    return np.einsum("ij,ij->i", q - p, q - p)


class MeshDistance:
    """Exact unsigned distance queries against a fixed mesh."""

    def __init__(self, mesh, k=32):
        self.mesh = mesh
        self.k = min(k, len(mesh.faces))
        self._v0, self._v1, self._v2 = mesh.corners()
        cent = mesh.centroids()
        self._centroids = cent
        self.r_max = float(np.sqrt(max(
            np.einsum("ij,ij->i", self._v0 - cent, self._v0 - cent).max(),
            np.einsum("ij,ij->i", self._v1 - cent, self._v1 - cent).max(),
            np.einsum("ij,ij->i", self._v2 - cent, self._v2 - cent).max())))
        self.tree = cKDTree(cent)

    def query(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        dc, idx = self.tree.query(points, k=self.k)
        if self.k == 1:
            dc = dc[:, None]
            idx = idx[:, None]
        flat_p = np.repeat(points, self.k, axis=0)
        flat_i = idx.ravel()
        d2 = _point_triangle_batch(flat_p, self._v0[flat_i],
                                   self._v1[flat_i], self._v2[flat_i])
        d2 = d2.reshape(n, self.k)
        best = np.sqrt(d2.min(axis=1))
        # certificate: every unseen triangle has centroid farther than
        # dc_k, hence surface farther than dc_k - r_max
        uncertain = best > dc[:, -1] - self.r_max
        if self.k == len(self.mesh.faces):
            uncertain[:] = False
        for i in np.where(uncertain)[0]:
            ball = self.tree.query_ball_point(points[i],
                                              best[i] + self.r_max + 1e-12)
            cand = np.asarray(ball, dtype=np.int64)
            if len(cand) == 0:
                continue
            pp = np.broadcast_to(points[i], (len(cand), 3))
            dd = _point_triangle_batch(pp, self._v0[cand], self._v1[cand],
                                       self._v2[cand])
            best[i] = min(best[i], np.sqrt(dd.min()))
        return best


def _parity_one_direction(points, mesh, direction):
    """Crossing parity of rays from each point along one direction."""
    d = direction / np.linalg.norm(direction)
    # orthonormal transverse basis
    u = np.cross(d, [0.0, 0.0, 1.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(d, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    w = np.cross(d, u)

    v0, v1, v2 = mesh.corners()
    e1 = v1 - v0
    e2 = v2 - v0
    h = np.cross(np.broadcast_to(d, e2.shape), e2)
    a = np.einsum("ij,ij->i", e1, h)

    # 2D projections transverse to the ray
    pv = np.stack([mesh.vertices @ u, mesh.vertices @ w], axis=1)
    tl = np.minimum(np.minimum(pv[mesh.faces[:, 0]], pv[mesh.faces[:, 1]]),
                    pv[mesh.faces[:, 2]])
    th = np.maximum(np.maximum(pv[mesh.faces[:, 0]], pv[mesh.faces[:, 1]]),
                    pv[mesh.faces[:, 2]])
    pq = np.stack([points @ u, points @ w], axis=1)

    lo = np.minimum(tl.min(axis=0), pq.min(axis=0)) - 1e-9
    hi = np.maximum(th.max(axis=0), pq.max(axis=0)) + 1e-9
    nb = 48
    span = np.maximum(hi - lo, 1e-12)
    tri_lo = np.clip(((tl - lo) / span * nb).astype(int), 0, nb - 1)
    tri_hi = np.clip(((th - lo) / span * nb).astype(int), 0, nb - 1)
    pt_bin = np.clip(((pq - lo) / span * nb).astype(int), 0, nb - 1)

    # bin -> triangle lists
    bins = {}
    for t in range(len(mesh.faces)):
        for bx in range(tri_lo[t, 0], tri_hi[t, 0] + 1):
            for by in range(tri_lo[t, 1], tri_hi[t, 1] + 1):
                bins.setdefault(bx * nb + by, []).append(t)

    parity = np.zeros(len(points), dtype=bool)
    keys = pt_bin[:, 0] * nb + pt_bin[:, 1]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.searchsorted(sorted_keys, np.unique(sorted_keys))
    boundaries = list(starts) + [len(points)]
    for gi in range(len(boundaries) - 1):
        sel = order[boundaries[gi]:boundaries[gi + 1]]
        key = int(keys[sel[0]])
        tris = bins.get(key)
        if not tris:
            continue
        tris = np.asarray(tris)
        o = points[sel]
        va, ea, eb = v0[tris], e1[tris], e2[tris]
        ha, aa = h[tris], a[tris]
        ok = np.abs(aa) > 1e-14
        f = np.where(ok, 1.0 / np.where(ok, aa, 1.0), 0.0)
        s = o[:, None, :] - va[None]
        uu = np.einsum("ptj,tj->pt", s, ha) * f[None]
        q = np.cross(s, ea[None])
        vv = np.einsum("ptj,j->pt", q, d) * f[None]
        tt = np.einsum("ptj,tj->pt", q, eb) * f[None]
        hit = ok[None] & (uu >= 0) & (vv >= 0) & (uu + vv <= 1.0) & (tt > 1e-12)
        parity[sel] = (hit.sum(axis=1) % 2).astype(bool)
    return parity


def inside_mesh(points, mesh):
    """Majority vote of three ray-crossing parities; True = inside."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    votes = np.zeros(len(points), dtype=int)
    for d in _RAY_DIRS:
        votes += _parity_one_direction(points, mesh, d)
    return votes >= 2


def box_mesh(half=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)):
    """Axis-aligned closed box, 12 triangles, outward orientation."""
    hx, hy, hz = half
    cx, cy, cz = center
    corners = np.array([[sx, sy, sz]
                        for sx in (-hx, hx)
                        for sy in (-hy, hy)
                        for sz in (-hz, hz)]) + [cx, cy, cz]
    faces = np.array([
        [0, 1, 3], [0, 3, 2],    # x = -hx
        [4, 6, 7], [4, 7, 5],    # x = +hx
        [0, 4, 5], [0, 5, 1],    # y = -hy
        [2, 3, 7], [2, 7, 6],    # y = +hy
        [0, 2, 6], [0, 6, 4],    # z = -hz
        [1, 5, 7], [1, 7, 3],    # z = +hz
    ])
    return TriangleMesh(corners, faces)


def icosphere(depth=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron projected onto a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(depth):
        verts_list = [v for v in verts]
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m /= np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab],
                              [c, ca, bc], [ab, bc, ca]])
        verts = np.array(verts_list)
        faces = np.array(new_faces)
    return TriangleMesh(verts * radius + np.asarray(center, dtype=float),
                        faces)
