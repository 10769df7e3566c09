"""Graded watertight tetrahedral meshing of the implicit domain.

Strategy: a uniform lattice in a warped coordinate (fine spacing near the
tip/floor gap, growing radially outward) is split into six tetrahedra per
cube, vertices within a snap band are projected onto the zero level set of
the signed distance function, and the remaining sign-crossing tetrahedra are
cut with marching-tetrahedra stencils.  Quad faces produced by cuts are
triangulated through their smallest global vertex id, which makes the split
conforming across neighboring cells without communication.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, MarkerError
from .geometry import DomainSpec, REGIONS

_CUBE_TETS = np.array([  # Freudenthal/Kuhn split of the unit cube, corners bit-coded (x|y<<1|z<<2)
    [0, 1, 3, 7],
    [0, 1, 7, 5],
    [0, 5, 7, 4],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
], dtype=np.int64)


@dataclass
class GradedSizing:
    """Radial mesh sizing: edge length ``fine`` inside ``fine_radius`` of the
    origin, growing at ``rate`` per unit distance up to ``coarse``."""
    fine: float
    coarse: float
    fine_radius: float
    rate: float = 0.45

    def __post_init__(self):
        if not (0 < self.fine <= self.coarse):
            raise GeometryError(f"invalid sizing fine={self.fine} coarse={self.coarse}")
        # radius (in lattice units of `fine`) where the exponential ramp ends
        self.rho_ramp_end = self.fine_radius + (self.fine / self.rate) * np.log(self.coarse / self.fine)
        self.m_ramp_end = self.fine_radius + (self.coarse - self.fine) / self.rate

    def stretch(self, rho):
        """Physical-to-lattice size ratio at lattice radius rho."""
        r0, g, s0, s1 = self.fine_radius, self.rate, self.fine, self.coarse
        out = np.where(rho <= r0, 1.0,
                       np.exp(g * np.minimum(np.maximum(rho - r0, 0.0),
                                             self.rho_ramp_end - r0) / s0))
        return np.where(rho >= self.rho_ramp_end, s1 / s0, out)

    def warp_radius(self, rho):
        """Physical radius m(rho) for lattice radius rho (closed form)."""
        r0, g, s0, s1 = self.fine_radius, self.rate, self.fine, self.coarse
        rho = np.asarray(rho, dtype=float)
        ramp = r0 + (s0 / g) * (np.exp(g * (rho - r0) / s0) - 1.0)
        far = self.m_ramp_end + (s1 / s0) * (rho - self.rho_ramp_end)
        return np.where(rho <= r0, rho, np.where(rho <= self.rho_ramp_end, ramp, far))

    def lattice_radius(self, m):
        """Inverse of warp_radius."""
        r0, g, s0, s1 = self.fine_radius, self.rate, self.fine, self.coarse
        if m <= r0:
            return m
        if m <= self.m_ramp_end:
            return r0 + (s0 / g) * np.log(1.0 + g * (m - r0) / s0)
        return self.rho_ramp_end + (m - self.m_ramp_end) * (s0 / s1)

    def warp(self, xi):
        rho = np.sqrt(np.einsum("ij,ij->i", xi, xi))
        fac = np.ones_like(rho)
        nz = rho > 0
        fac[nz] = self.warp_radius(rho[nz]) / rho[nz]
        return xi * fac[:, None]


class Mesh:
    """Tetrahedral volume mesh with labeled, outward-oriented boundary."""

    def __init__(self, vertices, cells, boundary_faces, boundary_labels,
                 boundary_cells, h, epsilon, target, coarse):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.boundary_faces = np.ascontiguousarray(boundary_faces, dtype=np.int64)
        self.boundary_labels = np.asarray(boundary_labels, dtype=object)
        self.boundary_cells = np.ascontiguousarray(boundary_cells, dtype=np.int64)
        self.h = h
        self.epsilon = epsilon
        self.target = target
        self.coarse = coarse
        self._edges = None
        self._cell_edges = None

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    def cell_volumes(self):
        v = self.vertices[self.cells]
        a = v[:, 1] - v[:, 0]
        b = v[:, 2] - v[:, 0]
        c = v[:, 3] - v[:, 0]
        return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0

    def volume(self):
        return float(self.cell_volumes().sum())

    def boundary_areas(self):
        t = self.vertices[self.boundary_faces]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return 0.5 * np.sqrt(np.einsum("ij,ij->i", n, n))

    def boundary_normals(self):
        """Unit outward facet normals."""
        t = self.vertices[self.boundary_faces]
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def boundary_vertex_ids(self):
        return np.unique(self.boundary_faces)

    def edges(self):
        """Unique mesh edges (sorted pairs) and the (cell, 6) edge index map."""
        if self._edges is None:
            local = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
            pairs = np.sort(self.cells[:, local].reshape(-1, 2), axis=1)
            uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
            self._edges = uniq
            self._cell_edges = inv.reshape(-1, 6)
        return self._edges, self._cell_edges

    def boundary_edge_check(self):
        """Return the number of boundary edges not shared by exactly 2 faces."""
        e = np.sort(np.concatenate([self.boundary_faces[:, [0, 1]],
                                    self.boundary_faces[:, [1, 2]],
                                    self.boundary_faces[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int((counts != 2).sum())

    def region_faces(self, label):
        present = set(self.boundary_labels.tolist())
        if label not in REGIONS and label not in present:
            from .errors import LabelError
            raise LabelError(f"unknown boundary region {label!r}; known: "
                             f"{sorted(set(REGIONS) | present)}")
        return np.nonzero(self.boundary_labels == label)[0]


@dataclass
class Markers:
    tip: int
    floor_ring: np.ndarray


def _lattice(spec, sizing):
    lo, hi = spec.bounding_box(pad=0.05)
    d = sizing.fine
    n_neg = [int(np.ceil(sizing.lattice_radius(abs(lo[k])) / d)) + 1 for k in range(3)]
    n_pos = [int(np.ceil(sizing.lattice_radius(abs(hi[k])) / d)) + 1 for k in range(3)]
    axes = [d * np.arange(-n_neg[k], n_pos[k] + 1) for k in range(3)]
    shape = tuple(len(a) for a in axes)
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    xi = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    return sizing.warp(xi), shape


def _cube_tet_ids(shape):
    nx, ny, nz = shape
    ii, jj, kk = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1),
                             indexing="ij")
    base = (ii * ny + jj) * nz + kk
    base = base.ravel()
    # corner offsets in flat index for bit-coded corners (x|y<<1|z<<2)
    off = np.array([(b & 1) * ny * nz + ((b >> 1) & 1) * nz + ((b >> 2) & 1)
                    for b in range(8)])
    corners = base[:, None] + off[None, :]
    return corners[:, _CUBE_TETS].reshape(-1, 4)


def _split_quad(q):
    """Triangulate cyclic quad (q0,q1,q2,q3) through its min-id corner."""
    m = int(np.argmin(q))
    if m in (0, 2):
        return [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
    return [(q[1], q[2], q[3]), (q[1], q[3], q[0])]


def _split_prism(b0, b1, b2, t0, t1, t2):
    """Cut a prism (bottom b, top t, verticals bi-ti) into 3 conforming tets.

    Each lateral quad is cut through its smallest global vertex id, matching
    _split_quad on shared faces.
    """
    prism = [b0, b1, b2, t0, t1, t2]
    if min(prism[3:]) < min(prism[:3]):           # flip so the min vertex is on the bottom
        prism = [prism[3], prism[5], prism[4], prism[0], prism[2], prism[1]]
    r = int(np.argmin(prism[:3]))                  # rotate min vertex to local b0
    prism = [prism[r], prism[(r + 1) % 3], prism[(r + 2) % 3],
             prism[3 + r], prism[3 + (r + 1) % 3], prism[3 + (r + 2) % 3]]
    B0, B1, B2, T0, T1, T2 = prism
    # remaining free quad (B1,B2,T2,T1): min-id diagonal
    if min(B1, T2) < min(B2, T1):
        return [(B0, B1, B2, T2), (B0, B1, T2, T1), (B0, T1, T2, T0)]
    return [(B0, B1, B2, T1), (B0, B2, T2, T1), (B0, T1, T2, T0)]


def _cut_tet(tet, sgn, crossing):
    """Sub-tets of the kept (non-positive) part of a sign-crossing tet.

    ``sgn`` holds -1/0/+1 per corner; ``crossing(u, v)`` returns the global id
    of the surface point on edge (u, v) with opposite strict signs.
    """
    neg = [v for v, s in zip(tet, sgn) if s < 0]
    zer = [v for v, s in zip(tet, sgn) if s == 0]
    pos = [v for v, s in zip(tet, sgn) if s > 0]
    k, p = len(neg), len(pos)
    if k == 1:
        a = neg[0]
        return [tuple([a] + zer + [crossing(a, q) for q in pos])]
    if k == 2 and p == 1:
        a, b = neg
        d = pos[0]
        z = zer[0]
        quad = (a, b, crossing(b, d), crossing(a, d))
        return [tri + (z,) for tri in _split_quad(quad)]
    if k == 2 and p == 2:
        a, b = neg
        c, d = pos
        return _split_prism(a, crossing(a, c), crossing(a, d),
                            b, crossing(b, c), crossing(b, d))
    if k == 3:
        a, b, c = neg
        d = pos[0]
        return _split_prism(a, b, c, crossing(a, d), crossing(b, d), crossing(c, d))
    raise AssertionError("unreachable sign pattern")


def _edge_surface_points(spec, verts, phi, edges):
    """Surface points on edges with strict sign change, by bisection."""
    a = verts[edges[:, 0]]
    b = verts[edges[:, 1]]
    fa = phi[edges[:, 0]].copy()
    lo = np.zeros(len(edges))
    hi = np.ones(len(edges))
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        fm = spec.sdf(a + mid[:, None] * (b - a))
        neg = (fm < 0) == (fa < 0)
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    t = 0.5 * (lo + hi)
    return a + t[:, None] * (b - a)


def _largest_component(cells):
    """Indices of cells in the largest face-connected component."""
    nc = cells.shape[0]
    faces = np.sort(cells[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]]
                    .reshape(-1, 3), axis=1)
    order = np.lexsort(faces.T[::-1])
    fs = faces[order]
    same = np.all(fs[1:] == fs[:-1], axis=1)
    parent = np.arange(nc)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = order // 4
    for idx in np.nonzero(same)[0]:
        a, b = find(owner[idx]), find(owner[idx + 1])
        if a != b:
            parent[max(a, b)] = min(a, b)
    roots = np.array([find(i) for i in range(nc)])
    vals, counts = np.unique(roots, return_counts=True)
    best = vals[np.argmax(counts)]
    return np.nonzero(roots == best)[0]


def generate_mesh(spec: DomainSpec, target, coarse=None, fine_radius=None,
                  grading=0.45, snap_tol=0.22, seed=0) -> Mesh:
    """Mesh the domain with edge size ``target`` near the gap.

    ``coarse`` (far-field size) defaults to 5x target capped at 0.32 so that
    refinement ladders scale every region proportionally.  Refuses targets
    that cannot resolve the tip-floor gap.
    """
    if spec.degenerate:
        raise GeometryError("epsilon = 0: tip touches the floor (splash at t=0); "
                            "no positive-gap mesh exists")
    if target > spec.epsilon / 2.0 and not spec.is_reference:
        raise GeometryError(f"target {target} > eps/2 = {spec.epsilon / 2.0}: "
                            "gap would be unresolved")
    if coarse is None:
        coarse = min(5.0 * target, 0.32)
    if fine_radius is None:
        fine_radius = max(0.12, 2.0 * spec.epsilon) if not spec.is_reference else 0.3

    sizing = GradedSizing(target, coarse, fine_radius, grading)
    verts, shape = _lattice(spec, sizing)
    tets = _cube_tet_ids(shape)

    phi = spec.sdf(verts)
    rho = np.sqrt(np.einsum("ij,ij->i", verts, verts))
    local = target * sizing.stretch(np.array([sizing.lattice_radius(r) for r in
                                              np.atleast_1d(rho)]))
    snap = np.abs(phi) <= snap_tol * local
    if snap.any():
        verts = verts.copy()
        verts[snap] = spec.project_to_surface(verts[snap])
        phi = phi.copy()
        phi[snap] = 0.0

    sgn = np.sign(phi).astype(np.int8)
    tet_sgn = sgn[tets]
    has_neg = (tet_sgn < 0).any(axis=1)
    has_pos = (tet_sgn > 0).any(axis=1)
    keep_full = has_neg & ~has_pos
    mixed = has_neg & has_pos

    # anti-bridging guard: a fully-kept tet near the tip-floor gap must not
    # tunnel across the void.  Restricted to the gap cylinder, which is free
    # of concave creases (elsewhere a barely-positive probe just flags the
    # usual polyhedral overshoot of a concave junction, not a bridge).
    if keep_full.any() and not spec.is_reference:
        kf = tets[keep_full]
        cent = verts[kf].mean(axis=1)
        in_gap = (np.hypot(cent[:, 0], cent[:, 1]) < 0.9) \
            & (cent[:, 2] > -0.15) & (cent[:, 2] < max(0.6, 3.0 * spec.epsilon))
        if in_gap.any():
            kf = kf[in_gap]
            probes = [verts[kf].mean(axis=1)]
            for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
                probes.append(0.5 * (verts[kf[:, i]] + verts[kf[:, j]]))
            bad = np.zeros(kf.shape[0], dtype=bool)
            for ppts in probes:
                bad |= spec.sdf(ppts) > 0.0
            idx = np.nonzero(keep_full)[0][in_gap]
            keep_full[idx[bad]] = False

    # surface points on strictly crossing edges of mixed tets
    local_edges = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
    mixed_tets = tets[mixed]
    cross_pairs = set()
    for i, j in local_edges:
        u, v = mixed_tets[:, i], mixed_tets[:, j]
        strict = sgn[u] * sgn[v] < 0
        uu = np.minimum(u[strict], v[strict])
        vv = np.maximum(u[strict], v[strict])
        cross_pairs.update(zip(uu.tolist(), vv.tolist()))
    cross_pairs = sorted(cross_pairs)
    new_ids = {}
    if cross_pairs:
        pairs = np.array(cross_pairs, dtype=np.int64)
        pts = _edge_surface_points(spec, verts, phi, pairs)
        base = verts.shape[0]
        verts = np.vstack([verts, pts])
        new_ids = {pair: base + i for i, pair in enumerate(cross_pairs)}

    def crossing(u, v):
        return new_ids[(u, v) if u < v else (v, u)]

    out_cells = [tets[keep_full]]
    sub = []
    for tet in mixed_tets:
        sub.extend(_cut_tet(tet.tolist(), sgn[tet], crossing))
    if sub:
        out_cells.append(np.array(sub, dtype=np.int64))
    cells = np.vstack(out_cells)

    # orient positively, drop exact-degenerate slivers, keep main component
    p = verts[cells]
    vol6 = np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                     np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
    neg = vol6 < 0
    cells[neg] = cells[neg][:, [0, 2, 1, 3]]
    vol6 = np.abs(vol6)
    vol_floor = 1e-7 * target**3
    cells = cells[vol6 > vol_floor]
    cells = cells[_largest_component(cells)]

    # compact vertex ids
    used, inv = np.unique(cells, return_inverse=True)
    cells = inv.reshape(-1, 4)
    verts = verts[used]

    # boundary: faces owned by exactly one cell, oriented outward
    face_local = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]  # outward order
    all_faces = np.concatenate([cells[:, fl] for fl in face_local])
    face_cell = np.tile(np.arange(cells.shape[0]), 4)
    key = np.sort(all_faces, axis=1)
    order = np.lexsort(key.T[::-1])
    ks = key[order]
    first = np.ones(len(ks), dtype=bool)
    first[1:] = np.any(ks[1:] != ks[:-1], axis=1)
    grp = np.cumsum(first) - 1
    counts = np.bincount(grp)
    solo = counts[grp] == 1
    bidx = order[solo]
    bfaces = all_faces[bidx]
    bcells = face_cell[bidx]
    border = np.argsort(bidx, kind="stable")  # deterministic original order
    bfaces, bcells = bfaces[border], bcells[border]

    centroids = verts[bfaces].mean(axis=1)
    labels = spec.region_of(spec.project_to_surface(centroids, iters=3))

    mesh = Mesh(verts, cells, bfaces, labels, bcells,
                spec.h, spec.epsilon, target, coarse)
    bad_edges = mesh.boundary_edge_check()
    if bad_edges:
        raise GeometryError(f"boundary not watertight: {bad_edges} non-manifold edges "
                            f"(target={target}); perturb target slightly")
    if (mesh.cell_volumes() <= 0).any():
        raise GeometryError("mesher produced non-positive cells")
    return mesh


def box_mesh(lo, hi, n) -> Mesh:
    """Structured box mesh (verification geometry); boundary label 'wall'."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=int), (3,))
    axes = [np.linspace(lo[k], hi[k], n[k] + 1) for k in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    verts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    cells = _cube_tet_ids(tuple(n + 1))
    p = verts[cells]
    vol6 = np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                     np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
    neg = vol6 < 0
    cells[neg] = cells[neg][:, [0, 2, 1, 3]]
    face_local = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]
    all_faces = np.concatenate([cells[:, fl] for fl in face_local])
    face_cell = np.tile(np.arange(cells.shape[0]), 4)
    key = np.sort(all_faces, axis=1)
    order = np.lexsort(key.T[::-1])
    ks = key[order]
    first = np.ones(len(ks), dtype=bool)
    first[1:] = np.any(ks[1:] != ks[:-1], axis=1)
    grp = np.cumsum(first) - 1
    solo = np.bincount(grp)[grp] == 1
    bidx = np.sort(order[solo])
    labels = np.array(["wall"] * len(bidx), dtype=object)
    return Mesh(verts, cells, all_faces[bidx], labels, face_cell[bidx],
                h=float(hi[2] - lo[2]), epsilon=1.0,
                target=float((hi - lo).max() / n.max()),
                coarse=float((hi - lo).max() / n.max()))


class _ImplicitBall:
    """Minimal implicit-domain adapter so generate_mesh can mesh a ball."""

    def __init__(self, radius, center=(0.0, 0.0, 0.0)):
        self.radius = radius
        self.center = np.asarray(center, dtype=float)
        self.degenerate = False
        self.is_reference = True
        self.epsilon = 1.0
        self.h = 2.0 * radius

    def sdf(self, x):
        p = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.linalg.norm(p - self.center, axis=1) - self.radius
        return out[0] if np.asarray(x).ndim == 1 else out

    def project_to_surface(self, x, iters=None):
        p = np.atleast_2d(np.asarray(x, dtype=float))
        d = p - self.center
        r = np.linalg.norm(d, axis=1)
        out = self.center + self.radius * d / np.maximum(r, 1e-300)[:, None]
        return out[0] if np.asarray(x).ndim == 1 else out

    def region_of(self, x):
        p = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array(["wall"] * p.shape[0], dtype=object)

    def bounding_box(self, pad=0.05):
        r = self.radius + pad
        return self.center - r, self.center + r


def ball_mesh(radius, target, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Uniform-size tetrahedral ball mesh (verification geometry)."""
    dom = _ImplicitBall(radius, center)
    return generate_mesh(dom, target, coarse=target, fine_radius=4.0 * radius)


def marker_points(mesh: Mesh, max_ring=32) -> Markers:
    """Tip vertex and floor-ring vertex markers.

    The tip marker is the boundary vertex nearest the hemisphere south pole;
    floor-ring markers are base-top vertices snapped exactly to {x3 = 0}
    within radius sqrt(eps) of the origin, spread in azimuth.
    """
    eps = mesh.epsilon
    bverts = mesh.boundary_vertex_ids()
    pole = np.array([0.0, 0.0, eps])
    d = np.linalg.norm(mesh.vertices[bverts] - pole, axis=1)
    tip = int(bverts[np.argmin(d)])
    if d.min() > mesh.target:
        raise MarkerError(f"no boundary vertex within target of the tip "
                          f"(nearest {d.min():.4f})")

    base_faces = np.nonzero(mesh.boundary_labels == "base_top")[0]
    if base_faces.size == 0:
        raise MarkerError("mesh has no base_top boundary faces")
    cand = np.unique(mesh.boundary_faces[base_faces])
    x = mesh.vertices[cand]
    on_plane = np.abs(x[:, 2]) < 1e-9
    ring_r = np.sqrt(eps)
    in_disk = np.hypot(x[:, 0], x[:, 1]) <= ring_r
    ring = cand[on_plane & in_disk]
    if ring.size < 8:
        raise MarkerError(f"only {ring.size} floor markers inside radius "
                          f"sqrt(eps)={ring_r:.3f}; refine the mesh")
    if ring.size > max_ring:
        ang = np.arctan2(mesh.vertices[ring, 1], mesh.vertices[ring, 0])
        order = np.argsort(ang, kind="stable")
        pick = np.linspace(0, ring.size - 1, max_ring).astype(int)
        ring = ring[order][pick]
    return Markers(tip=tip, floor_ring=np.sort(ring))
