"""Discrete fields on the tetrahedral mesh.

Continuous Lagrange elements of order 1 (vertex dofs) and order 2
(vertex + edge dofs) for scalar, vector and 3x3-tensor ranks.  Derivatives
are exact cellwise polynomial calculus; where an operation needs more
smoothness than the element provides (second derivatives of order-1 fields,
chaining of first-order operators) a volume-weighted nodal recovery is used
and documented as a surrogate.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import OperatorError, LabelError

RANK_COMPONENTS = {"scalar": 1, "vector": 3, "tensor": 9}

_LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# --- quadrature rules (barycentric points, weights summing to 1) -----------

_SQRT514 = np.sqrt(5.0 / 14.0)


def _tet_rule(degree):
    if degree <= 1:
        return np.array([[0.25, 0.25, 0.25, 0.25]]), np.array([1.0])
    if degree <= 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return pts, np.full(4, 0.25)
    # Keast 11-point, degree 4 (one negative weight; exact for quartics)
    pts = [np.full(4, 0.25)]
    wts = [-74.0 / 5625.0 * 6.0]
    a, b = 11.0 / 14.0, 1.0 / 14.0
    for i in range(4):
        p = np.full(4, b)
        p[i] = a
        pts.append(p)
        wts.append(343.0 / 45000.0 * 6.0)
    c, d = 0.25 * (1.0 + _SQRT514), 0.25 * (1.0 - _SQRT514)
    for i in range(3):
        for j in range(i + 1, 4):
            p = np.full(4, d)
            p[i] = p[j] = c
            pts.append(p)
            wts.append(56.0 / 2250.0 * 6.0)
    return np.array(pts), np.array(wts)


def _tri_rule(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if degree <= 2:
        pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 3)
    a1, b1, w1 = 0.059715871789770, 0.470142064105115, 0.111690794839005
    a2, b2, w2 = 0.797426985353087, 0.101286507323456, 0.054975871827661
    pts, wts = [], []
    for (a, b, w) in ((a1, b1, w1), (a2, b2, w2)):
        for i in range(3):
            p = np.full(3, b)
            p[i] = a
            pts.append(p)
            wts.append(2.0 * w)
    return np.array(pts), np.array(wts)


# --- shape functions --------------------------------------------------------


def _shape_values(order, lam):
    """Basis values at barycentric points lam (nq, 4) -> (nq, nbasis)."""
    if order == 1:
        return lam.copy()
    vals = [lam[:, i] * (2.0 * lam[:, i] - 1.0) for i in range(4)]
    vals += [4.0 * lam[:, a] * lam[:, b] for a, b in _LOCAL_EDGES]
    return np.stack(vals, axis=1)


def _shape_grads_bary(order, lam):
    """d(basis)/d(lambda) at lam -> (nq, nbasis, 4)."""
    nq = lam.shape[0]
    if order == 1:
        g = np.zeros((nq, 4, 4))
        g[:] = np.eye(4)
        return g
    g = np.zeros((nq, 10, 4))
    for i in range(4):
        g[:, i, i] = 4.0 * lam[:, i] - 1.0
    for k, (a, b) in enumerate(_LOCAL_EDGES):
        g[:, 4 + k, a] = 4.0 * lam[:, b]
        g[:, 4 + k, b] = 4.0 * lam[:, a]
    return g


def _tri_shape_values(order, lam):
    if order == 1:
        return lam.copy()
    vals = [lam[:, i] * (2.0 * lam[:, i] - 1.0) for i in range(3)]
    for a, b in ((0, 1), (0, 2), (1, 2)):
        vals.append(4.0 * lam[:, a] * lam[:, b])
    return np.stack(vals, axis=1)


class CellGeometry:
    """Per-cell affine data: barycentric gradients and volumes."""

    def __init__(self, mesh):
        v = mesh.vertices[mesh.cells]
        e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
        self.jac = e                       # (nc, 3, 3), columns are edge vectors
        self.detJ = np.linalg.det(e)
        self.vol = self.detJ / 6.0
        inv = np.linalg.inv(e)             # (nc, 3, 3)
        # gradients of barycentric coords: lam_1..3 rows of inv, lam_0 = -sum
        g = np.empty((mesh.num_cells, 4, 3))
        g[:, 1:, :] = inv
        g[:, 0, :] = -inv.sum(axis=1)
        self.bary_grads = g


def cell_geometry(mesh):
    geo = getattr(mesh, "_cell_geometry", None)
    if geo is None:
        geo = CellGeometry(mesh)
        mesh._cell_geometry = geo
    return geo


def dof_setup(mesh, order):
    """Dof coordinates and cell->dof map for the given order."""
    if order == 1:
        return mesh.vertices, mesh.cells
    edges, cell_edges = mesh.edges()
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    coords = np.vstack([mesh.vertices, mid])
    cdofs = np.hstack([mesh.cells, mesh.num_vertices + cell_edges])
    return coords, cdofs


def basis_at(mesh, order, degree):
    """Cached (lam, w, values, physical gradients) for a volume rule."""
    cache = getattr(mesh, "_basis_cache", None)
    if cache is None:
        cache = mesh._basis_cache = {}
    key = (order, degree)
    if key not in cache:
        lam, w = _tet_rule(degree)
        vals = _shape_values(order, lam)
        gb = _shape_grads_bary(order, lam)                  # (nq, nb, 4)
        bg = cell_geometry(mesh).bary_grads                 # (nc, 4, 3)
        grads = np.einsum("qbl,clk->cqbk", gb, bg)          # (nc, nq, nb, 3)
        cache[key] = (lam, w, vals, grads)
    return cache[key]


def quad_points(mesh, degree):
    lam, w = _tet_rule(degree)
    pts = np.einsum("ql,clk->cqk", lam, mesh.vertices[mesh.cells])
    return pts, w


@dataclass
class NormReport:
    """Volume and boundary norms of one field (surrogates labeled)."""
    l2: float
    h1: float
    h2: float
    linf: float
    boundary_l2: float
    boundary_h1_surrogate: float
    boundary_h2_surrogate: float

    def as_dict(self):
        return {
            "L2": self.l2, "H1": self.h1, "H2_surrogate": self.h2,
            "Linf": self.linf, "bdry_L2": self.boundary_l2,
            "bdry_H1_surrogate": self.boundary_h1_surrogate,
            "bdry_H2_surrogate": self.boundary_h2_surrogate,
        }


class Field:
    """A nodal finite-element field of given rank and polynomial order."""

    def __init__(self, mesh, rank, order=1, data=None):
        if rank not in RANK_COMPONENTS:
            raise OperatorError(f"unknown rank {rank!r}")
        if order not in (1, 2):
            raise OperatorError(f"unsupported order {order}")
        self.mesh = mesh
        self.rank = rank
        self.order = order
        self.dof_coords, self.cell_dofs = dof_setup(mesh, order)
        ncomp = RANK_COMPONENTS[rank]
        if data is None:
            data = np.zeros((self.dof_coords.shape[0], ncomp))
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.shape != (self.dof_coords.shape[0], ncomp):
            raise OperatorError(f"data shape {data.shape} != "
                                f"({self.dof_coords.shape[0]}, {ncomp})")
        if not np.all(np.isfinite(data)):
            raise OperatorError("field data contains non-finite entries")
        self.data = data

    @property
    def ncomp(self):
        return RANK_COMPONENTS[self.rank]

    @classmethod
    def from_callable(cls, mesh, fn, rank, order=1):
        coords, _ = dof_setup(mesh, order)
        vals = np.asarray(fn(coords), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(mesh, rank, order, vals)

    def copy(self):
        return Field(self.mesh, self.rank, self.order, self.data.copy())

    def __add__(self, other):
        return Field(self.mesh, self.rank, self.order, self.data + other.data)

    def __sub__(self, other):
        return Field(self.mesh, self.rank, self.order, self.data - other.data)

    def __mul__(self, a):
        return Field(self.mesh, self.rank, self.order, self.data * a)

    __rmul__ = __mul__

    def at_quadrature(self, degree=2):
        """Values at volume quadrature points: (nc, nq, ncomp)."""
        _, _, vals, _ = basis_at(self.mesh, self.order, degree)
        return np.einsum("qb,cbk->cqk", vals, self.data[self.cell_dofs])

    def grad_at_quadrature(self, degree=2):
        """Gradients at quadrature points: (nc, nq, ncomp, 3); row convention
        (grad g)[i, j] = d_j g_i for vectors."""
        _, _, _, grads = basis_at(self.mesh, self.order, degree)
        return np.einsum("cqbj,cbk->cqkj", grads, self.data[self.cell_dofs])

    def hessian_at_quadrature(self, degree=2):
        """Second derivatives (nc, nq, ncomp, 3, 3).

        Exact cellwise for order 2; for order 1 a recovered-gradient
        surrogate (gradient of the nodally recovered gradient field).
        """
        if self.order == 2:
            lam, _ = _tet_rule(degree)
            nq = lam.shape[0]
            bg = cell_geometry(self.mesh).bary_grads
            # second derivs of P2 basis in barycentric form are constant
            hess_b = np.zeros((nq, 10, 4, 4))
            for i in range(4):
                hess_b[:, i, i, i] = 4.0
            for k, (a, b) in enumerate(_LOCAL_EDGES):
                hess_b[:, 4 + k, a, b] = 4.0
                hess_b[:, 4 + k, b, a] = 4.0
            hess = np.einsum("qblm,clj,cmk->cqbjk", hess_b, bg, bg)
            return np.einsum("cqbjk,cbn->cqnjk", hess, self.data[self.cell_dofs])
        g = diff(self, "grad")  # recovered nodal gradient
        gq = g.grad_at_quadrature(degree)  # (nc, nq, ncomp*3, 3)
        nc, nq = gq.shape[:2]
        return gq.reshape(nc, nq, self.ncomp, 3, 3)

    def linf(self):
        return float(np.abs(self.data).max()) if self.data.size else 0.0


def _volume_average_recovery(mesh, cv):
    vol = cell_geometry(mesh).vol
    num = np.zeros((mesh.num_vertices, cv.shape[1]))
    w = np.repeat(vol, 4)
    idx = mesh.cells.ravel()
    for k in range(cv.shape[1]):
        num[:, k] = np.bincount(idx, weights=np.repeat(cv[:, k], 4) * w,
                                minlength=mesh.num_vertices)
    den = np.bincount(idx, weights=w, minlength=mesh.num_vertices)
    return num / den[:, None]


def nodal_recovery(mesh, cell_values):
    """Recover cellwise values to vertices by local linear least squares.

    Each vertex fits an affine model through the centroid values of its cell
    patch (volume weighted), which reproduces linear fields exactly up to
    the boundary; degenerate patches fall back to plain averaging.
    Returns (nv, m).
    """
    cv = np.asarray(cell_values, dtype=float)
    if cv.ndim == 1:
        cv = cv[:, None]
    nv, m = mesh.num_vertices, cv.shape[1]
    vol = cell_geometry(mesh).vol
    cent = mesh.vertices[mesh.cells].mean(axis=1)

    idx = mesh.cells.ravel()                       # (4 nc,)
    w = np.repeat(vol, 4)
    delta = np.repeat(cent, 4, axis=0) - mesh.vertices[idx]
    scale = np.sqrt(np.bincount(idx, weights=w * np.einsum("ij,ij->i", delta, delta),
                                minlength=nv)
                    / np.maximum(np.bincount(idx, weights=w, minlength=nv), 1e-300))
    scale = np.maximum(scale, 1e-300)
    dl = delta / scale[idx][:, None]
    basis = np.concatenate([np.ones((len(idx), 1)), dl], axis=1)   # (4nc, 4)

    M = np.zeros((nv, 4, 4))
    rhs = np.zeros((nv, 4, m))
    wb = basis * w[:, None]
    vals = np.repeat(cv, 4, axis=0)
    for a in range(4):
        for b in range(a, 4):
            acc = np.bincount(idx, weights=wb[:, a] * basis[:, b], minlength=nv)
            M[:, a, b] = acc
            M[:, b, a] = acc
        for k in range(m):
            rhs[:, a, k] = np.bincount(idx, weights=wb[:, a] * vals[:, k],
                                       minlength=nv)

    # truncated eigen-solve: unresolved slope directions get the min-norm fit,
    # which keeps clustered corner patches from extrapolating wildly
    lam, Q = np.linalg.eigh(M)
    cutoff = 1e-6 * lam[:, -1:]
    deficient = (lam < cutoff).any(axis=1)
    inv_lam = np.where(lam > cutoff, 1.0 / np.maximum(lam, 1e-300), 0.0)
    sol = np.einsum("nab,nb,ncb,ncm->nam", Q, inv_lam, Q, rhs)
    out = sol[:, 0, :]

    bad = np.nonzero(deficient)[0]
    if bad.size:
        # enrich deficient patches (corners/edges) with the two-ring
        order = np.argsort(idx, kind="stable")
        starts = np.searchsorted(idx[order], np.arange(nv + 1))
        cell_of = order // 4

        def cells_of(vid):
            return cell_of[starts[vid]:starts[vid + 1]]

        for vid in bad:
            ring1 = np.unique(cells_of(vid))
            patch = np.unique(np.concatenate(
                [cells_of(u) for u in np.unique(mesh.cells[ring1])]))
            d = cent[patch] - mesh.vertices[vid]
            ww = vol[patch]
            sc = np.sqrt((ww * np.einsum("ij,ij->i", d, d)).sum() / ww.sum())
            B = np.concatenate([np.ones((len(patch), 1)), d / max(sc, 1e-300)], axis=1)
            Mn = (B[:, :, None] * B[:, None, :] * ww[:, None, None]).sum(axis=0)
            rn = (B[:, :, None] * (ww[:, None] * cv[patch])[:, None, :]).sum(axis=0)
            ln, Qn = np.linalg.eigh(Mn)
            keep = ln > 1e-6 * ln[-1]
            il = np.where(keep, 1.0 / np.maximum(ln, 1e-300), 0.0)
            out[vid] = (Qn @ (il[:, None] * (Qn.T @ rn)))[0]
    return out


def diff(field: Field, kind: str) -> Field:
    """First-order differential operator, returned as a recovered nodal field.

    grad: scalar -> vector, vector -> tensor (row convention d_j g_i).
    div: vector -> scalar; tensor F -> vector with components d_j F_ji
         (divergence of the columns, the F-transpose contraction).
    curl: vector -> vector, (curl v)_i = eps_ijk d_j v_k.
    """
    mesh = field.mesh
    gq = field.grad_at_quadrature(degree=1)[:, 0]  # (nc, ncomp, 3) cell means
    if kind == "grad":
        if field.rank == "scalar":
            out_rank, cv = "vector", gq[:, 0, :]
        elif field.rank == "vector":
            out_rank, cv = "tensor", gq.reshape(-1, 9)
        else:
            raise OperatorError("grad of a tensor field is not supported")
    elif kind == "div":
        if field.rank == "vector":
            out_rank = "scalar"
            cv = gq[:, [0, 1, 2], [0, 1, 2]].sum(axis=1)[:, None]
        elif field.rank == "tensor":
            out_rank = "vector"
            g = gq.reshape(-1, 3, 3, 3)  # (nc, i, j, d): d_d F_ij
            cv = np.einsum("cjij->ci", g)
        else:
            raise OperatorError("div of a scalar field")
    elif kind == "curl":
        if field.rank != "vector":
            raise OperatorError("curl needs a vector field")
        out_rank = "vector"
        cv = np.stack([gq[:, 2, 1] - gq[:, 1, 2],
                       gq[:, 0, 2] - gq[:, 2, 0],
                       gq[:, 1, 0] - gq[:, 0, 1]], axis=1)
    else:
        raise OperatorError(f"unknown operator kind {kind!r}")
    nodal = nodal_recovery(mesh, cv)
    if field.order == 1:
        return Field(mesh, out_rank, 1, nodal)
    # order-2 output: seed vertex values from recovery, edge values by midpoint average
    edges, _ = mesh.edges()
    data = np.vstack([nodal, 0.5 * (nodal[edges[:, 0]] + nodal[edges[:, 1]])])
    return Field(mesh, out_rank, 2, data)


def integrate(field: Field, degree=2):
    """Componentwise volume integral."""
    vol = cell_geometry(field.mesh).vol
    vals = field.at_quadrature(degree)
    _, w = _tet_rule(degree)
    return np.einsum("cqk,q,c->k", vals, w, vol)


def l2_norm_sq(field: Field, degree=None):
    if degree is None:
        degree = 2 if field.order == 1 else 4
    vol = cell_geometry(field.mesh).vol
    vals = field.at_quadrature(degree)
    _, w = _tet_rule(degree)
    return max(float(np.einsum("cqk,cqk,q,c->", vals, vals, w, vol)), 0.0)


def grad_norm_sq(field: Field, degree=None):
    if degree is None:
        degree = 2 if field.order == 1 else 4
    vol = cell_geometry(field.mesh).vol
    g = field.grad_at_quadrature(degree)
    _, w = _tet_rule(degree)
    return max(float(np.einsum("cqkj,cqkj,q,c->", g, g, w, vol)), 0.0)


def hessian_norm_sq(field: Field, degree=None):
    if degree is None:
        degree = 2
    vol = cell_geometry(field.mesh).vol
    hq = field.hessian_at_quadrature(degree)
    _, w = _tet_rule(degree)
    return max(float(np.einsum("cqkij,cqkij,q,c->", hq, hq, w, vol)), 0.0)


def sobolev_norm(field: Field, k: int):
    """||f||_{H^k} with sum over all derivative orders <= k.

    k = 2 uses exact cellwise second derivatives for order-2 fields and the
    recovered-gradient surrogate for order-1 fields.
    """
    if k not in (0, 1, 2):
        raise OperatorError(f"sobolev_norm supports k in 0..2, got {k}")
    total = l2_norm_sq(field)
    if k >= 1:
        total += grad_norm_sq(field)
    if k >= 2:
        total += hessian_norm_sq(field)
    return float(np.sqrt(total))


def norm_report(field: Field) -> NormReport:
    bl2, bh1, bh2 = boundary_norms_sq(field)
    return NormReport(
        l2=float(np.sqrt(l2_norm_sq(field))),
        h1=float(np.sqrt(l2_norm_sq(field) + grad_norm_sq(field))),
        h2=sobolev_norm(field, 2),
        linf=field.linf(),
        boundary_l2=float(np.sqrt(bl2)),
        boundary_h1_surrogate=float(np.sqrt(bl2 + bh1)),
        boundary_h2_surrogate=float(np.sqrt(bl2 + bh1 + bh2)),
    )


# --- boundary machinery -----------------------------------------------------


def boundary_quadrature(mesh, degree=2):
    """(points (nb, nq, 3), scaled weights (nb, nq)) over boundary faces."""
    cache = getattr(mesh, "_bq_cache", None)
    if cache is None:
        cache = mesh._bq_cache = {}
    if degree not in cache:
        lam, w = _tri_rule(degree)
        tri = mesh.vertices[mesh.boundary_faces]
        pts = np.einsum("ql,flk->fqk", lam, tri)
        area = mesh.boundary_areas()
        cache[degree] = (pts, w[None, :] * area[:, None])
    return cache[degree]


def _cell_bary_of_points(mesh, cells, pts):
    """Barycentric coordinates of physical points wrt given cells."""
    geo = cell_geometry(mesh)
    v0 = mesh.vertices[mesh.cells[cells, 0]]
    rel = pts - v0
    lam123 = np.einsum("ckj,cj->ck", geo.bary_grads[cells, 1:, :], rel)
    lam0 = 1.0 - lam123.sum(axis=1)
    return np.concatenate([lam0[:, None], lam123], axis=1)


def field_on_boundary(field: Field, degree=2):
    """Field values at boundary quadrature points: (nb, nq, ncomp)."""
    mesh = field.mesh
    pts, _ = boundary_quadrature(mesh, degree)
    lam, _ = _tri_rule(degree)
    if field.order == 1:
        vals = _tri_shape_values(1, lam)
        fdata = field.data[mesh.boundary_faces]
        return np.einsum("qb,fbk->fqk", vals, fdata)
    # order 2: face trace uses the 3 vertex and 3 edge dofs of the face
    edges, _ = mesh.edges()
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
    bf = mesh.boundary_faces
    fe = np.empty((bf.shape[0], 3), dtype=np.int64)
    for k, (i, j) in enumerate(((0, 1), (0, 2), (1, 2))):
        a = np.minimum(bf[:, i], bf[:, j])
        b = np.maximum(bf[:, i], bf[:, j])
        fe[:, k] = [lookup[(int(x), int(y))] for x, y in zip(a, b)]
    dofs = np.hstack([bf, mesh.num_vertices + fe])
    vals = _tri_shape_values(2, lam)
    return np.einsum("qb,fbk->fqk", vals, field.data[dofs])


def field_grad_on_boundary(field: Field, degree=2):
    """Gradients at boundary quadrature points from the owner cells."""
    mesh = field.mesh
    pts, _ = boundary_quadrature(mesh, degree)
    nb, nq = pts.shape[:2]
    cells = np.repeat(mesh.boundary_cells, nq)
    flat = pts.reshape(-1, 3)
    lam = _cell_bary_of_points(mesh, cells, flat)
    gb = _shape_grads_bary(field.order, lam)             # (n, nbasis, 4)
    bg = cell_geometry(mesh).bary_grads[cells]           # (n, 4, 3)
    grads = np.einsum("nbl,nlk->nbk", gb, bg)
    vals = np.einsum("nbk,nbm->nmk", grads, field.data[field.cell_dofs[cells]])
    return vals.reshape(nb, nq, field.ncomp, 3)


def surface_integrate(field, mesh=None, region=None, degree=2):
    """Integral of a field (or callable) over a labeled boundary region.

    ``region=None`` integrates over the whole boundary.  Returns a scalar for
    scalar integrands, else a component array.
    """
    if isinstance(field, Field):
        mesh = field.mesh
        vals = field_on_boundary(field, degree)
    else:
        pts, _ = boundary_quadrature(mesh, degree)
        vals = np.asarray(field(pts.reshape(-1, 3)), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        vals = vals.reshape(pts.shape[0], pts.shape[1], -1)
    _, w = boundary_quadrature(mesh, degree)
    if region is not None:
        idx = mesh.region_faces(region)
        vals, w = vals[idx], w[idx]
    out = np.einsum("fqk,fq->k", vals, w)
    return float(out[0]) if out.shape[0] == 1 else out


def boundary_area(mesh, region=None):
    areas = mesh.boundary_areas()
    if region is not None:
        areas = areas[mesh.region_faces(region)]
    return float(areas.sum())


def boundary_norms_sq(field: Field, degree=2):
    """Boundary L^2 plus facet-tangential first/second derivative surrogates.

    Tangential derivatives project the owner-cell derivatives onto the facet
    plane; second derivatives go through the recovered-gradient surrogate.
    These integer-order facet quantities stand in for the fractional
    boundary norms.
    """
    mesh = field.mesh
    _, w = boundary_quadrature(mesh, degree)
    n = mesh.boundary_normals()
    vals = field_on_boundary(field, degree)
    l2 = float(np.einsum("fqk,fqk,fq->", vals, vals, w))
    g = field_grad_on_boundary(field, degree)
    proj = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
    gt = np.einsum("fqkj,fjl->fqkl", g, proj)
    h1 = float(np.einsum("fqkl,fqkl,fq->", gt, gt, w))
    gradf = diff(field, "grad")
    g2 = field_grad_on_boundary(gradf, degree)
    g2 = g2.reshape(g2.shape[0], g2.shape[1], field.ncomp, 3, 3)
    g2t = np.einsum("fqkij,fim,fjl->fqkml", g2, proj, proj)
    h2 = float(np.einsum("fqkml,fqkml,fq->", g2t, g2t, w))
    return max(l2, 0.0), max(h1, 0.0), max(h2, 0.0)


# --- point evaluation -------------------------------------------------------


class PointLocator:
    """Locate physical points in cells (KD-tree over centroids + bary test)."""

    def __init__(self, mesh, tol=1e-8):
        self.mesh = mesh
        self.tol = tol
        cent = mesh.vertices[mesh.cells].mean(axis=1)
        self.tree = cKDTree(cent)

    def locate(self, pts, k=24):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        cells = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 4))
        kk = min(k, self.mesh.num_cells)
        _, cand = self.tree.query(pts, k=kk)
        cand = np.atleast_2d(cand)
        best = np.full(n, -np.inf)
        for j in range(cand.shape[1]):
            cj = cand[:, j]
            lam = _cell_bary_of_points(self.mesh, cj, pts)
            score = lam.min(axis=1)
            better = score > best
            cells[better] = cj[better]
            bary[better] = lam[better]
            best[better] = score[better]
        inside = best >= -self.tol
        return cells, bary, inside

    def eval_field(self, field: Field, pts):
        cells, lam, inside = self.locate(pts)
        vals = _shape_values(field.order, lam)
        out = np.einsum("nb,nbk->nk", vals, field.data[field.cell_dofs[cells]])
        return out, inside


def point_locator(mesh):
    loc = getattr(mesh, "_locator", None)
    if loc is None:
        loc = mesh._locator = PointLocator(mesh)
    return loc
