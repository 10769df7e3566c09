"""Sparse assembly helpers shared by the elliptic solvers and the stepper.

Vector dofs are interleaved (dof = 3*node + component).  All assemblers
build COO triplets with vectorized einsums over cells or boundary faces and
return CSR matrices; constraint rows are handled by bordered solves.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearAlgebraError
from .fields import (_cell_bary_of_points, _shape_grads_bary, _shape_values,
                     _tet_rule, basis_at, boundary_quadrature, cell_geometry,
                     dof_setup)


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                         shape=shape).tocsr()


def assemble_matrix(mesh, order, blocks, nrow_dof, ncol_dof, row_dofs, col_dofs):
    """General rectangular assembly from per-entity local blocks."""
    ne, nr, ncl = blocks.shape
    rows = np.repeat(row_dofs[:, :, None], ncl, axis=2)
    cols = np.repeat(col_dofs[:, None, :], nr, axis=1)
    return _coo(rows, cols, blocks, (nrow_dof, ncol_dof))


def vector_dofs(cell_dofs):
    """(ne, 3*nb) interleaved vector dof map, basis-major."""
    return (cell_dofs[:, :, None] * 3 + np.arange(3)[None, None, :]).reshape(
        cell_dofs.shape[0], -1)


def mass_matrix(mesh, order=1, ncomp=1, degree=None):
    if degree is None:
        degree = 2 * order
    _, w, vals, _ = basis_at(mesh, order, degree)
    vol = cell_geometry(mesh).vol
    blocks = np.einsum("qa,qb,q,c->cab", vals, vals, w, vol)
    coords, cdofs = dof_setup(mesh, order)
    ndof = coords.shape[0] * ncomp
    if ncomp == 1:
        return assemble_matrix(mesh, order, blocks, ndof, ndof, cdofs, cdofs)
    nb = cdofs.shape[1]
    big = np.zeros((mesh.num_cells, nb * ncomp, nb * ncomp))
    for k in range(ncomp):
        big[:, k::ncomp, k::ncomp] = blocks
    vd = (cdofs[:, :, None] * ncomp + np.arange(ncomp)[None, None, :]).reshape(
        mesh.num_cells, -1)
    return assemble_matrix(mesh, order, big, ndof, ndof, vd, vd)


def stiffness_matrix(mesh, order=1, degree=None):
    if degree is None:
        degree = max(2 * (order - 1), 1)
    _, w, _, grads = basis_at(mesh, order, degree)
    vol = cell_geometry(mesh).vol
    blocks = np.einsum("cqak,cqbk,q,c->cab", grads, grads, w, vol)
    coords, cdofs = dof_setup(mesh, order)
    ndof = coords.shape[0]
    return assemble_matrix(mesh, order, blocks, ndof, ndof, cdofs, cdofs)


def load_vector(mesh, order, fn_or_values, degree=2):
    """RHS vector ∫ f phi for scalar data (callable or per-quad array)."""
    lam, w = _tet_rule(degree)
    _, _, vals, _ = basis_at(mesh, order, degree)
    vol = cell_geometry(mesh).vol
    pts = np.einsum("ql,clk->cqk", lam, mesh.vertices[mesh.cells])
    if callable(fn_or_values):
        f = np.asarray(fn_or_values(pts.reshape(-1, 3))).reshape(pts.shape[0],
                                                                 pts.shape[1])
    else:
        f = fn_or_values
    coords, cdofs = dof_setup(mesh, order)
    cellvec = np.einsum("cq,qa,q,c->ca", f, vals, w, vol)
    out = np.zeros(coords.shape[0])
    np.add.at(out, cdofs, cellvec)
    return out


def boundary_basis(mesh, order, degree=2):
    """Owner-cell basis values and physical gradients at boundary quadrature
    points: values (nbf, nq, nb), grads (nbf, nq, nb, 3), cell dof map."""
    cache = getattr(mesh, "_bb_cache", None)
    if cache is None:
        cache = mesh._bb_cache = {}
    key = (order, degree)
    if key not in cache:
        pts, _ = boundary_quadrature(mesh, degree)
        nbf, nq = pts.shape[:2]
        cells = np.repeat(mesh.boundary_cells, nq)
        lam = _cell_bary_of_points(mesh, cells, pts.reshape(-1, 3))
        vals = _shape_values(order, lam)
        gb = _shape_grads_bary(order, lam)
        bg = cell_geometry(mesh).bary_grads[cells]
        grads = np.einsum("nbl,nlk->nbk", gb, bg)
        nb = vals.shape[1]
        _, cdofs = dof_setup(mesh, order)
        cache[key] = (vals.reshape(nbf, nq, nb), grads.reshape(nbf, nq, nb, 3),
                      cdofs[mesh.boundary_cells])
    return cache[key]


def face_scales(mesh):
    """Per-boundary-face length scale (longest edge)."""
    t = mesh.vertices[mesh.boundary_faces]
    e = np.stack([t[:, 1] - t[:, 0], t[:, 2] - t[:, 1], t[:, 0] - t[:, 2]], axis=1)
    return np.sqrt(np.einsum("fek,fek->fe", e, e)).max(axis=1)


def solve_direct(A, b, label="system"):
    """Deterministic sparse direct solve with a residual sanity check."""
    A = A.tocsc()
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except Exception as exc:  # singular matrix, memory failures
        raise LinearAlgebraError(f"direct solve of {label} failed: {exc}") from exc
    if b.ndim == 1:
        nrm = np.linalg.norm(b)
        res = np.linalg.norm(A @ x - b) / (nrm if nrm > 0 else 1.0)
        if not np.isfinite(res) or res > 1e-6:
            raise LinearAlgebraError(
                f"direct solve of {label}: relative residual {res:.2e}",
                residual_history=[res])
    return x


def solve_bordered(K, C, f, g=None, label="system"):
    """Solve [[K, C^T], [C, 0]] [x, y] = [f, g] (constraint rows C)."""
    m = C.shape[0] if C is not None else 0
    if m == 0:
        return solve_direct(K, f, label), np.zeros(0)
    g = np.zeros(m) if g is None else g
    Z = sp.coo_matrix((m, m))
    A = sp.bmat([[K, C.T], [C, Z]], format="csc")
    sol = solve_direct(A, np.concatenate([f, g]), label)
    return sol[:K.shape[0]], sol[K.shape[0]:]


def minres_solve(A, b, tol=1e-9, maxiter=2000, label="system"):
    """Symmetric iterative fallback with diagonal preconditioning."""
    d = np.abs(A.diagonal())
    d[d == 0] = 1.0
    M = sp.diags(1.0 / d)
    hist = []

    def cb(xk):
        hist.append(float(np.linalg.norm(A @ xk - b)))

    x, info = spla.minres(A, b, rtol=tol, maxiter=maxiter, M=M, callback=cb)
    if info != 0:
        raise LinearAlgebraError(f"MINRES on {label} did not converge "
                                 f"(info={info})", residual_history=hist)
    return x
