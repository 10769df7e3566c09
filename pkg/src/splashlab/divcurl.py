"""Div-curl solver with zero normal trace, as a first-order least-squares
system.

Minimizes ||curl F - G||^2 + ||div F||^2 + (gamma/h) |F.N|^2_boundary over
continuous P1 vector fields, plus a tiny Tikhonov shift for rank safety.
On the simply connected gap domains the associated quadratic form controls
the H1 norm, so the minimizer converges quasi-optimally and every residual
the contract reports decreases under refinement.
"""

from dataclasses import dataclass, field

import numpy as np

from .assemble import (assemble_matrix, boundary_basis, face_scales,
                       mass_matrix, solve_direct, vector_dofs)
from .errors import CompatibilityError
from .fields import (Field, _tet_rule, basis_at, boundary_quadrature,
                     cell_geometry, field_on_boundary)
from .stokes import boundary_normals_at_quadrature


@dataclass
class DivCurlResult:
    F: Field
    residuals: dict = field(default_factory=dict)


def _ls_blocks(mesh, degree=2, div_weight=2.0):
    """Per-cell blocks of curl-curl + weighted div-div for P1 vectors.

    The divergence term carries an h_K^-1 weight: the compatibility ladder
    needs first-order decay of the divergence residual, which a balanced
    functional trades away; the curl residual then converges at half order
    but monotonically, which is all its contract asks.
    """
    _, w, _, grads = basis_at(mesh, 1, degree)
    vol = cell_geometry(mesh).vol
    from .stokes import _cell_edge_scales
    wdiv = div_weight / _cell_edge_scales(mesh)
    gg = np.einsum("cqak,cqbk,q,c->cab", grads, grads, w, vol)
    gij = np.einsum("cqai,cqbj,q,c->caibj", grads, grads, w, vol)
    gij_w = np.einsum("cqai,cqbj,q,c,c->caibj", grads, grads, w, vol, wdiv)
    # (curl phi_a e_i).(curl phi_b e_j) = (grad a . grad b) delta_ij - d_j a d_i b
    # (div  phi_a e_i) (div  phi_b e_j) = d_i a d_j b
    blocks = np.einsum("cab,ij->caibj", gg, np.eye(3))
    blocks -= np.transpose(gij, (0, 1, 4, 3, 2))   # d_j phi_a d_i phi_b
    blocks += gij_w                                # weighted d_i phi_a d_j phi_b
    return blocks.reshape(mesh.num_cells, 12, 12)


def _tangent_frame(normals):
    """Deterministic orthonormal tangent pairs for unit normals (n, 3)."""
    n = normals
    a = np.where(np.abs(n[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]),
                 np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(a, n)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(n, t1)
    return t1, t2


def _trace_eliminator(mesh, normal_fn):
    """Sparse map from reduced dofs (normal components removed at boundary
    vertices) to full interleaved vector dofs."""
    import scipy.sparse as sp
    nv = mesh.num_vertices
    bverts = mesh.boundary_vertex_ids()
    if normal_fn is None:
        # area-weighted facet-normal average at vertices
        n = mesh.boundary_normals()
        acc = np.zeros((nv, 3))
        areas = mesh.boundary_areas()
        for k in range(3):
            np.add.at(acc, mesh.boundary_faces[:, k], n * areas[:, None])
        N = acc[bverts]
        N /= np.linalg.norm(N, axis=1)[:, None]
    else:
        N = np.asarray(normal_fn(mesh.vertices[bverts]), dtype=float)
        N /= np.linalg.norm(N, axis=1)[:, None]
    t1, t2 = _tangent_frame(N)
    is_b = np.zeros(nv, dtype=bool)
    is_b[bverts] = True
    ncols = 3 * (nv - len(bverts)) + 2 * len(bverts)
    rows, cols, vals = [], [], []
    col = 0
    bpos = {int(v): k for k, v in enumerate(bverts)}
    for v in range(nv):
        if is_b[v]:
            k = bpos[v]
            for t in (t1[k], t2[k]):
                rows.extend([3 * v, 3 * v + 1, 3 * v + 2])
                cols.extend([col, col, col])
                vals.extend(t.tolist())
                col += 1
        else:
            for i in range(3):
                rows.append(3 * v + i)
                cols.append(col)
                vals.append(1.0)
                col += 1
    T = sp.coo_matrix((vals, (rows, cols)), shape=(3 * nv, ncols)).tocsr()
    return T


def divcurl_operator(mesh, normal_fn=None, gamma=20.0, tikhonov=1e-10,
                     degree=2):
    """Assemble the least-squares operator with the normal trace eliminated
    strongly at boundary vertices (cached per mesh)."""
    key = (id(normal_fn), gamma, tikhonov, degree)
    cache = getattr(mesh, "_divcurl_ops", None)
    if cache is None:
        cache = mesh._divcurl_ops = {}
    if key in cache:
        return cache[key]
    nu = mesh.num_vertices * 3
    vd = vector_dofs(mesh.cells)
    K = assemble_matrix(mesh, 1, _ls_blocks(mesh, degree), nu, nu, vd, vd)
    _, wq = boundary_quadrature(mesh, degree)
    N = boundary_normals_at_quadrature(mesh, degree, normal_fn)
    T = _trace_eliminator(mesh, normal_fn)
    Kr = (T.T @ K @ T).tocsc()
    M = mass_matrix(mesh, 1, ncomp=3)
    Mr = (T.T @ M @ T).tocsc()
    norm = abs(Kr.diagonal()).max()
    A = (Kr + (tikhonov * norm) * Mr).tocsc()
    op = {"A": A, "T": T, "N": N, "wq": wq, "degree": degree}
    cache[key] = op
    return op


def solve_divcurl(mesh, G, normal_fn=None, gamma=20.0, tikhonov=1e-10,
                  div_tol=None, flux_tol=1e-6, operator=None) -> DivCurlResult:
    """Solve curl F = G, div F = 0, F.N = 0 in the least-squares sense.

    Preconditions: the discrete divergence of G must be small relative to
    its gradient scale and the total boundary flux of G must vanish (single
    boundary component on these domains).
    """
    if not isinstance(G, Field) or G.rank != "vector":
        raise CompatibilityError("G must be a vector Field")
    degree = 2
    op = operator or divcurl_operator(mesh, normal_fn, gamma, tikhonov, degree)

    gq = G.grad_at_quadrature(degree)
    divG = gq[..., 0, 0] + gq[..., 1, 1] + gq[..., 2, 2]
    _, w = _tet_rule(degree)
    vol = cell_geometry(mesh).vol
    div_l2 = float(np.sqrt(max(np.einsum("cq,cq,q,c->", divG, divG, w, vol), 0)))
    grad_l2 = float(np.sqrt(max(np.einsum("cqij,cqij,q,c->", gq, gq, w, vol), 0)))
    Gq0 = G.at_quadrature(degree)
    g_l2 = float(np.sqrt(max(np.einsum("cqk,cqk,q,c->", Gq0, Gq0, w, vol), 0)))
    if div_tol is not None:
        tol = div_tol
    else:
        tol = max(0.5 * grad_l2, 1e-10 * g_l2, 1e-300)
    if div_l2 > tol:
        raise CompatibilityError(
            f"G is not discretely divergence-free: |div G| = {div_l2:.3e} "
            f"> tol {tol:.3e}")
    Gb = field_on_boundary(G, degree)
    flux = float(np.einsum("fqk,fqk,fq->", Gb, op["N"], op["wq"]))
    area = float(op["wq"].sum())
    if abs(flux) > flux_tol * area * max(1.0, float(np.abs(G.data).max())):
        raise CompatibilityError(f"boundary flux of G = {flux:.3e} violates "
                                 "the solvability condition")

    # rhs: int G . curl(phi_a e_i) = int grad(phi_a) . (e_i x G)
    _, wv, _, grads = basis_at(mesh, 1, degree)
    Gq = G.at_quadrature(degree)
    eiG = np.empty((mesh.num_cells, Gq.shape[1], 3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        eiG[:, :, i, :] = np.cross(e, Gq)
    loc = np.einsum("cqak,cqik,q,c->cai", grads, eiG, wv, vol)
    rhs = np.zeros(mesh.num_vertices * 3)
    np.add.at(rhs, vector_dofs(mesh.cells), loc.reshape(mesh.num_cells, -1))

    T = op["T"]
    x = T @ solve_direct(op["A"], T.T @ rhs, label="div-curl")
    Ffield = Field(mesh, "vector", 1, x.reshape(-1, 3))

    res = residual_report(Ffield, G, op)
    res["divG_l2"] = div_l2
    res["fluxG"] = flux
    return DivCurlResult(F=Ffield, residuals=res)


def residual_report(Ffield, G, op):
    mesh = Ffield.mesh
    degree = op["degree"]
    _, w = _tet_rule(degree)
    vol = cell_geometry(mesh).vol
    gF = Ffield.grad_at_quadrature(degree)
    curlF = np.stack([gF[..., 2, 1] - gF[..., 1, 2],
                      gF[..., 0, 2] - gF[..., 2, 0],
                      gF[..., 1, 0] - gF[..., 0, 1]], axis=-1)
    Gq = G.at_quadrature(degree)
    d = curlF - Gq
    curl_res = float(np.sqrt(max(np.einsum("cqk,cqk,q,c->", d, d, w, vol), 0)))
    divF = gF[..., 0, 0] + gF[..., 1, 1] + gF[..., 2, 2]
    div_res = float(np.sqrt(max(np.einsum("cq,cq,q,c->", divF, divF, w, vol), 0)))
    Fb = field_on_boundary(Ffield, degree)
    fn = np.einsum("fqk,fqk->fq", Fb, op["N"])
    trace_max = float(np.abs(fn).max()) if fn.size else 0.0
    trace_l2 = float(np.sqrt((fn * fn * op["wq"]).sum()))
    gnorm = float(np.sqrt(max(np.einsum("cqk,cqk,q,c->", Gq, Gq, w, vol), 0)))
    return {"curl_l2": curl_res, "div_l2": div_res, "trace_max": trace_max,
            "trace_l2": trace_l2, "G_l2": gnorm}
