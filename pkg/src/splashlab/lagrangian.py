"""Lagrangian pullback calculus on discrete flow maps.

The cofactor inverse A = (grad eta)^-1 is evaluated pointwise from cross
products of the deformation-gradient columns.  Pullback derivatives are
exact cellwise polynomial calculus; chained (second-order) pullbacks pass
through a nodally recovered intermediate field, so the residual quantities
below measure the integrability defect of the discrete deformation rather
than returning identically zero.
"""

import numpy as np

from .errors import GeometryError, InversionError, OperatorError
from .fields import (Field, basis_at, cell_geometry, diff, nodal_recovery,
                     _tet_rule)


def cofactor_at(grad_eta):
    """Cofactor inverse and determinant of deformation gradients.

    grad_eta: (..., 3, 3) with entries (grad eta)[i, j] = d_j eta_i.
    Rows of A are cross products of the columns of grad eta, divided by J.
    """
    g = np.asarray(grad_eta, dtype=float)
    c1, c2, c3 = g[..., :, 0], g[..., :, 1], g[..., :, 2]
    r1 = np.cross(c2, c3)
    r2 = np.cross(c3, c1)
    r3 = np.cross(c1, c2)
    J = np.einsum("...i,...i->...", c1, r1)
    A = np.stack([r1, r2, r3], axis=-2) / J[..., None, None]
    return A, J


def cofactor_inverse(grad_eta: Field):
    """Pointwise (A, J) fields from a deformation-gradient tensor field.

    Raises InversionError naming the first offending dof when J <= 0
    anywhere (mesh tangling).
    """
    if grad_eta.rank != "tensor":
        raise OperatorError("cofactor_inverse needs a tensor field")
    g = grad_eta.data.reshape(-1, 3, 3)
    A, J = cofactor_at(g)
    if (J <= 0).any():
        bad = int(np.argmin(J))
        raise InversionError(
            f"det(grad eta) = {J[bad]:.3e} <= 0 at dof {bad} "
            f"(x = {grad_eta.dof_coords[bad]})", cell=bad)
    mesh, order = grad_eta.mesh, grad_eta.order
    return (Field(mesh, "tensor", order, A.reshape(-1, 9)),
            Field(mesh, "scalar", order, J))


def grad_eta_q(eta: Field, degree=2):
    """Deformation gradient at quadrature points: (nc, nq, 3, 3)."""
    return eta.grad_at_quadrature(degree)


def state_cofactor(eta: Field, degree=2):
    """(A, J) at quadrature points; InversionError names the cell on J <= 0."""
    g = grad_eta_q(eta, degree)
    A, J = cofactor_at(g)
    if (J <= 0).any():
        cell = int(np.argwhere(J <= 0)[0][0])
        raise InversionError(f"non-positive Jacobian in cell {cell} "
                             f"(min J = {J.min():.3e})", cell=cell)
    return A, J


def pullback_grad_q(A_q, f: Field, degree=2):
    """(d^eta_j f_i) at quadrature points: contraction A_kj d_k f_i."""
    gf = f.grad_at_quadrature(degree)              # (nc, nq, ncomp, 3)
    return np.einsum("cqkj,cqik->cqij", A_q, gf)


def pullback_grad(A: Field, f: Field) -> Field:
    """Pullback gradient as a recovered nodal field.

    For scalars returns the vector (d^eta_j f); for vectors the tensor
    (d^eta_j f_i) in row convention.
    """
    if A.rank != "tensor":
        raise OperatorError("A must be a tensor field")
    if f.rank == "tensor":
        raise OperatorError("pullback_grad supports scalar and vector fields")
    mesh = f.mesh
    Aq = A.at_quadrature(degree=1).reshape(mesh.num_cells, 1, 3, 3)
    gq = pullback_grad_q(Aq, f, degree=1)[:, 0]    # (nc, ncomp, 3)
    cv = gq.reshape(mesh.num_cells, -1)
    nodal = nodal_recovery(mesh, cv)
    rank = "vector" if f.rank == "scalar" else "tensor"
    if f.order == 1:
        return Field(mesh, rank, 1, nodal if rank == "tensor" else nodal)
    edges, _ = mesh.edges()
    data = np.vstack([nodal, 0.5 * (nodal[edges[:, 0]] + nodal[edges[:, 1]])])
    return Field(mesh, rank, 2, data)


def div_eta_q(A_q, v: Field, degree=2):
    g = pullback_grad_q(A_q, v, degree)
    return g[..., 0, 0] + g[..., 1, 1] + g[..., 2, 2]


def sym_eta_q(A_q, v: Field, degree=2):
    """Doubled symmetric pullback gradient: d^eta_j v_i + d^eta_i v_j."""
    g = pullback_grad_q(A_q, v, degree)
    return g + np.swapaxes(g, -1, -2)


def curl_eta_q(A_q, v: Field, degree=2):
    g = pullback_grad_q(A_q, v, degree)  # g[i, j] = d^eta_j v_i
    return np.stack([g[..., 2, 1] - g[..., 1, 2],
                     g[..., 0, 2] - g[..., 2, 0],
                     g[..., 1, 0] - g[..., 0, 1]], axis=-1)


def _recover_like(f: Field, quad_cell_means, ncomp):
    """Cell means -> nodal field with f's order (edge dofs by midpoint avg)."""
    mesh = f.mesh
    nodal = nodal_recovery(mesh, quad_cell_means)
    if f.order == 1:
        data = nodal
    else:
        edges, _ = mesh.edges()
        data = np.vstack([nodal, 0.5 * (nodal[edges[:, 0]] + nodal[edges[:, 1]])])
    return data


def _l2_of_quad(mesh, vals, degree):
    _, w = _tet_rule(degree)
    vol = cell_geometry(mesh).vol
    sq = (vals * vals).reshape(vals.shape[0], vals.shape[1], -1).sum(axis=2)
    return float(np.sqrt(max(np.einsum("cq,q,c->", sq, w, vol), 0.0)))


def piola_residual(A: Field) -> float:
    """Max over quadrature points of |d_k A_ki| (the Piola identity defect).

    Exactly zero for constant deformation gradients; for smooth
    volume-preserving maps it converges to zero at first order.
    """
    degree = 2
    g = A.grad_at_quadrature(degree)  # (nc, nq, 9, 3): d_d A_(3i+k)
    nc, nq = g.shape[:2]
    g = g.reshape(nc, nq, 3, 3, 3)    # (nc, nq, k, i, d): d_d A_{ki}
    div_cols = np.einsum("cqkik->cqi", g)
    return float(np.abs(div_cols).max())


def commutator_residual(A: Field, f: Field, degree=2) -> float:
    """max_{i<j} ||(d^eta_j d^eta_i - d^eta_i d^eta_j) f||_L2.

    The symmetric second-derivative contribution cancels identically, so
    the residual equals the antisymmetric part of A (grad A) grad f with
    grad A taken from the nodally recovered A field: the integrability
    defect of the discrete pullback.  Identically zero when A is constant.
    """
    if f.rank == "tensor":
        raise OperatorError("commutator_residual supports scalar/vector f")
    mesh = f.mesh
    Aq = A.at_quadrature(degree).reshape(mesh.num_cells, -1, 3, 3)
    gA = A.grad_at_quadrature(degree)            # (nc, nq, 9, d) = d_d A_{li}
    gA = gA.reshape(mesh.num_cells, -1, 3, 3, 3)  # (c, q, l, i, d)
    gf = f.grad_at_quadrature(degree)            # (c, q, m, l)
    # T[m, i, j] = A_kj (d_k A_li) (d_l f_m)
    T = np.einsum("cqkj,cqlik,cqml->cqmij", Aq, gA, gf)
    R = T - np.swapaxes(T, -1, -2)
    worst = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            worst = max(worst, _l2_of_quad(mesh, R[..., :, i, j], degree))
    return worst


def pullback_grad_two_pass(A: Field, f: Field, degree=2):
    """Second pullback gradient d^eta_b (d^eta_a f_i) via a recovered
    intermediate field: (nc, nq, ncomp, a, b)."""
    mesh = f.mesh
    Aq1 = A.at_quadrature(degree=1).reshape(mesh.num_cells, 1, 3, 3)
    g1 = pullback_grad_q(Aq1, f, degree=1)[:, 0]           # (nc, ncomp, 3)
    data = _recover_like(f, g1.reshape(mesh.num_cells, -1), f.ncomp * 3)
    Aq = A.at_quadrature(degree).reshape(mesh.num_cells, -1, 3, 3)
    _, _, _, grads = basis_at(mesh, f.order, degree)
    gg = np.einsum("cqbk,cbm->cqmk", grads, data[f.cell_dofs])  # d_k of comps
    h = np.einsum("cqkb,cqmk->cqmb", Aq, gg)                   # d^eta_b
    nc, nq = h.shape[:2]
    return h.reshape(nc, nq, f.ncomp, 3, 3)


def laplacian_identity_residual(A: Field, v: Field, degree=2) -> float:
    """||Delta^eta v - div^eta sym^eta v||_L2 via chained pullbacks.

    Contract: tends to zero under refinement when the pullback-divergence
    residual of v does.
    """
    if v.rank != "vector":
        raise OperatorError("laplacian_identity_residual needs a vector field")
    mesh = v.mesh
    H = pullback_grad_two_pass(A, v, degree)       # (c, q, i, a, b)
    lap = np.einsum("cqiaa->cqi", H)
    # div^eta of the recovered sym^eta v field
    Aq1 = A.at_quadrature(degree=1).reshape(mesh.num_cells, 1, 3, 3)
    g1 = pullback_grad_q(Aq1, v, degree=1)[:, 0]
    S = g1 + np.swapaxes(g1, -1, -2)
    Sdata = _recover_like(v, S.reshape(mesh.num_cells, 9), 9)
    Aq = A.at_quadrature(degree).reshape(mesh.num_cells, -1, 3, 3)
    _, _, _, grads = basis_at(mesh, v.order, degree)
    gS = np.einsum("cqbk,cbm->cqmk", grads, Sdata[v.cell_dofs])
    gS = gS.reshape(mesh.num_cells, -1, 3, 3, 3)   # (c, q, i, j, k) = d_k S_ij
    divS = np.einsum("cqkj,cqijk->cqi", Aq, gS)
    return _l2_of_quad(mesh, lap - divS, degree)


def div_eta_residual(A: Field, v: Field, degree=2) -> float:
    """||div^eta v||_L2 (the tau_div check used as a precondition)."""
    mesh = v.mesh
    Aq = A.at_quadrature(degree).reshape(mesh.num_cells, -1, 3, 3)
    return _l2_of_quad(mesh, div_eta_q(Aq, v, degree), degree)


def push_normal(A, N):
    """Deformed unit normal n = A^T N / |A^T N| (vectorized).

    A: (..., 3, 3), N: (..., 3).  Raises on |A^T N| < 1e-10 (collapse).
    """
    A = np.asarray(A, dtype=float)
    N = np.asarray(N, dtype=float)
    out = np.einsum("...ij,...i->...j", A, N)
    mag = np.sqrt(np.einsum("...j,...j->...", out, out))
    if np.any(mag < 1e-10):
        raise GeometryError("pushed normal collapsed: |A^T N| < 1e-10")
    return out / mag[..., None]
