"""Mixed-boundary Stokes solver: prescribed normal velocity, tangential
traction free.

The impermeability-type condition u . N = a on the whole (curved) boundary
is imposed by a symmetric Nitsche method, using analytic surface normals
when the caller supplies them; the tangential-traction condition is natural
for the doubled-symmetric-gradient form (the bilinear form applied to (u,u)
equals half the squared L2 norm of sym(u)).  Pure-traction kernels (rigid
motions with vanishing boundary-normal component, plus the constant
pressure) are detected numerically and constrained out via bordered rows.

Element pairs: order=2 gives Taylor-Hood P2/P1; order=1 gives equal-order
P1/P1 with Brezzi-Pitkaranta pressure stabilization (used at desk scale on
the large gap domains).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assemble import (assemble_matrix, boundary_basis, face_scales,
                       solve_bordered, vector_dofs)
from .errors import CompatibilityError
from .fields import (Field, basis_at, boundary_quadrature, cell_geometry,
                     dof_setup, field_on_boundary)


@dataclass
class StokesSolution:
    u: Field
    s: Field
    kernel_coefficients: np.ndarray
    residuals: dict = field(default_factory=dict)


def boundary_normals_at_quadrature(mesh, degree=2, normal_fn=None):
    """Unit normals at boundary quadrature points (analytic when given)."""
    pts, _ = boundary_quadrature(mesh, degree)
    if normal_fn is None:
        n = mesh.boundary_normals()
        return np.broadcast_to(n[:, None, :], pts.shape).copy()
    n = np.asarray(normal_fn(pts.reshape(-1, 3)), dtype=float)
    n = n / np.linalg.norm(n, axis=1)[:, None]
    return n.reshape(pts.shape)


def rigid_motion_basis(mesh):
    center = mesh.vertices.mean(axis=0)
    gens = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        gens.append((f"t{k}", lambda x, e=e: np.broadcast_to(e, x.shape).copy()))
    for k in range(3):
        w = np.zeros(3)
        w[k] = 1.0
        gens.append((f"r{k}", lambda x, w=w: np.cross(w, x - center)))
    return gens


def _cell_edge_scales(mesh):
    v = mesh.vertices[mesh.cells]
    e = []
    for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
        e.append(np.linalg.norm(v[:, i] - v[:, j], axis=1))
    return np.max(e, axis=0)


class StokesOperator:
    """Assembled Nitsche-slip Stokes blocks, reusable across right-hand sides."""

    def __init__(self, mesh, order=1, normal_fn=None, gamma=None, beta_stab=0.05,
                 kernel_tol=1e-8):
        degree = 2 * order
        if gamma is None:
            gamma = 25.0 * order * order
        self.mesh = mesh
        self.order = order
        self.degree = degree
        self.gamma = gamma
        self.normal_fn = normal_fn

        coords_u, cdofs_u = dof_setup(mesh, order)
        self.coords_u = coords_u
        self.nu = coords_u.shape[0] * 3
        self.npr = mesh.num_vertices
        vol = cell_geometry(mesh).vol
        _, w, vals_u, grads_u = basis_at(mesh, order, degree)
        _, _, vals_p, _ = basis_at(mesh, 1, degree)
        vd = vector_dofs(cdofs_u)

        # viscous block: int sym(u):grad(phi)
        gg = np.einsum("cqak,cqbk,q,c->cab", grads_u, grads_u, w, vol)
        gij = np.einsum("cqai,cqbj,q,c->caibj", grads_u, grads_u, w, vol)
        nb = grads_u.shape[2]
        kv = np.einsum("cab,ij->caibj", gg, np.eye(3))
        kv = kv + np.transpose(gij, (0, 3, 2, 1, 4))  # + int d_i phi_b d_j phi_a
        K = assemble_matrix(mesh, order, kv.reshape(-1, nb * 3, nb * 3),
                            self.nu, self.nu, vd, vd)

        # pressure rows: -int psi_m d_i phi_a
        dv = -np.einsum("qm,cqai,q,c->cmai", vals_p, grads_u, w, vol)
        B = assemble_matrix(mesh, order, dv.reshape(-1, 4, nb * 3),
                            self.npr, self.nu, mesh.cells, vd)

        # Nitsche face terms
        bvals, bgrads, bcdofs = boundary_basis(mesh, order, degree)
        pvals, _, pcdofs = boundary_basis(mesh, 1, degree)
        _, wq = boundary_quadrature(mesh, degree)
        N = boundary_normals_at_quadrature(mesh, degree, normal_fn)
        self.face_N = N
        hf = face_scales(mesh)
        ndg = np.einsum("fqbk,fqk->fqb", bgrads, N)          # N . grad(phi_b)
        # consistency: -int 2 N_j (N.grad phi_b) phi_a N_i  (+ transpose)
        t1 = -2.0 * np.einsum("fqb,fqj,fqa,fqi,fq->faibj", ndg, N, bvals, N, wq)
        pen = np.einsum("fqa,fqb,fqi,fqj,fq,f->faibj", bvals, bvals, N, N, wq,
                        gamma / hf)
        nitsche = t1 + np.transpose(t1, (0, 3, 4, 1, 2)) + pen
        vfd = vector_dofs(bcdofs)
        nb_f = bvals.shape[2]
        K = K + assemble_matrix(mesh, order,
                                nitsche.reshape(-1, nb_f * 3, nb_f * 3),
                                self.nu, self.nu, vfd, vfd)
        # pressure-velocity Nitsche coupling: + int psi_m phi_b N_j
        cnit = np.einsum("fqm,fqb,fqj,fq->fmbj", pvals, bvals, N, wq)
        B = B + assemble_matrix(mesh, order, cnit.reshape(-1, 4, nb_f * 3),
                                self.npr, self.nu, pcdofs[:, :4], vfd)

        # order-1 pressure stabilization (Brezzi-Pitkaranta)
        if order == 1:
            _, w1, _, gp1 = basis_at(mesh, 1, 1)
            hk2 = _cell_edge_scales(mesh) ** 2
            sblk = beta_stab * np.einsum("cqak,cqbk,q,c,c->cab", gp1, gp1, w1,
                                         vol, hk2)
            S = assemble_matrix(mesh, 1, sblk, self.npr, self.npr,
                                mesh.cells, mesh.cells)
        else:
            S = sp.csr_matrix((self.npr, self.npr))
        self.K, self.B, self.S = K, B, S

        # kernel detection: rigid motions with no boundary-normal component
        pts, _ = boundary_quadrature(mesh, degree)
        flat = pts.reshape(-1, 3)
        self.kernel = []
        area = wq.sum()
        from .assemble import mass_matrix
        Mv = mass_matrix(mesh, order, ncomp=3)
        self.mass_v = Mv
        for name, fn in rigid_motion_basis(mesh):
            mv = fn(flat).reshape(N.shape)
            num = np.einsum("fqk,fqk->fq", mv, N) ** 2
            den = np.einsum("fqk,fqk->fq", mv, mv)
            rho = float((num * wq).sum() / max((den * wq).sum(), 1e-300))
            if rho < kernel_tol:
                vec = fn(coords_u).ravel()
                self.kernel.append((name, vec))
        # constraint rows: kernel L2-orthogonality + mean pressure
        rows = [Mv @ vec for _, vec in self.kernel]
        ones = np.ones(self.npr)
        from .assemble import mass_matrix as _mm
        Mp = _mm(mesh, 1, ncomp=1)
        self.mass_p = Mp
        self.pressure_mean_row = Mp @ ones
        self.constraints = rows
        self.area = float(area)
        self._matrix = None

    def matrix(self):
        if self._matrix is None:
            A = sp.bmat([[self.K, self.B.T], [self.B, -self.S]], format="csr")
            rows = []
            for vec in self.constraints:
                r = np.zeros(self.nu + self.npr)
                r[:self.nu] = vec
                rows.append(r)
            r = np.zeros(self.nu + self.npr)
            r[self.nu:] = self.pressure_mean_row
            rows.append(r)
            C = sp.csr_matrix(np.array(rows))
            self._matrix = (A, C)
        return self._matrix

    def boundary_data_rhs(self, a_q):
        """RHS from normal-velocity data sampled at boundary quadrature."""
        bvals, bgrads, bcdofs = boundary_basis(self.mesh, self.order, self.degree)
        pvals, _, pcdofs = boundary_basis(self.mesh, 1, self.degree)
        _, wq = boundary_quadrature(self.mesh, self.degree)
        N = self.face_N
        hf = face_scales(self.mesh)
        ndg = np.einsum("fqbk,fqk->fqb", bgrads, N)
        loc_u = np.einsum("fq,fqa,fqi,fq,f->fai", a_q, bvals, N, wq,
                          self.gamma / hf)
        loc_u -= 2.0 * np.einsum("fq,fqa,fqi,fq->fai", a_q, ndg, N, wq)
        f_u = np.zeros(self.nu)
        np.add.at(f_u, vector_dofs(bcdofs), loc_u.reshape(len(hf), -1))
        loc_p = np.einsum("fq,fqm,fq->fm", a_q, pvals, wq)
        f_p = np.zeros(self.npr)
        np.add.at(f_p, pcdofs[:, :4], loc_p)
        return np.concatenate([f_u, f_p])


def sample_boundary_data(mesh, a, degree):
    """Normal-velocity data at boundary quadrature points."""
    if isinstance(a, Field):
        return field_on_boundary(a, degree)[:, :, 0]
    pts, _ = boundary_quadrature(mesh, degree)
    return np.asarray(a(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[:2])


def solve_stokes_mixed(mesh, a, order=1, normal_fn=None, gamma=None,
                       beta_stab=0.05, operator=None,
                       flux_tol=1e-8) -> StokesSolution:
    """Solve the slip Stokes problem with prescribed normal velocity ``a``.

    Requires the compatibility condition \int a dS = 0 (within flux_tol
    times the boundary area); rigid motions without boundary-normal
    component are removed by L2-orthogonality constraints.
    """
    op = operator or StokesOperator(mesh, order=order, normal_fn=normal_fn,
                                    gamma=gamma, beta_stab=beta_stab)
    a_q = sample_boundary_data(mesh, a, op.degree)
    _, wq = boundary_quadrature(mesh, op.degree)
    flux = float((a_q * wq).sum())
    if abs(flux) > flux_tol * op.area:
        raise CompatibilityError(
            f"normal-velocity data has flux defect {flux:.3e} "
            f"(tolerance {flux_tol * op.area:.3e}): incompatible with "
            "incompressibility")
    A, C = op.matrix()
    rhs = op.boundary_data_rhs(a_q)
    x, mult = solve_bordered(A, C, rhs, label="stokes")
    u_data = x[:op.nu].reshape(-1, 3)
    s_data = x[op.nu:op.nu + op.npr]
    u = Field(mesh, "vector", op.order, u_data)
    s = Field(mesh, "scalar", 1, s_data)

    res = {}
    res["algebraic"] = float(np.linalg.norm(A @ x - rhs + C.T @ mult)
                             / max(np.linalg.norm(rhs), 1e-300))
    res["constraint_rows"] = float(np.linalg.norm(C @ x))
    # boundary condition residual u.N - a at quadrature points
    un = np.einsum("fqk,fqk->fq", _vector_on_boundary(u, op.degree), op.face_N)
    res["slip_max"] = float(np.abs(un - a_q).max())
    res["slip_l2"] = float(np.sqrt((((un - a_q) ** 2) * wq).sum()))
    res["div_l2"] = _div_l2(u)
    return StokesSolution(u=u, s=s,
                          kernel_coefficients=np.asarray(mult[:len(op.kernel)]),
                          residuals=res)


def _vector_on_boundary(u, degree):
    vals = field_on_boundary(u, degree)
    return vals


def _div_l2(u):
    from .fields import _tet_rule
    mesh = u.mesh
    g = u.grad_at_quadrature(2)
    div = g[..., 0, 0] + g[..., 1, 1] + g[..., 2, 2]
    _, w = _tet_rule(2)
    vol = cell_geometry(mesh).vol
    return float(np.sqrt(max(np.einsum("cq,cq,q,c->", div, div, w, vol), 0.0)))


def tangential_traction_residual(sol: StokesSolution, op: StokesOperator):
    """Max and L2 norm of [sym(u) N] x N on the boundary (natural-BC check)."""
    from .fields import field_grad_on_boundary
    mesh = sol.u.mesh
    g = field_grad_on_boundary(sol.u, op.degree)
    N = op.face_N
    sym = g + np.swapaxes(g, -1, -2)
    tN = np.einsum("fqij,fqj->fqi", sym, N)
    tt = np.cross(tN, N)
    mag = np.sqrt(np.einsum("fqi,fqi->fq", tt, tt))
    _, wq = boundary_quadrature(mesh, op.degree)
    return float(mag.max()), float(np.sqrt((mag ** 2 * wq).sum()))
