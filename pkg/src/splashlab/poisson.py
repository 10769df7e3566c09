"""Dirichlet Poisson solver used for the initial-pressure construction."""

import numpy as np

from .assemble import load_vector, solve_direct, stiffness_matrix
from .fields import Field


def solve_poisson_dirichlet(mesh, rhs, g, order=1) -> Field:
    """Solve -Lap(w) = rhs with w = g on the boundary; returns p = w - 1.

    ``rhs`` is a scalar Field, callable, or per-quadrature array; ``g`` is a
    scalar Field (boundary values read off its boundary dofs) or callable.
    """
    K = stiffness_matrix(mesh, order)
    if isinstance(rhs, Field):
        vals = rhs.at_quadrature(degree=2)[:, :, 0]
        b = load_vector(mesh, order, vals)
    else:
        b = load_vector(mesh, order, rhs)

    coords = mesh.vertices if order == 1 else Field(mesh, "scalar", order).dof_coords
    bverts = mesh.boundary_vertex_ids()
    if order == 1:
        bdofs = bverts
    else:
        edges, _ = mesh.edges()
        bset = set(bverts.tolist())
        bedges = np.nonzero([(int(a) in bset) and (int(b) in bset)
                             for a, b in edges])[0]
        # midpoints of boundary faces' edges only
        fe = set()
        for f in mesh.boundary_faces:
            for i, j in ((0, 1), (0, 2), (1, 2)):
                fe.add((min(f[i], f[j]), max(f[i], f[j])))
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
        bedges = np.array(sorted(lookup[e] for e in fe), dtype=np.int64)
        bdofs = np.concatenate([bverts, mesh.num_vertices + bedges])

    if isinstance(g, Field):
        gvals = g.data[bdofs, 0]
    else:
        gvals = np.asarray(g(coords[bdofs]), dtype=float).ravel()

    ndof = K.shape[0]
    w = np.zeros(ndof)
    w[bdofs] = gvals
    interior = np.setdiff1d(np.arange(ndof), bdofs, assume_unique=False)
    Kii = K[interior][:, interior]
    rhs_i = b[interior] - K[interior][:, bdofs] @ gvals
    w[interior] = solve_direct(Kii, rhs_i, label="poisson")
    return Field(mesh, "scalar", order, w - 1.0)
