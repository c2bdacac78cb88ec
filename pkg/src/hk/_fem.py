"""Vectorized Q1 element kernels and linear-solver plumbing.

Everything here works on structured square grids (periodic unit cell or
Dirichlet unit square) with 2x2 Gauss quadrature per element.  Quadrature
data is laid out as arrays of shape (n_elements, 4, ...); nodal data as
(n_nodes, ...) with fixed row-major node numbering, so all operations are
plain gathers, einsums and scatter-adds.
"""

from functools import partial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, SingularSystem

# contraction with a precomputed (greedy) path: the multi-operand
# assembly einsums are 10x slower without it
contract = partial(np.einsum, optimize=True)

_G0 = 0.5 - 0.5 / np.sqrt(3.0)
_G1 = 0.5 + 0.5 / np.sqrt(3.0)

# Quadrature-point order (2x2 Gauss on the reference square [0,1]^2):
# q = 2*iy + ix over (gx, gy) in {g0, g1}^2.
REF_POINTS = np.array([(gx, gy) for gy in (_G0, _G1) for gx in (_G0, _G1)])
REF_WEIGHTS = np.full(4, 0.25)

# Local node order: counterclockwise from the lower-left corner.
_CORNERS = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def shape_values():
    """Q1 shape functions at the reference quadrature points, (4 qp, 4 node)."""
    gx = REF_POINTS[:, 0][:, None]
    gy = REF_POINTS[:, 1][:, None]
    cx = _CORNERS[:, 0][None, :]
    cy = _CORNERS[:, 1][None, :]
    return (cx * gx + (1 - cx) * (1 - gx)) * (cy * gy + (1 - cy) * (1 - gy))


def shape_gradients():
    """Reference gradients of the Q1 shape functions, (4 qp, 4 node, 2)."""
    gx = REF_POINTS[:, 0][:, None]
    gy = REF_POINTS[:, 1][:, None]
    cx = _CORNERS[:, 0][None, :]
    cy = _CORNERS[:, 1][None, :]
    dx = (2 * cx - 1) * (cy * gy + (1 - cy) * (1 - gy))
    dy = (2 * cy - 1) * (cx * gx + (1 - cx) * (1 - gx))
    return np.stack([dx, dy], axis=-1)


SHAPE = shape_values()
SHAPE_GRAD = shape_gradients()
SHAPE.setflags(write=False)
SHAPE_GRAD.setflags(write=False)


def structured_connectivity(n_cells, periodic):
    """Element-to-node map for an n x n structured grid, shape (n^2, 4).

    Periodic grids identify node index i with i + n (n^2 distinct nodes);
    Dirichlet grids keep (n+1)^2 nodes.
    """
    n = n_cells
    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ex = ex.ravel()
    ey = ey.ravel()
    if periodic:
        def nid(ix, iy):
            return (iy % n) * n + (ix % n)
    else:
        def nid(ix, iy):
            return iy * (n + 1) + ix
    conn = np.stack(
        [nid(ex, ey), nid(ex + 1, ey), nid(ex + 1, ey + 1), nid(ex, ey + 1)],
        axis=-1,
    )
    return np.ascontiguousarray(conn)


def qp_coords(n_cells, h, origin):
    """Physical quadrature-point coordinates, (n_elements, 4, 2)."""
    n = n_cells
    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    corner = np.stack([ex.ravel(), ey.ravel()], axis=-1) * h + np.asarray(origin)
    return corner[:, None, :] + h * REF_POINTS[None, :, :]


def gather(nodal, conn):
    """Nodal values restricted to elements: (nel, 4) or (nel, 4, c)."""
    return nodal[conn]


def qp_values(nodal, conn):
    """Interpolate nodal data to quadrature points.

    Scalar input (nn,) -> (nel, 4); vector input (nn, c) -> (nel, 4, c).
    """
    v = nodal[conn]
    if v.ndim == 2:
        return contract("qa,ea->eq", SHAPE, v)
    return contract("qa,eac->eqc", SHAPE, v)


def qp_gradient(nodal, conn, h):
    """Gradient of a Q1 scalar field at quadrature points, (nel, 4, 2)."""
    return contract("qad,ea->eqd", SHAPE_GRAD, nodal[conn]) / h


def qp_grad_vector(nodal, conn, h):
    """(grad u)_{cd} = d u_c / d x_d at quadrature points, (nel, 4, 2, 2)."""
    return contract("qad,eac->eqcd", SHAPE_GRAD, nodal[conn]) / h


def scatter(n_nodes, conn, per_elem):
    """Accumulate per-element nodal contributions into a global vector.

    per_elem has shape (nel, 4) or (nel, 4, c).
    """
    if per_elem.ndim == 2:
        out = np.zeros(n_nodes)
    else:
        out = np.zeros((n_nodes,) + per_elem.shape[2:])
    np.add.at(out, conn, per_elem)
    return out


def divergence_residual(n_nodes, conn, h, flux):
    """Assemble r_a = sum_e,q w * flux . grad(N_a) from qp flux (nel, 4, 2)."""
    w = h * h * REF_WEIGHTS
    per_elem = contract("q,eqd,qad->ea", w, flux, SHAPE_GRAD) / h
    return scatter(n_nodes, conn, per_elem)


def stress_residual(n_nodes, conn, h, stress):
    """Assemble r_(a,c) = sum w * stress_{cd} d_d N_a from (nel, 4, 2, 2)."""
    w = h * h * REF_WEIGHTS
    per_elem = contract("q,eqcd,qad->eac", w, stress, SHAPE_GRAD) / h
    return scatter(n_nodes, conn, per_elem)


def load_vector_scalar(n_nodes, conn, h, f_qp):
    """Assemble ∫ f N_a from source values at quadrature points (nel, 4)."""
    w = h * h * REF_WEIGHTS
    per_elem = contract("q,eq,qa->ea", w, f_qp, SHAPE)
    return scatter(n_nodes, conn, per_elem)


def load_vector_vec(n_nodes, conn, h, g_qp):
    """Assemble ∫ g . (N_a e_c) from source values (nel, 4, 2)."""
    w = h * h * REF_WEIGHTS
    per_elem = contract("q,eqc,qa->eac", w, g_qp, SHAPE)
    return scatter(n_nodes, conn, per_elem)


def integrate_qp(h, values_qp):
    """Quadrature sum of values given at quadrature points (nel, 4, ...)."""
    w = h * h * REF_WEIGHTS
    return contract("q,eq...->...", w, values_qp)


def lp_norm_qp(h, vec_qp, p):
    """L^p norm of a quadrature-point vector/scalar field."""
    if vec_qp.ndim == 2:
        mag = np.abs(vec_qp)
    else:
        mag = np.sqrt(contract("eq...c,eq...c->eq...", vec_qp, vec_qp))
    w = h * h * REF_WEIGHTS
    return float(contract("q,eq->", w, mag**p) ** (1.0 / p))


def locate_points(points, n_cells, h, origin):
    """Element indices and local coordinates for arbitrary points.

    Points on the far edges are assigned to the last element (local
    coordinate 1), so the closed domain is covered.
    """
    rel = (np.asarray(points, dtype=float) - np.asarray(origin)) / h
    idx = np.clip(np.floor(rel).astype(int), 0, n_cells - 1)
    local = rel - idx
    elem = idx[..., 1] * n_cells + idx[..., 0]
    return elem, local


def shape_at(local):
    """Q1 shape values at arbitrary local coordinates, (..., 4)."""
    gx = local[..., 0][..., None]
    gy = local[..., 1][..., None]
    cx = _CORNERS[:, 0]
    cy = _CORNERS[:, 1]
    return (cx * gx + (1 - cx) * (1 - gx)) * (cy * gy + (1 - cy) * (1 - gy))


def shape_grad_at(local):
    """Reference Q1 gradients at arbitrary local coordinates, (..., 4, 2)."""
    gx = local[..., 0][..., None]
    gy = local[..., 1][..., None]
    cx = _CORNERS[:, 0]
    cy = _CORNERS[:, 1]
    dx = (2 * cx - 1) * (cy * gy + (1 - cy) * (1 - gy))
    dy = (2 * cy - 1) * (cx * gx + (1 - cx) * (1 - gx))
    return np.stack([dx, dy], axis=-1)


def point_eval(nodal, conn, h, n_cells, origin, points):
    """Evaluate a Q1 field at arbitrary points; (...,) or (..., c)."""
    elem, local = locate_points(points, n_cells, h, origin)
    vals = nodal[conn[elem]]
    sh = shape_at(local)
    if vals.ndim == sh.ndim:
        return contract("...a,...a->...", sh, vals)
    return contract("...a,...ac->...c", sh, vals)


def point_eval_gradient(nodal, conn, h, n_cells, origin, points):
    """Gradient of a Q1 scalar field at arbitrary points, (..., 2)."""
    elem, local = locate_points(points, n_cells, h, origin)
    vals = nodal[conn[elem]]
    grad = shape_grad_at(local) / h
    return contract("...ad,...a->...d", grad, vals)


def point_eval_grad_vector(nodal, conn, h, n_cells, origin, points):
    """(grad u)_{cd} of a Q1 vector field at arbitrary points."""
    elem, local = locate_points(points, n_cells, h, origin)
    vals = nodal[conn[elem]]
    grad = shape_grad_at(local) / h
    return contract("...ad,...ac->...cd", grad, vals)


def recovered_gradient(nodal, conn, h, n_nodes):
    """Nodal-averaged gradient of a Q1 scalar field, (n_nodes, 2).

    Element gradients evaluated at the element corners are averaged over
    the elements sharing each node; on uniform grids this reproduces
    central differences at interior nodes, which are second-order
    accurate (one order better than the raw Q1 gradient).
    """
    corner_grad = shape_grad_at(_CORNERS) / h        # (corner, node, 2)
    ge = contract("cad,ea->ecd", corner_grad, nodal[conn])
    out = np.zeros((n_nodes, 2))
    counts = np.zeros(n_nodes)
    np.add.at(out, conn, ge)
    np.add.at(counts, conn, 1.0)
    return out / counts[:, None]


# ---------------------------------------------------------------------------
# Sparse assembly
# ---------------------------------------------------------------------------

def _csr_from_blocks(conn, ke, n_dofs, dofs_per_node=1):
    """Assemble a CSR matrix from per-element blocks.

    ke: (nel, 4*dpn, 4*dpn) dense blocks in local dof order (node-major,
    component-minor).
    """
    nel = conn.shape[0]
    dpn = dofs_per_node
    if dpn == 1:
        dofs = conn
    else:
        dofs = (conn[:, :, None] * dpn + np.arange(dpn)[None, None, :]).reshape(nel, -1)
    nc = dofs.shape[1]
    rows = np.repeat(dofs, nc, axis=1).ravel()
    cols = np.tile(dofs, (1, nc)).ravel()
    mat = sp.coo_matrix((ke.reshape(nel, -1).ravel(), (rows, cols)),
                        shape=(n_dofs, n_dofs))
    return mat.tocsr()


def assemble_diffusion(conn, h, n_nodes, coef_qp):
    """Stiffness for ∫ (D grad u) . grad v with per-qp coefficient.

    coef_qp is (nel, 4) for an isotropic scalar coefficient or
    (nel, 4, 2, 2) for a matrix coefficient.
    """
    w = h * h * REF_WEIGHTS
    g = SHAPE_GRAD / h
    if coef_qp.ndim == 2:
        ke = contract("q,qad,eq,qbd->eab", w, g, coef_qp, g)
    else:
        ke = contract("q,qad,eqdc,qbc->eab", w, g, coef_qp, g)
    return _csr_from_blocks(conn, ke, n_nodes)


def isotropic_elastic_blocks(h, lam_qp, mu_qp):
    """Per-element 8x8 stiffness blocks for isotropic elasticity.

    K[(a,i),(b,j)] = sum_q w [ lam d_iN_a d_jN_b + mu (d_jN_a d_iN_b
                               + delta_ij d_kN_a d_kN_b) ]
    which is the bilinear form of B D(u) : D(v) for B isotropic.
    """
    w = h * h * REF_WEIGHTS
    g = SHAPE_GRAD / h
    eye = np.eye(2)
    ke = (contract("q,eq,qai,qbj->eaibj", w, lam_qp, g, g)
          + contract("q,eq,qaj,qbi->eaibj", w, mu_qp, g, g)
          + contract("q,eq,ij,qak,qbk->eaibj", w, mu_qp, eye, g, g))
    return ke.reshape(ke.shape[0], 8, 8)


def tensor_elastic_blocks(h, b_qp):
    """Per-element 8x8 blocks for a general fourth-order tensor coefficient.

    b_qp: (nel, 4, 2, 2, 2, 2) with flux stress_{ik} = B_{ikjl} D(u)_{jl};
    for B with the usual minor symmetries this equals B_{ikjl} d_l u_j.
    """
    w = h * h * REF_WEIGHTS
    g = SHAPE_GRAD / h
    ke = contract("q,qak,eqikjl,qbl->eaibj", w, g, b_qp, g)
    return ke.reshape(ke.shape[0], 8, 8)


def assemble_elasticity(conn, h, n_nodes, lam_qp=None, mu_qp=None, b_qp=None):
    if b_qp is not None:
        ke = tensor_elastic_blocks(h, b_qp)
    else:
        ke = isotropic_elastic_blocks(h, lam_qp, mu_qp)
    return _csr_from_blocks(conn, ke, 2 * n_nodes, dofs_per_node=2)


def assemble_elasticity_constant(conn, h, n_nodes, tensor):
    """Elastic stiffness for one constant fourth-order tensor coefficient."""
    b_qp = np.broadcast_to(tensor, (1, 4, 2, 2, 2, 2))
    ke = tensor_elastic_blocks(h, b_qp)
    ke = np.broadcast_to(ke, (conn.shape[0], 8, 8))
    return _csr_from_blocks(conn, ke, 2 * n_nodes, dofs_per_node=2)


def apply_isotropic_elasticity(conn, h, n_nodes, lam_qp, mu_qp, u):
    """Matrix-free application of the isotropic elastic operator to u (nn, 2)."""
    grad = qp_grad_vector(u, conn, h)
    strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = strain[..., 0, 0] + strain[..., 1, 1]
    stress = 2.0 * mu_qp[..., None, None] * strain
    stress[..., 0, 0] += lam_qp * tr
    stress[..., 1, 1] += lam_qp * tr
    return stress_residual(n_nodes, conn, h, stress)


def isotropic_elasticity_diagonal(conn, h, n_nodes, lam_qp, mu_qp):
    """Diagonal of the isotropic elastic stiffness (Jacobi preconditioner)."""
    w = h * h * REF_WEIGHTS
    g = SHAPE_GRAD / h
    diag = (contract("q,eq,qai,qai->eai", w, lam_qp, g, g)
            + contract("q,eq,qai,qai->eai", w, mu_qp, g, g)
            + contract("q,eq,qak,qak,i->eai", w, mu_qp, g, g, np.ones(2)))
    out = np.zeros((n_nodes, 2))
    np.add.at(out, conn, diag)
    return out


# ---------------------------------------------------------------------------
# Linear solvers
# ---------------------------------------------------------------------------

def solve_dirichlet(matrix, rhs, free):
    """Direct solve with homogeneous Dirichlet dofs eliminated.

    ``free`` indexes the unconstrained dofs; constrained dofs are zero.
    """
    reduced = matrix[free][:, free].tocsc()
    x = np.zeros(matrix.shape[0])
    try:
        x[free] = spla.splu(reduced).solve(rhs[free])
    except RuntimeError as exc:  # SuperLU signals singularity this way
        raise SingularSystem(str(exc)) from exc
    return x


def solve_periodic_pinned(matrix, rhs, dofs_per_node=1):
    """Direct solve of a periodic (constant-nullspace) system.

    Pins the dofs of node 0, solves the reduced system, then removes the
    per-component mean so solutions are zero-mean.  Assumes the rhs is
    compatible (orthogonal to constants), which holds for divergence-form
    loads.
    """
    n = matrix.shape[0]
    pinned = np.arange(dofs_per_node)
    keep = np.arange(dofs_per_node, n)
    reduced = matrix[keep][:, keep].tocsc()
    x = np.zeros(n)
    try:
        x[keep] = spla.splu(reduced).solve(rhs[keep])
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    x = x.reshape(-1, dofs_per_node)
    x = x - x.mean(axis=0)
    return x.ravel() if dofs_per_node == 1 else x


def pcg(apply_op, rhs, diag, tol=1e-10, max_iter=None, project=None):
    """Preconditioned conjugate gradients with optional nullspace projection.

    apply_op and rhs work on arrays of the rhs shape.  ``project`` removes
    nullspace components (applied to rhs, iterates, and preconditioned
    residuals) so singular periodic systems stay on the orthogonal
    complement.  Returns (x, iterations, relative_residual).
    """
    b = rhs.copy()
    if project is not None:
        b = project(b)
    bnorm = np.sqrt(np.vdot(b, b).real)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if max_iter is None:
        max_iter = 20 * b.size
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = np.vdot(r, z).real
    for k in range(1, max_iter + 1):
        ap = apply_op(p)
        alpha = rz / np.vdot(p, ap).real
        x += alpha * p
        r -= alpha * ap
        rnorm = np.sqrt(np.vdot(r, r).real)
        if rnorm <= tol * bnorm:
            if project is not None:
                x = project(x)
            return x, k, rnorm / bnorm
        z = r / diag
        if project is not None:
            z = project(z)
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(
        f"pcg: no convergence in {max_iter} iterations "
        f"(relative residual {rnorm / bnorm:.3e})",
        residual=rnorm / bnorm, iterations=max_iter)
