"""Effective-system solves and first-order corrector reconstruction.

The macroscopic electrostatic problem is solved by Newton iteration on
the effective flux law, whose Jacobian comes from central differences
(the law has no closed-form derivative).  Every residual evaluation asks
the law for effective fluxes at all quadrature points, which for general
laws means one cell solve per quadrature point; warm starts and the
law's exact-key cache keep that affordable on study-sized grids.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import _fem
from ._fem import contract as _contract
from .cell_problems import SolverOptions
from .core_fields import CellGrid, DomainGrid, ScalarField, VectorField
from .errors import NonConvergence
from .fine_scale import _source_at_qp


@dataclass
class MacroOptions:
    tol: float = 1e-9
    max_iter: int = 60
    max_linesearch: int = 20
    jac_refresh: int = 4        # recompute the finite-difference Jacobian
                                # every this many Newton iterations


@dataclass
class HomogenizedSolution:
    potential: ScalarField
    residual: float
    iterations: int
    residual_history: list = field(default_factory=list)


def _grad_flat(phi, domain):
    return _fem.qp_gradient(phi, domain.conn, domain.h).reshape(-1, 2)


def solve_homogenized_electrostatic(law, f, domain, opts=None):
    """Solve ∫ a_hom(grad phi) . grad v = ∫ f v on the unit square.

    Linear laws reduce to a single sparse solve with the constant
    effective matrix.  Otherwise: damped Newton with a periodically
    refreshed finite-difference Jacobian (monotonicity makes the Newton
    direction a descent direction for the residual).
    """
    opts = opts or MacroOptions()
    f_qp = _source_at_qp(f, domain)
    rhs = _fem.load_vector_scalar(domain.n_nodes, domain.conn, domain.h, f_qp)
    free = domain.interior
    nel = domain.n_elems

    def residual(phi, warm=None):
        flux = law.eval_batch(_grad_flat(phi, domain), warm=warm)
        r = _fem.divergence_residual(domain.n_nodes, domain.conn, domain.h,
                                     flux.reshape(nel, 4, 2)) - rhs
        return r

    if law.mode == "linear":
        coef = np.broadcast_to(law.matrix, (nel, 4, 2, 2))
        matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                         domain.n_nodes, coef)
        phi = _fem.solve_dirichlet(matrix, rhs, free)
        rnorm = float(np.linalg.norm(residual(phi)[free]))
        return HomogenizedSolution(ScalarField(domain, phi), rnorm, 1, [rnorm])

    # initial iterate: identity-coefficient surrogate, rescaled to match
    # the flux magnitude when the law is homogeneous (a(s xi) = s^g a(xi))
    eye = np.broadcast_to(np.eye(2), (nel, 4, 2, 2))
    matrix = _fem.assemble_diffusion(domain.conn, domain.h, domain.n_nodes, eye)
    phi = _fem.solve_dirichlet(matrix, rhs, free)
    gamma = law.spec.homogeneity_degree
    if gamma is not None and gamma != 1.0:
        flux0 = law.eval_batch(_grad_flat(phi, domain)).reshape(nel, 4, 2)
        rflux = _fem.divergence_residual(domain.n_nodes, domain.conn,
                                         domain.h, flux0)
        num = float(rflux[free] @ rhs[free])
        den = float(rflux[free] @ rflux[free])
        if num > 0.0 and den > 0.0:
            phi = phi * (num / den) ** (1.0 / gamma)

    warm = None
    res = residual(phi)
    rnorm = float(np.linalg.norm(res[free]))
    history = [rnorm]
    lu_matrix = None
    iterations = 0
    for it in range(opts.max_iter):
        if rnorm <= opts.tol:
            break
        if lu_matrix is None or it % opts.jac_refresh == 0:
            grads = _grad_flat(phi, domain)
            if law.mode == "general" and law._batch is not None:
                warm = law.solutions_for(grads, warm=warm)
            jac = law.jacobian_batch(grads, warm=warm).reshape(nel, 4, 2, 2)
            matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                             domain.n_nodes, jac)
            lu_matrix = spla.splu(matrix[free][:, free].tocsc())
        step = np.zeros(domain.n_nodes)
        step[free] = lu_matrix.solve(-res[free])
        t = 1.0
        for _ in range(opts.max_linesearch):
            cand = phi + t * step
            res_c = residual(cand, warm=warm)
            rn_c = float(np.linalg.norm(res_c[free]))
            if rn_c <= (1.0 - 1e-4 * t) * rnorm:
                break
            t *= 0.5
        phi, res, rnorm = cand, res_c, rn_c
        history.append(rnorm)
        iterations += 1
    if rnorm > opts.tol:
        raise NonConvergence(
            f"homogenized electrostatic solve: residual {rnorm:.3e} after "
            f"{iterations} iterations", residual=rnorm, iterations=iterations)
    return HomogenizedSolution(ScalarField(domain, phi), rnorm, iterations,
                               history)


# ---------------------------------------------------------------------------
# Corrector reconstruction
# ---------------------------------------------------------------------------

@dataclass
class CorrectorData:
    """Cell corrector solutions attached to macroscopic quadrature points.

    ``loadings[k]`` is the macroscopic gradient at sample quadrature
    point k; ``potentials[k]`` the zero-mean periodic cell potential
    solved at exactly that loading (no merging of nearby loadings).  The
    corrector gradient at (x, y) is read off by Q1 differentiation of the
    potential attached to the sample point of x.
    """

    sample_grid: DomainGrid
    cell_grid: CellGrid
    loadings: np.ndarray        # (K, 2), K = 4 * sample_grid.n_elems
    potentials: np.ndarray      # (K, n_cell_nodes)
    cell_residuals: np.ndarray  # (K,)
    identity_residuals: np.ndarray  # (K,)

    def grad_y(self, sample_idx, elem_idx, qp_idx):
        """Corrector gradient values grad_y phi1 for index triples.

        sample_idx selects the attached cell potential, (elem_idx, qp_idx)
        the unit-cell quadrature point.  Vectorized over all inputs.
        """
        conn = self.cell_grid.conn[elem_idx]
        vals = self.potentials[sample_idx[:, None], conn]
        grad_ref = _fem.SHAPE_GRAD[qp_idx]
        return _contract("mad,ma->md", grad_ref, vals) / self.cell_grid.h

    def grad_y_fields(self, sample_idx):
        """Full corrector gradient fields (len(idx), nel_c, 4, 2)."""
        conn = self.cell_grid.conn
        vals = self.potentials[np.asarray(sample_idx)[:, None], conn.ravel()]
        vals = vals.reshape(len(sample_idx), conn.shape[0], 4)
        return _contract("qad,kea->keqd", _fem.SHAPE_GRAD, vals) / self.cell_grid.h


def macroscopic_gradient_field(phi0):
    """Nodal-averaged (recovered) gradient of the effective potential.

    Second-order accurate at interior nodes; used by the sweep studies so
    the corrector error floor is not dominated by the raw Q1 gradient
    error of the effective solve.
    """
    g = phi0.grid
    vals = _fem.recovered_gradient(phi0.values, g.conn, g.h, g.n_nodes)
    return VectorField(g, vals)


def _gradient_at(phi0, gradient_field, pts):
    if gradient_field is not None:
        g = gradient_field.grid
        return _fem.point_eval(gradient_field.values, g.conn, g.h, g.n,
                               g.origin, pts)
    g = phi0.grid
    return _fem.point_eval_gradient(phi0.values, g.conn, g.h, g.n,
                                    g.origin, pts)


def reconstruct_phi1(law, phi0, cell_grid, sample_grid=None,
                     gradient_field=None):
    """Per-quadrature-point corrector gradients from cached cell solves.

    The corrector gradient at (x, y) is p(y, grad phi0(x)) - grad phi0(x);
    here the macroscopic gradient is sampled at the quadrature points of
    ``sample_grid`` (default: the grid phi0 was solved on) and one cell
    solve is attached to each.  ``gradient_field`` optionally replaces
    the raw Q1 gradient of phi0 (e.g. the recovered gradient).  Means
    over the unit cell vanish because the attached potentials are
    periodic.
    """
    sample_grid = sample_grid or phi0.grid
    pts = sample_grid.qp_coords().reshape(-1, 2)
    loadings = _gradient_at(phi0, gradient_field, pts)
    potentials = law.solutions_for(loadings)
    if law.mode == "general" and law._batch is not None:
        batch = law._batch
        from .cell_problems import BatchCellResult
        result = BatchCellResult(loadings, potentials,
                                 np.zeros(len(loadings)),
                                 np.zeros(len(loadings), dtype=int),
                                 np.ones(len(loadings), dtype=bool))
        identity = batch.identity_residuals(result)
        residuals = _batch_cell_residuals(law, result)
    else:
        identity = np.zeros(len(loadings))
        residuals = np.zeros(len(loadings))
    return CorrectorData(sample_grid, law.grid, loadings, potentials,
                         residuals, identity)


def _batch_cell_residuals(law, result):
    """Weak-form cell residual norms for a batch of attached solutions."""
    batch = law._batch
    out = np.zeros(result.loadings.shape[0])
    for start in range(0, out.shape[0], batch.chunk):
        sl = slice(start, min(start + batch.chunk, out.shape[0]))
        res = batch._residual(result.loadings[sl], result.values[sl])
        out[sl] = np.linalg.norm(res, axis=1)
    return out


# ---------------------------------------------------------------------------
# Homogenized elasticity and its corrector
# ---------------------------------------------------------------------------

def _as_tensor(b_eff):
    return b_eff if isinstance(b_eff, np.ndarray) else b_eff.tensor


def solve_homogenized_elasticity(b_eff, c_eff, g, phi0, domain, opts=None,
                                 gradient_field=None):
    """Solve ∫ B_hom D(u) : D(v) = ∫ g.v - ∫ C_hom(grad phi0 (x) grad phi0) : D(v).

    Constant-coefficient sparse direct solve; the electric load contracts
    the effective electrostriction pair matrices against the rank-one
    macroscopic Maxwell stress at each quadrature point.
    """
    opts = opts or SolverOptions()
    tensor = _as_tensor(b_eff)
    g_qp = _source_at_qp(g, domain)
    rhs = _fem.load_vector_vec(domain.n_nodes, domain.conn, domain.h, g_qp)
    if c_eff is not None and phi0 is not None:
        pts = domain.qp_coords()
        grads = _gradient_at(phi0, gradient_field, pts)
        stress = c_eff.apply(_contract("eqc,eqd->eqcd", grads, grads))
        rhs = rhs - _fem.stress_residual(domain.n_nodes, domain.conn,
                                         domain.h, stress)
    matrix = _fem.assemble_elasticity_constant(domain.conn, domain.h,
                                               domain.n_nodes, tensor)
    free = np.stack([2 * domain.interior, 2 * domain.interior + 1],
                    axis=-1).ravel()
    u = _fem.solve_dirichlet(matrix, rhs.ravel(), free)
    res = matrix @ u - rhs.ravel()
    return VectorField(domain, u.reshape(-1, 2)), float(np.linalg.norm(res[free]))


def reconstruct_u1(elastic_solutions, electrostriction_solutions, u0, phi0,
                   sample_grid=None):
    """First-order displacement corrector table at sample quadrature points.

    u1(x, .) = -D(u0)_{ij}(x) * (unit-strain response)^{ij}
               + d_i phi0(x) d_j phi0(x) * (electric response)^{ij},
    assembled as nodal unit-cell fields per macroscopic sample point,
    (K, n_cell_nodes, 2).  Zero-mean cell solutions keep every row
    mean-free over the unit cell.
    """
    sample_grid = sample_grid or (u0.grid if u0 is not None else phi0.grid)
    pts = sample_grid.qp_coords().reshape(-1, 2)
    some = next(iter(elastic_solutions.values()))
    n_nodes = some.values.shape[0]
    table = np.zeros((pts.shape[0], n_nodes, 2))
    if u0 is not None:
        ug = u0.grid
        grad = _fem.point_eval_grad_vector(u0.values, ug.conn, ug.h, ug.n,
                                           ug.origin, pts)
        strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        for (i, j), sol in elastic_solutions.items():
            weight = strain[:, i, j] * (1.0 if i == j else 2.0)
            table -= weight[:, None, None] * sol.values[None, :, :]
    if phi0 is not None and electrostriction_solutions:
        pg = phi0.grid
        grads = _fem.point_eval_gradient(phi0.values, pg.conn, pg.h, pg.n,
                                         pg.origin, pts)
        for (i, j), sol in electrostriction_solutions.items():
            weight = grads[:, i] * grads[:, j]
            table += weight[:, None, None] * sol.values[None, :, :]
    return table
