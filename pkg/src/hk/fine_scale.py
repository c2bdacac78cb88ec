"""Fine-scale coupled solves on the unit square with oscillatory coefficients.

Coefficients at x are the unit-cell coefficients at y = {x/eps}_Y.  With
the commensurate grids enforced here (domain resolution N = n/eps), both
nodes and quadrature points of the domain grid land exactly on their
unit-cell counterparts, so coefficient lookup is an index map and the
fine problems see literally the same phase data as the cell problems.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _fem
from ._fem import contract as _contract
from .cell_problems import SolverOptions
from .core_fields import ScalarField, VectorField
from .errors import NonConvergence


def periods_per_side(domain, eps):
    """Fine elements per microstructure period, m = N * eps (integer)."""
    m = domain.n * eps
    if abs(m - round(m)) > 1e-9 or round(m) < 2:
        raise ValueError(
            f"incommensurate pairing: N={domain.n}, eps={eps}; the domain "
            "grid must resolve each eps-period by an integer number of "
            "elements")
    return int(round(m))


class OscillatoryMap:
    """Unit-cell coefficient evaluation at y = {x/eps}_Y on a domain grid.

    Domain quadrature points are wrapped into the unit cell and the
    coefficients evaluated there directly; with interfaces aligned to the
    element pitch (checked against the geometry), each quadrature point
    lies strictly inside one phase so the evaluation is exact.
    """

    def __init__(self, domain, eps, geometry=None):
        self.domain = domain
        self.eps = eps
        self.m = periods_per_side(domain, eps)
        if geometry is not None and not geometry.aligned_with(1.0 / self.m) \
                and geometry.kind != "disc":
            raise ValueError(
                f"geometry interfaces are not resolved by {self.m} elements "
                f"per period (aliasing)")
        from .constitutive import wrap_to_cell
        self.points = wrap_to_cell(domain.qp_coords() / eps)

    def local_coefficients(self, spec):
        return spec.local_coefficients(self.points)

    def lame(self, tensor_field):
        return tensor_field.lame_at(self.points)


@dataclass
class FineSolution:
    """Solution bundle for one microstructure size."""

    eps: float
    potential: ScalarField
    displacement: VectorField = None
    maxwell: np.ndarray = None          # (nel, 4, 2, 2) at quadrature points
    residuals: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)


def _source_at_qp(f, domain):
    if isinstance(f, (ScalarField, VectorField)):
        if f.grid != domain:
            raise ValueError("source field lives on a different grid")
        return f.at_quadrature()
    if callable(f):
        pts = domain.qp_coords()
        return np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full((domain.n_elems, 4), float(arr))
    if arr.shape == (2,):
        return np.broadcast_to(arr, (domain.n_elems, 4, 2)).copy()
    raise ValueError("unsupported source specification")


def _scalar_fine_residual(spec, loc, domain, phi, rhs):
    grad = _fem.qp_gradient(phi, domain.conn, domain.h)
    flux = spec.flux_local(loc, grad)
    return _fem.divergence_residual(domain.n_nodes, domain.conn, domain.h,
                                    flux) - rhs


def solve_fine_electrostatic(spec, eps, f, domain, opts=None):
    """Solve ∫ a(x/eps, grad phi) . grad v = ∫ f v, phi = 0 on the boundary.

    Linear families reduce to one sparse solve; otherwise damped Newton
    with sparse direct inner solves and a frozen-coefficient fallback.
    Returns a FineSolution with potential, Maxwell stress, residual and
    energy bookkeeping.
    """
    opts = opts or SolverOptions()
    osc = OscillatoryMap(domain, eps, spec.geometry)
    loc = osc.local_coefficients(spec)
    f_qp = _source_at_qp(f, domain)
    rhs = _fem.load_vector_scalar(domain.n_nodes, domain.conn, domain.h, f_qp)
    free = domain.interior

    phi = np.zeros(domain.n_nodes)
    iterations = 0
    if spec.is_linear:
        matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                         domain.n_nodes, loc["bmat"])
        phi = _fem.solve_dirichlet(matrix, rhs, free)
        res = _scalar_fine_residual(spec, loc, domain, phi, rhs)
        rnorm = np.linalg.norm(res[free])
        iterations = 1
    else:
        # initial iterate from the frozen-coefficient (quadratic) surrogate
        matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                         domain.n_nodes, loc["sigma"])
        phi = _fem.solve_dirichlet(matrix, rhs, free)
        res = _scalar_fine_residual(spec, loc, domain, phi, rhs)
        rnorm = np.linalg.norm(res[free])
        for _ in range(opts.max_newton):
            if rnorm <= opts.tol:
                break
            grad = _fem.qp_gradient(phi, domain.conn, domain.h)
            jac_qp = spec.jacobian_local(loc, grad, delta_floor=opts.delta_jac)
            matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                             domain.n_nodes, jac_qp)
            step = np.zeros(domain.n_nodes)
            neg = -res
            step = _fem.solve_dirichlet(matrix, neg, free)
            t = 1.0
            for _ in range(opts.max_linesearch):
                cand = phi + t * step
                res_c = _scalar_fine_residual(spec, loc, domain, cand, rhs)
                rn_c = np.linalg.norm(res_c[free])
                if rn_c <= (1.0 - 1e-4 * t) * rnorm:
                    break
                t *= 0.5
            phi, res, rnorm = cand, res_c, rn_c
            iterations += 1
        if rnorm > opts.tol:
            # frozen-coefficient iteration as a safety net
            for _ in range(opts.max_picard):
                grad = _fem.qp_gradient(phi, domain.conn, domain.h)
                s = _contract("eqd,eqd->eq", grad, grad)
                coef = loc["sigma"] * (
                    max(spec.delta, opts.delta_jac) ** 2 + s) \
                    ** (0.5 * (loc["pexp"] - 2.0))
                matrix = _fem.assemble_diffusion(domain.conn, domain.h,
                                                 domain.n_nodes, coef)
                phi = _fem.solve_dirichlet(matrix, rhs, free)
                res = _scalar_fine_residual(spec, loc, domain, phi, rhs)
                rnorm = np.linalg.norm(res[free])
                iterations += 1
                if rnorm <= opts.tol:
                    break
        if rnorm > opts.tol:
            raise NonConvergence(
                f"fine electrostatic solve: residual {rnorm:.3e} after "
                f"{iterations} iterations (N={domain.n}, eps={eps})",
                residual=rnorm, iterations=iterations)

    potential = ScalarField(domain, phi)
    sigma_qp = maxwell_stress(potential)
    p = spec.p
    p_conj = p / (p - 1.0)
    grad = _fem.qp_gradient(phi, domain.conn, domain.h)
    energy = {
        "grad_phi_Lp^p": _fem.lp_norm_qp(domain.h, grad, p) ** p,
        "f_Lq^q": _fem.lp_norm_qp(domain.h, f_qp, p_conj) ** p_conj,
    }
    energy["ratio"] = energy["grad_phi_Lp^p"] / max(energy["f_Lq^q"], 1e-300)
    return FineSolution(
        eps=eps, potential=potential, maxwell=sigma_qp,
        residuals={"electrostatic": float(rnorm),
                   "electrostatic_max_nodal": float(np.abs(res[free]).max())},
        iterations={"electrostatic": iterations},
        energy=energy)


def maxwell_stress(phi):
    """Rank-one electric stress grad(phi) (x) grad(phi) at quadrature points."""
    grad = _fem.qp_gradient(phi.values, phi.grid.conn, phi.grid.h)
    return _contract("eqc,eqd->eqcd", grad, grad)


def solve_fine_elasticity(tensor_b, tensor_c, eps, g, sigma_qp, domain,
                          opts=None):
    """Solve ∫ B(x/eps) D(u) : D(v) = ∫ g.v - ∫ C(x/eps) Sigma : D(v).

    Sparse direct solve (the fine elastic systems are the largest in the
    pipeline and a factorization is both faster and bitwise reproducible
    here).  Returns the displacement plus residual bookkeeping.
    """
    opts = opts or SolverOptions()
    osc = OscillatoryMap(domain, eps, tensor_b.geometry)
    lam_b, mu_b = osc.lame(tensor_b)
    lam_c, mu_c = osc.lame(tensor_c)
    g_qp = _source_at_qp(g, domain)
    rhs = _fem.load_vector_vec(domain.n_nodes, domain.conn, domain.h, g_qp)

    sig_sym = 0.5 * (sigma_qp + np.swapaxes(sigma_qp, -1, -2))
    tr = sig_sym[..., 0, 0] + sig_sym[..., 1, 1]
    stress = 2.0 * mu_c[..., None, None] * sig_sym
    stress[..., 0, 0] += lam_c * tr
    stress[..., 1, 1] += lam_c * tr
    rhs = rhs - _fem.stress_residual(domain.n_nodes, domain.conn, domain.h,
                                     stress)

    matrix = _fem.assemble_elasticity(domain.conn, domain.h, domain.n_nodes,
                                      lam_qp=lam_b, mu_qp=mu_b)
    free = np.stack([2 * domain.interior, 2 * domain.interior + 1],
                    axis=-1).ravel()
    u = _fem.solve_dirichlet(matrix, rhs.ravel(), free)
    res = matrix @ u - rhs.ravel()
    rnorm = float(np.linalg.norm(res[free]))
    return VectorField(domain, u.reshape(-1, 2)), rnorm


def weak_interface_balance(spec, eps, phi, f, domain):
    """Largest interior nodal defect of the discrete flux balance.

    Conforming elements satisfy the interface jump conditions weakly; the
    per-node residual of the converged solve is the discrete version of
    the integrated normal-flux jump, so this is the quantitative check.
    """
    osc = OscillatoryMap(domain, eps, spec.geometry)
    loc = osc.local_coefficients(spec)
    f_qp = _source_at_qp(f, domain)
    rhs = _fem.load_vector_scalar(domain.n_nodes, domain.conn, domain.h, f_qp)
    res = _scalar_fine_residual(spec, loc, domain, phi.values, rhs)
    return float(np.abs(res[domain.interior]).max())
