"""Periodic cell problems on the unit cell.

Three kinds of solves:

* scalar monotone problem: find a zero-mean periodic potential eta with
  ∫_Y a(y, xi + grad eta) . grad v = 0 for all periodic v (damped Newton
  with a Picard fallback);
* elastic problem: zero-mean periodic displacement balancing a unit
  macroscopic strain (matrix-free Jacobi-preconditioned CG);
* electrostriction problem: displacement driven by the outer product of
  two corrector flux fields.

All solutions are normalized to zero mean; on the uniform periodic grid
the arithmetic nodal mean equals the integral, so the normalization is
exact.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _fem
from ._fem import contract as _contract
from .constitutive import OperatorSpec
from .core_fields import CellGrid
from .errors import NonConvergence, SingularSystem


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_newton: int = 50
    max_picard: int = 200
    max_linesearch: int = 25
    cg_tol: float = 1e-10
    cg_max_iter: int = None
    delta_jac: float = 1e-12


@dataclass
class ScalarCellSolution:
    """Zero-mean periodic potential responding to a constant loading."""

    loading: np.ndarray
    values: np.ndarray          # nodal, (n^2,)
    residual: float
    iterations: int
    grid: CellGrid = field(repr=False)
    spec: OperatorSpec = field(repr=False)


@dataclass
class ElasticCellSolution:
    """Zero-mean periodic displacement for one load index pair."""

    indices: tuple
    values: np.ndarray          # nodal, (n^2, 2)
    residual: float
    iterations: int
    grid: CellGrid = field(repr=False)


def _resid_scale(spec, loading):
    pmax = spec.p
    if spec.family == "variable-exponent":
        pmax = max(spec.exponent)
    mag = float(np.linalg.norm(np.atleast_2d(loading), axis=-1).max())
    return max(1.0, mag) ** (pmax - 1.0)


def _scalar_residual(spec, loc, grid, loading, eta):
    flux = spec.flux_local(
        loc, loading + _fem.qp_gradient(eta, grid.conn, grid.h))
    return _fem.divergence_residual(grid.n_nodes, grid.conn, grid.h, flux)


def solve_scalar_cell(spec, loading, grid, opts=None):
    """Solve the scalar monotone cell problem for one loading vector.

    Damped Newton (sparse direct inner solves, Armijo backtracking on the
    residual norm) with a Picard fallback when Newton stalls.  The
    stopping tolerance is opts.tol scaled by max(1, |loading|)^(p-1) so
    it stays meaningful across loading magnitudes.  Raises NonConvergence
    after the combined iteration budget.
    """
    opts = opts or SolverOptions()
    loading = np.asarray(loading, dtype=float)
    if not np.all(np.isfinite(loading)):
        raise ValueError("loading must be finite")
    points = grid.qp_coords()
    loc = spec.local_coefficients(points)
    tol = opts.tol * _resid_scale(spec, loading)

    eta = np.zeros(grid.n_nodes)
    if np.linalg.norm(loading) == 0.0 and spec.zero_at_origin:
        return ScalarCellSolution(loading, eta, 0.0, 0, grid, spec)

    res = _scalar_residual(spec, loc, grid, loading, eta)
    rnorm = np.linalg.norm(res)
    iterations = 0
    for _ in range(opts.max_newton):
        if rnorm <= tol:
            break
        grad = loading + _fem.qp_gradient(eta, grid.conn, grid.h)
        jac_qp = spec.jacobian_local(loc, grad, delta_floor=opts.delta_jac)
        matrix = _fem.assemble_diffusion(grid.conn, grid.h, grid.n_nodes, jac_qp)
        step = _fem.solve_periodic_pinned(matrix, -res)
        t = 1.0
        for _ in range(opts.max_linesearch):
            cand = eta + t * step
            res_c = _scalar_residual(spec, loc, grid, loading, cand)
            rn_c = np.linalg.norm(res_c)
            if rn_c <= (1.0 - 1e-4 * t) * rnorm:
                break
            t *= 0.5
        else:
            break  # line search failed; hand over to Picard
        eta, res, rnorm = cand, res_c, rn_c
        iterations += 1

    if rnorm > tol and spec.family != "linear":
        # Picard (frozen-coefficient) iteration: monotonicity guarantees
        # convergence, if slowly.
        for _ in range(opts.max_picard):
            grad = loading + _fem.qp_gradient(eta, grid.conn, grid.h)
            s = _contract("eqd,eqd->eq", grad, grad)
            coef = loc["sigma"] * (max(spec.delta, opts.delta_jac) ** 2 + s) \
                ** (0.5 * (loc["pexp"] - 2.0))
            matrix = _fem.assemble_diffusion(grid.conn, grid.h, grid.n_nodes, coef)
            rhs = -_fem.divergence_residual(
                grid.n_nodes, grid.conn, grid.h,
                coef[..., None] * np.broadcast_to(loading, grad.shape))
            eta = _fem.solve_periodic_pinned(matrix, rhs)
            res = _scalar_residual(spec, loc, grid, loading, eta)
            rnorm = np.linalg.norm(res)
            iterations += 1
            if rnorm <= tol:
                break

    if rnorm > tol:
        raise NonConvergence(
            f"scalar cell problem: residual {rnorm:.3e} > {tol:.3e} after "
            f"{iterations} iterations (grid n={grid.n})",
            residual=rnorm, iterations=iterations)
    eta = eta - eta.mean()
    return ScalarCellSolution(loading, eta, float(rnorm), iterations, grid, spec)


def corrector_flux(spec, loading, solution):
    """loading + grad(eta) at quadrature points, (nel, 4, 2).

    Its cell mean equals the loading (periodic gradients average to zero).
    """
    grid = solution.grid
    return np.asarray(loading, dtype=float) \
        + _fem.qp_gradient(solution.values, grid.conn, grid.h)


def verify_flux_identity(spec, loading, solution):
    """| ∫ a(y,p).p - ∫ a(y,p).loading | for p the corrector flux.

    Exact in the continuum; the discrete residual tracks the solver
    tolerance.  Reported as a diagnostic, never raised.
    """
    grid = solution.grid
    p_qp = corrector_flux(spec, loading, solution)
    a_qp = spec.flux_local(spec.local_coefficients(grid.qp_coords()), p_qp)
    lhs = _fem.integrate_qp(grid.h, _contract("eqd,eqd->eq", a_qp, p_qp))
    rhs = _fem.integrate_qp(
        grid.h, _contract("eqd,d->eq", a_qp, np.asarray(loading, dtype=float)))
    return float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# Elastic cell problems (matrix-free CG)
# ---------------------------------------------------------------------------

def unit_strain(i, j):
    """Symmetrized unit strain sym(e_i (x) e_j)."""
    e = np.zeros((2, 2))
    e[i, j] += 0.5
    e[j, i] += 0.5
    return e


def _project_componentwise(u):
    return u - u.mean(axis=0)


def _elastic_cg(tensor_field, grid, rhs, opts):
    points = grid.qp_coords()
    lam, mu = tensor_field.lame_at(points)
    diag = _fem.isotropic_elasticity_diagonal(
        grid.conn, grid.h, grid.n_nodes, lam, mu)
    if np.any(diag <= 0.0):
        raise SingularSystem("elastic cell operator has a nonpositive diagonal")

    def apply_op(u):
        return _fem.apply_isotropic_elasticity(
            grid.conn, grid.h, grid.n_nodes, lam, mu, u)

    max_iter = opts.cg_max_iter or 40 * grid.n_nodes
    x, iters, relres = _fem.pcg(apply_op, rhs, diag, tol=opts.cg_tol,
                                max_iter=max_iter,
                                project=_project_componentwise)
    return _project_componentwise(x), iters, relres


def solve_elastic_cell_U(tensor_field, grid, i, j, opts=None):
    """Periodic displacement balancing the unit macroscopic strain (i, j).

    Weak form: ∫ B D(U) : D(v) = ∫ B E^ij : D(v) with E^ij the constant
    symmetrized unit strain, solved by Jacobi-preconditioned CG with the
    two translation modes projected out.
    """
    opts = opts or SolverOptions()
    points = grid.qp_coords()
    strain = unit_strain(i, j)
    stress = tensor_field.apply(points, strain)
    rhs = _fem.stress_residual(grid.n_nodes, grid.conn, grid.h, stress)
    x, iters, relres = _elastic_cg(tensor_field, grid, rhs, opts)
    return ElasticCellSolution((i, j), x, float(relres), iters, grid)


def assemble_zeta(i, j, sol_i, sol_j):
    """Outer product of the two corrector flux fields, (nel, 4, 2, 2)."""
    if sol_i.grid is not sol_j.grid and sol_i.grid != sol_j.grid:
        raise ValueError("corrector solutions live on different grids")
    e_i = np.eye(2)[i]
    e_j = np.eye(2)[j]
    p_i = corrector_flux(sol_i.spec, e_i, sol_i)
    p_j = corrector_flux(sol_j.spec, e_j, sol_j)
    return _contract("eqc,eqd->eqcd", p_i, p_j)


def solve_electrostriction_cell(tensor_field, zeta_qp, grid, opts=None,
                                variant="C-applied", indices=("chi",)):
    """Periodic displacement driven by an electric stress source.

    variant "as-written": flux C D(chi) + zeta; variant "C-applied"
    (default): flux C (D(chi) + zeta).  Tested against symmetrized
    gradients, so only the symmetric part of the source enters.
    """
    opts = opts or SolverOptions()
    if variant not in ("C-applied", "as-written"):
        raise ValueError(f"unknown electrostriction variant {variant!r}")
    points = grid.qp_coords()
    zeta_sym = 0.5 * (zeta_qp + np.swapaxes(zeta_qp, -1, -2))
    if variant == "C-applied":
        lam, mu = tensor_field.lame_at(points)
        tr = zeta_sym[..., 0, 0] + zeta_sym[..., 1, 1]
        stress = 2.0 * mu[..., None, None] * zeta_sym
        stress[..., 0, 0] += lam * tr
        stress[..., 1, 1] += lam * tr
    else:
        stress = zeta_sym
    rhs = -_fem.stress_residual(grid.n_nodes, grid.conn, grid.h, stress)
    x, iters, relres = _elastic_cg(tensor_field, grid, rhs, opts)
    return ElasticCellSolution(tuple(indices), x, float(relres), iters, grid)


# ---------------------------------------------------------------------------
# Batched scalar cell solves (dense LAPACK over many loadings)
# ---------------------------------------------------------------------------

@dataclass
class BatchCellResult:
    loadings: np.ndarray        # (K, 2)
    values: np.ndarray          # (K, n^2) zero-mean nodal potentials
    residuals: np.ndarray       # (K,)
    iterations: np.ndarray      # (K,)
    converged: np.ndarray       # (K,) bool


class BatchScalarCellSolver:
    """Solve the scalar cell problem for many loadings at once.

    The periodic grids used in sweep studies are small (n <= 32), so the
    inner Newton systems are assembled densely per loading and solved
    with batched LAPACK factorizations; loadings are processed in chunks
    to bound memory.  Results are bitwise deterministic.
    """

    def __init__(self, spec, grid, opts=None, chunk=512):
        if grid.n > 32:
            raise ValueError(
                "batched dense solver is intended for n <= 32 cell grids")
        self.spec = spec
        self.grid = grid
        self.opts = opts or SolverOptions()
        self.chunk = int(chunk)
        self.loc = spec.local_coefficients(grid.qp_coords())
        conn = grid.conn
        nn = grid.n_nodes
        self._flat_idx = (conn[:, :, None] * nn + conn[:, None, :]).ravel()
        self._w = grid.h * grid.h * _fem.REF_WEIGHTS
        self._g = _fem.SHAPE_GRAD / grid.h

    # -- batched kernels ---------------------------------------------------

    def _residual(self, loadings, etas):
        """Assembled residual vectors for a batch, (k, nn)."""
        grid = self.grid
        grad = _contract("qad,kea->keqd", _fem.SHAPE_GRAD,
                         etas[:, grid.conn]) / grid.h
        grad += loadings[:, None, None, :]
        flux = self.spec.flux_local(
            {k: v[None, ...] for k, v in self.loc.items()}, grad)
        per_elem = _contract("q,keqd,qad->kea", self._w, flux, self._g)
        outT = np.zeros((grid.n_nodes, etas.shape[0]))
        np.add.at(outT, grid.conn.ravel(),
                  per_elem.reshape(etas.shape[0], -1).T)
        return outT.T

    def _dense_matrices(self, loadings, etas):
        grid = self.grid
        grad = _contract("qad,kea->keqd", _fem.SHAPE_GRAD,
                         etas[:, grid.conn]) / grid.h
        grad += loadings[:, None, None, :]
        jac = self.spec.jacobian_local(
            {k: v[None, ...] for k, v in self.loc.items()}, grad,
            delta_floor=self.opts.delta_jac)
        ke = _contract("q,qad,keqdc,qbc->keab", self._w, self._g, jac, self._g)
        k = etas.shape[0]
        nn = grid.n_nodes
        dense = np.zeros((nn * nn, k))
        np.add.at(dense, self._flat_idx, ke.reshape(k, -1).T)
        return dense.T.reshape(k, nn, nn)

    def _solve_chunk(self, loadings, warm):
        opts = self.opts
        spec = self.spec
        k = loadings.shape[0]
        nn = self.grid.n_nodes
        etas = np.zeros((k, nn)) if warm is None else warm.copy()
        scales = np.maximum(1.0, np.linalg.norm(loadings, axis=1)) \
            ** (_max_exponent(spec) - 1.0)
        tols = opts.tol * scales
        zero = (np.linalg.norm(loadings, axis=1) == 0.0) & spec.zero_at_origin
        etas[zero] = 0.0
        res = self._residual(loadings, etas)
        rnorm = np.linalg.norm(res, axis=1)
        rnorm[zero] = 0.0
        iters = np.zeros(k, dtype=int)
        for _ in range(opts.max_newton):
            active = rnorm > tols
            if not active.any():
                break
            ia = np.flatnonzero(active)
            dense = self._dense_matrices(loadings[ia], etas[ia])
            reduced = dense[:, 1:, 1:]
            rhs = -res[ia][:, 1:, None]
            try:
                step = np.linalg.solve(reduced, rhs)[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(str(exc)) from exc
            full_step = np.zeros((ia.size, nn))
            full_step[:, 1:] = step
            t = np.ones(ia.size)
            best = etas[ia].copy()
            best_res = res[ia].copy()
            best_rn = rnorm[ia].copy()
            pending = np.ones(ia.size, dtype=bool)
            for _ in range(opts.max_linesearch):
                if not pending.any():
                    break
                cand = etas[ia] + t[:, None] * full_step
                res_c = self._residual(loadings[ia], cand)
                rn_c = np.linalg.norm(res_c, axis=1)
                ok = pending & (rn_c <= (1.0 - 1e-4 * t) * rnorm[ia])
                best[ok] = cand[ok]
                best_res[ok] = res_c[ok]
                best_rn[ok] = rn_c[ok]
                pending &= ~ok
                t[pending] *= 0.5
            # samples whose line search failed keep the damped step anyway;
            # monotone problems recover on subsequent iterations
            still = np.flatnonzero(pending)
            if still.size:
                cand = etas[ia][still] + t[still, None] * full_step[still]
                res_c = self._residual(loadings[ia][still], cand)
                best[still] = cand
                best_res[still] = res_c
                best_rn[still] = np.linalg.norm(res_c, axis=1)
            etas[ia] = best
            res[ia] = best_res
            rnorm[ia] = best_rn
            iters[ia] += 1
        converged = rnorm <= tols
        etas -= etas.mean(axis=1, keepdims=True)
        return etas, rnorm, iters, converged

    def solve(self, loadings, warm=None):
        """Solve for loadings (K, 2); returns a BatchCellResult."""
        loadings = np.asarray(loadings, dtype=float)
        k_total = loadings.shape[0]
        values = np.zeros((k_total, self.grid.n_nodes))
        residuals = np.zeros(k_total)
        iterations = np.zeros(k_total, dtype=int)
        converged = np.zeros(k_total, dtype=bool)
        for start in range(0, k_total, self.chunk):
            sl = slice(start, min(start + self.chunk, k_total))
            w = None if warm is None else warm[sl]
            v, r, it, cv = self._solve_chunk(loadings[sl], w)
            values[sl] = v
            residuals[sl] = r
            iterations[sl] = it
            converged[sl] = cv
        if not converged.all():
            bad = np.flatnonzero(~converged)
            # fall back to the single-loading path for stragglers
            for idx in bad:
                sol = solve_scalar_cell(self.spec, loadings[idx], self.grid,
                                        self.opts)
                values[idx] = sol.values
                residuals[idx] = sol.residual
                iterations[idx] += sol.iterations
                converged[idx] = True
        return BatchCellResult(loadings, values, residuals, iterations,
                               converged)

    def flux_means(self, result):
        """Cell means of a(y, loading + grad eta) per sample, (K, 2)."""
        grid = self.grid
        out = np.zeros((result.loadings.shape[0], 2))
        for start in range(0, out.shape[0], self.chunk):
            sl = slice(start, min(start + self.chunk, out.shape[0]))
            grad = _contract("qad,kea->keqd", _fem.SHAPE_GRAD,
                             result.values[sl][:, grid.conn]) / grid.h
            grad += result.loadings[sl][:, None, None, :]
            flux = self.spec.flux_local(
                {k: v[None, ...] for k, v in self.loc.items()}, grad)
            out[sl] = _contract("q,keqd->kd", self._w, flux)
        return out

    def identity_residuals(self, result):
        """Flux-identity defects | ∫a.p - ∫a.loading | per sample, (K,)."""
        grid = self.grid
        out = np.zeros(result.loadings.shape[0])
        for start in range(0, out.shape[0], self.chunk):
            sl = slice(start, min(start + self.chunk, out.shape[0]))
            grad = _contract("qad,kea->keqd", _fem.SHAPE_GRAD,
                             result.values[sl][:, grid.conn]) / grid.h
            p_qp = grad + result.loadings[sl][:, None, None, :]
            flux = self.spec.flux_local(
                {k: v[None, ...] for k, v in self.loc.items()}, p_qp)
            lhs = _contract("q,keqd,keqd->k", self._w, flux, p_qp)
            rhs = _contract("q,keqd,kd->k", self._w, flux,
                            result.loadings[sl])
            out[sl] = np.abs(lhs - rhs)
        return out


def _max_exponent(spec):
    if spec.family == "variable-exponent":
        return max(spec.exponent)
    return spec.p
