"""Effective tensors assembled from cell solutions.

The effective flux law is an evaluable map backed by on-demand cell
solves with an exact-key cache; the effective elasticity and
electrostriction tensors are constant fourth-order tensors.  Two
variants of the electrostriction average are shipped (see
``assemble_C_hom``); "C-applied" is the default because it reproduces
the fine-scale law when the coefficients are constant.
"""

import threading
from dataclasses import dataclass, field

import numpy as np

from . import _fem
from ._fem import contract as _contract
from .cell_problems import (BatchScalarCellSolver, SolverOptions,
                            assemble_zeta, corrector_flux,
                            solve_elastic_cell_U, solve_electrostriction_cell,
                            solve_scalar_cell, unit_strain)
from .errors import NonConvergence

_SAFE_POINT = np.array([-0.25, -0.25])  # off-interface for all geometries


def _cache_key(xi):
    return (round(float(xi[0]), 12), round(float(xi[1]), 12))


class EffectiveLaw:
    """Evaluable effective flux map xi -> mean of a(y, xi + grad eta_xi).

    Evaluations are cached on xi rounded to 12 digits.  Constant laws
    shortcut to the pointwise flux; linear laws to a constant matrix
    (two cell solves).  Everything else runs cell solves: batched dense
    factorizations on small grids, the sparse single-loading path
    otherwise.  The cache takes a lock, so concurrent reads are safe.
    """

    def __init__(self, spec, grid, opts=None, jac_step=1e-6, chunk=512):
        self.spec = spec
        self.grid = grid
        self.opts = opts or SolverOptions()
        self.jac_step = jac_step
        self._cache = {}
        self._solution_cache = {}
        self._lock = threading.Lock()
        if spec.is_constant:
            self.mode = "constant"
            self._batch = None
        elif spec.is_linear:
            self.mode = "linear"
            self.matrix = linear_case_b_hom(spec, grid, self.opts)
            self._batch = None
        else:
            self.mode = "general"
            self._batch = (BatchScalarCellSolver(spec, grid, self.opts, chunk)
                           if grid.n <= 32 else None)

    # -- evaluation --------------------------------------------------------

    def eval(self, xi):
        return self.eval_batch(np.asarray(xi, dtype=float)[None, :])[0]

    def eval_batch(self, loadings, warm=None):
        """Effective flux for loadings (K, 2); cached on 12-digit keys.

        ``warm`` optionally provides initial cell iterates (K, n^2) for
        the loadings that miss the cache (nearby loadings from a previous
        outer iteration cut the inner Newton cost).
        """
        loadings = np.asarray(loadings, dtype=float)
        if self.mode == "constant":
            loc = self.spec.local_coefficients(
                np.broadcast_to(_SAFE_POINT, loadings.shape))
            return self.spec.flux_local(loc, loadings)
        if self.mode == "linear":
            return loadings @ self.matrix.T
        out = np.zeros_like(loadings)
        missing = []
        keys = [_cache_key(xi) for xi in loadings]
        with self._lock:
            for idx, key in enumerate(keys):
                if key in self._cache:
                    out[idx] = self._cache[key]
                else:
                    missing.append(idx)
        if missing:
            todo = loadings[missing]
            w = None if warm is None else warm[missing]
            values, _ = self._solve_loadings(todo, warm=w)
            with self._lock:
                for row, idx in enumerate(missing):
                    self._cache[keys[idx]] = values[row]
                    out[idx] = values[row]
        return out

    def solutions_for(self, loadings, warm=None):
        """Zero-mean cell potentials per loading, (K, n^2).

        Solutions are cached on the same exact keys as the values; nearby
        loadings are never merged.
        """
        loadings = np.asarray(loadings, dtype=float)
        if self.mode == "constant":
            return np.zeros((loadings.shape[0], self.grid.n_nodes))
        if self.mode == "linear":
            basis = self._linear_basis()
            return _contract("kd,dn->kn", loadings, basis)
        out = np.zeros((loadings.shape[0], self.grid.n_nodes))
        missing = []
        keys = [_cache_key(xi) for xi in loadings]
        with self._lock:
            for idx, key in enumerate(keys):
                if key in self._solution_cache:
                    out[idx] = self._solution_cache[key]
                else:
                    missing.append(idx)
        if missing:
            todo = loadings[missing]
            w = None if warm is None else warm[missing]
            values, etas = self._solve_loadings(todo, warm=w)
            with self._lock:
                for row, idx in enumerate(missing):
                    self._cache[keys[idx]] = values[row]
                    self._solution_cache[keys[idx]] = etas[row]
                    out[idx] = etas[row]
        return out

    def _linear_basis(self):
        with self._lock:
            basis = getattr(self, "_basis", None)
        if basis is None:
            sols = [solve_scalar_cell(self.spec, np.eye(2)[k], self.grid,
                                      self.opts) for k in range(2)]
            basis = np.stack([s.values for s in sols])
            with self._lock:
                self._basis = basis
        return basis

    def _solve_loadings(self, loadings, warm=None):
        if self._batch is not None:
            result = self._batch.solve(loadings, warm=warm)
            if not result.converged.all():
                raise NonConvergence("batched cell solves did not converge")
            return self._batch.flux_means(result), result.values
        values = np.zeros_like(loadings)
        etas = np.zeros((loadings.shape[0], self.grid.n_nodes))
        loc = self.spec.local_coefficients(self.grid.qp_coords())
        for k, xi in enumerate(loadings):
            sol = solve_scalar_cell(self.spec, xi, self.grid, self.opts)
            flux = self.spec.flux_local(loc, corrector_flux(self.spec, xi, sol))
            values[k] = _fem.integrate_qp(self.grid.h, flux)
            etas[k] = sol.values
        return values, etas

    # -- derivatives -------------------------------------------------------

    def jacobian_batch(self, loadings, warm=None):
        """Central-difference Jacobians, step jac_step * (1 + |xi|)."""
        loadings = np.asarray(loadings, dtype=float)
        k = loadings.shape[0]
        h = self.jac_step * (1.0 + np.linalg.norm(loadings, axis=1))
        probes = np.concatenate([
            loadings + h[:, None] * np.array([1.0, 0.0]),
            loadings - h[:, None] * np.array([1.0, 0.0]),
            loadings + h[:, None] * np.array([0.0, 1.0]),
            loadings - h[:, None] * np.array([0.0, 1.0]),
        ])
        w = None if warm is None else np.concatenate([warm] * 4)
        vals = self.eval_batch(probes, warm=w)
        jac = np.zeros((k, 2, 2))
        jac[:, :, 0] = (vals[:k] - vals[k:2 * k]) / (2.0 * h[:, None])
        jac[:, :, 1] = (vals[2 * k:3 * k] - vals[3 * k:]) / (2.0 * h[:, None])
        return jac

    def jacobian(self, xi):
        return self.jacobian_batch(np.asarray(xi, dtype=float)[None, :])[0]

    def provenance(self):
        return {
            "grid_n": self.grid.n,
            "cell_tol": self.opts.tol,
            "jacobian_step_rule": f"{self.jac_step:g}*(1+|xi|), central",
            "mode": self.mode,
            "operator": self.spec.fingerprint(),
        }


_LAW_REGISTRY = {}
_LAW_LOCK = threading.Lock()


def effective_law(spec, grid, opts=None):
    """Shared EffectiveLaw instance per (spec, grid, tolerance)."""
    opts = opts or SolverOptions()
    key = (spec.fingerprint(), grid.n, opts.tol)
    with _LAW_LOCK:
        law = _LAW_REGISTRY.get(key)
        if law is None:
            law = EffectiveLaw(spec, grid, opts)
            _LAW_REGISTRY[key] = law
    return law


def eval_a_hom(spec, xi, grid, opts=None):
    """Effective flux at one loading; cached per loading."""
    return effective_law(spec, grid, opts).eval(xi)


def linear_case_b_hom(spec, grid, opts=None):
    """Constant effective matrix for the linear family.

    b_hom[j, k] = ∫ b(y)(e_k + grad w_k) . (e_j + grad w_j) dy with w_k
    the scalar cell solutions at unit loadings.
    """
    if not spec.is_linear:
        raise ValueError("linear_case_b_hom needs the linear family")
    opts = opts or SolverOptions()
    sols = [solve_scalar_cell(spec, np.eye(2)[k], grid, opts) for k in range(2)]
    loc = spec.local_coefficients(grid.qp_coords())
    fluxes = [corrector_flux(spec, np.eye(2)[k], sols[k]) for k in range(2)]
    bhom = np.zeros((2, 2))
    for k in range(2):
        flux_k = spec.flux_local(loc, fluxes[k])
        for j in range(2):
            bhom[j, k] = _fem.integrate_qp(
                grid.h, _contract("eqd,eqd->eq", flux_k, fluxes[j]))
    return bhom


# ---------------------------------------------------------------------------
# Effective elasticity
# ---------------------------------------------------------------------------

_SYM_PAIRS = ((0, 0), (1, 1), (0, 1))


@dataclass
class EffectiveElasticity:
    tensor: np.ndarray                       # (2,2,2,2)
    solutions: dict = field(repr=False)      # (i,j) -> ElasticCellSolution
    grid_n: int = 0


def assemble_B_hom(tensor_field, grid, opts=None):
    """Effective elasticity from unit-strain cell solves.

    B_hom[i,j,m,n] = ∫ B (E^ij - D(U^ij)) : (E^mn - D(U^mn)) dy over the
    three independent symmetric pairs, mirrored onto all sixteen entries.
    """
    opts = opts or SolverOptions()
    solutions = {}
    strains = {}
    for (i, j) in _SYM_PAIRS:
        sol = solve_elastic_cell_U(tensor_field, grid, i, j, opts)
        solutions[(i, j)] = sol
        grad = _fem.qp_grad_vector(sol.values, grid.conn, grid.h)
        strains[(i, j)] = unit_strain(i, j) - 0.5 * (grad + np.swapaxes(grad, -1, -2))
    points = grid.qp_coords()
    lam, mu = tensor_field.lame_at(points)
    bhom = np.zeros((2, 2, 2, 2))
    for (i, j) in _SYM_PAIRS:
        s = strains[(i, j)]
        tr = s[..., 0, 0] + s[..., 1, 1]
        stress = 2.0 * mu[..., None, None] * s
        stress[..., 0, 0] += lam * tr
        stress[..., 1, 1] += lam * tr
        for (m, n) in _SYM_PAIRS:
            val = _fem.integrate_qp(
                grid.h, _contract("eqcd,eqcd->eq", stress, strains[(m, n)]))
            for (a, b) in {(i, j), (j, i)}:
                for (c, d) in {(m, n), (n, m)}:
                    bhom[a, b, c, d] = val
    return EffectiveElasticity(bhom, solutions, grid.n)


@dataclass
class EffectiveElectrostriction:
    """Per-index-pair averaged electric stress response.

    ``pair_matrices[i, j]`` is the 2x2 matrix multiplying M[i, j] in the
    effective load; ``apply`` contracts against a matrix M.  ``variant``
    records which average produced it.
    """

    pair_matrices: np.ndarray                # (2,2,2,2): [i,j] -> 2x2
    variant: str
    solutions: dict = field(repr=False)
    grid_n: int = 0

    def apply(self, mat):
        return _contract("ijkl,...ij->...kl", self.pair_matrices,
                         np.asarray(mat, dtype=float))

    def as_tensor(self):
        """Fourth-order tensor in flux orientation: T[k,l,i,j] M[i,j]."""
        return np.transpose(self.pair_matrices, (2, 3, 0, 1))


def assemble_C_hom(tensor_field, spec, grid, variant="C-applied", opts=None,
                   scalar_solutions=None):
    """Effective electrostriction from corrector-stress cell solves.

    variant "C-applied" (default): pair average ∫ C (D(chi) + zeta) dy,
    which reproduces the fine-scale response for constant coefficients;
    variant "as-written": ∫ C D(chi) + zeta dy.
    """
    opts = opts or SolverOptions()
    if scalar_solutions is None:
        scalar_solutions = [solve_scalar_cell(spec, np.eye(2)[k], grid, opts)
                            for k in range(2)]
    points = grid.qp_coords()
    lam, mu = tensor_field.lame_at(points)
    pair = np.zeros((2, 2, 2, 2))
    solutions = {}
    for i in range(2):
        for j in range(2):
            zeta = assemble_zeta(i, j, scalar_solutions[i], scalar_solutions[j])
            chi = solve_electrostriction_cell(tensor_field, zeta, grid, opts,
                                              variant=variant, indices=(i, j))
            solutions[(i, j)] = chi
            grad = _fem.qp_grad_vector(chi.values, grid.conn, grid.h)
            strain = 0.5 * (grad + np.swapaxes(grad, -1, -2))
            if variant == "C-applied":
                total = strain + zeta
                tr = total[..., 0, 0] + total[..., 1, 1]
                integrand = 2.0 * mu[..., None, None] * 0.5 * (
                    total + np.swapaxes(total, -1, -2))
                integrand[..., 0, 0] += lam * tr
                integrand[..., 1, 1] += lam * tr
            else:
                tr = strain[..., 0, 0] + strain[..., 1, 1]
                integrand = 2.0 * mu[..., None, None] * strain
                integrand[..., 0, 0] += lam * tr
                integrand[..., 1, 1] += lam * tr
                integrand = integrand + zeta
            pair[i, j] = _fem.integrate_qp(grid.h, integrand)
    return EffectiveElectrostriction(pair, variant, solutions, grid.n)


# ---------------------------------------------------------------------------
# Structural properties of the effective law
# ---------------------------------------------------------------------------

@dataclass
class AHomPropertyReport:
    pairs: int
    seed: int
    theta: float
    min_monotonicity: float
    max_continuity: float
    violation: bool

    def __str__(self):
        flag = "VIOLATION" if self.violation else "ok"
        return (f"effective-law audit [{flag}] over {self.pairs} pairs: "
                f"theta={self.theta:.6g}, monotonicity >= "
                f"{self.min_monotonicity:.6g}, continuity <= "
                f"{self.max_continuity:.6g}")


def check_a_hom_properties(law, m=100, seed=0, radius=2.0):
    """Sampled monotonicity and continuity ratios of the effective law.

    Monotonicity ratio: [a(x1)-a(x2)].(x1-x2) / ((1+|x1|^2+|x2|^2)^((p-2)/2)
    |x1-x2|^2); continuity ratio uses the exponent theta = alpha/(2-alpha).
    Report only; the violation flag trips when any monotonicity ratio is
    nonpositive.
    """
    if m < 20:
        raise ValueError("property audit needs at least 20 pairs")
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=(2, m))
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=(2, m)))
    xi1 = np.stack([r[0] * np.cos(angle[0]), r[0] * np.sin(angle[0])], axis=-1)
    xi2 = np.stack([r[1] * np.cos(angle[1]), r[1] * np.sin(angle[1])], axis=-1)
    a1 = law.eval_batch(xi1)
    a2 = law.eval_batch(xi2)
    diff = a1 - a2
    dxi = xi1 - xi2
    norm_dxi = np.linalg.norm(dxi, axis=-1)
    keep = norm_dxi > 1e-12
    weight = 1.0 + np.sum(xi1 * xi1, axis=-1) + np.sum(xi2 * xi2, axis=-1)
    p = law.spec.p
    alpha = law.spec.alpha
    theta = alpha / (2.0 - alpha)
    mono = (np.sum(diff * dxi, axis=-1)[keep]
            / (weight[keep] ** (0.5 * (p - 2.0)) * norm_dxi[keep] ** 2))
    cont = (np.linalg.norm(diff, axis=-1)[keep]
            / (weight[keep] ** (0.5 * (p - 2.0 - theta))
               * norm_dxi[keep] ** theta))
    return AHomPropertyReport(
        pairs=int(keep.sum()), seed=seed, theta=float(theta),
        min_monotonicity=float(mono.min()),
        max_continuity=float(cont.max()),
        violation=bool(mono.min() <= 0.0))
