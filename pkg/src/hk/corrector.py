"""Coarse-scale averaging, two-scale composition, and corrector studies.

The microstructure cells are the eps-dilates of the unit cell centered
on the lattice eps*Z^2, so their boundaries sit at eps*(i +- 1/2); cells
straddling the domain boundary form the boundary layer and are treated
specially (zero loading / zero averages, as the averaging operators
require).  All error norms are L^p quadrature sums over the full domain;
interior-only variants are reported as diagnostics to expose the
boundary-layer contribution.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _fem
from ._fem import contract as _contract
from .core_fields import CellGrid, DomainGrid, ScalarField, sample_oscillatory
from .constitutive import wrap_to_cell


# ---------------------------------------------------------------------------
# The eps-cell partition (offset lattice)
# ---------------------------------------------------------------------------

class EpsPartition:
    """Cells eps*([-1/2,1/2]^2 + i) intersected with the unit square.

    Axis index c = floor(x/eps + 1/2) in 0..1/eps; indices 0 and 1/eps
    are boundary-layer cells (half outside the domain).
    """

    def __init__(self, eps):
        inv = 1.0 / eps
        if abs(inv - round(inv)) > 1e-12:
            raise ValueError(f"1/eps must be an integer, got eps={eps}")
        self.eps = float(eps)
        self.per_axis = int(round(inv)) + 1
        self.n_cells = self.per_axis ** 2
        axis = np.arange(self.per_axis)
        self.axis_interior = (axis >= 1) & (axis <= self.per_axis - 2)
        interior = self.axis_interior[:, None] & self.axis_interior[None, :]
        self.interior = interior.ravel()  # id = cy * per_axis + cx

    def cell_of(self, points):
        """Flat cell ids for points in the closed unit square."""
        pts = np.asarray(points, dtype=float)
        cx = np.clip(np.floor(pts[..., 0] / self.eps + 0.5).astype(int),
                     0, self.per_axis - 1)
        cy = np.clip(np.floor(pts[..., 1] / self.eps + 0.5).astype(int),
                     0, self.per_axis - 1)
        return cy * self.per_axis + cx

    def centers(self):
        axis = np.arange(self.per_axis) * self.eps
        cx, cy = np.meshgrid(axis, axis, indexing="xy")
        return np.stack([cx.ravel(), cy.ravel()], axis=-1)


@dataclass
class CellwiseConstant:
    """A field constant on each eps-cell (the range of the cell averager)."""

    partition: EpsPartition
    values: np.ndarray          # (n_cells, ...) per flat cell id

    def at_points(self, points):
        return self.values[self.partition.cell_of(points)]

    def at_quadrature(self, domain):
        return self.values[self.partition.cell_of(domain.qp_coords())]


def coarse_average_M(v, domain, eps):
    """Average a field over each eps-cell; boundary-layer cells carry 0.

    ``v`` is a field on ``domain`` or quadrature data (nel, 4, ...).
    Averages use the quadrature measure of the part of each cell inside
    the domain.  Applying the operator to its own output is the identity
    (cellwise-constant inputs are fixed points, exactly).
    """
    if isinstance(v, CellwiseConstant):
        if v.partition.eps == eps:
            return v
        v = v.at_quadrature(domain)
    part = EpsPartition(eps)
    data = v if isinstance(v, np.ndarray) else v.at_quadrature()
    ids = part.cell_of(domain.qp_coords())
    w = np.broadcast_to(domain.rule.weights, ids.shape)
    comp_shape = data.shape[2:]
    sums = np.zeros((part.n_cells,) + comp_shape)
    w_full = w[(...,) + (None,) * len(comp_shape)]
    np.add.at(sums, ids.ravel(), (w_full * data).reshape((-1,) + comp_shape))
    meas = np.zeros(part.n_cells)
    np.add.at(meas, ids.ravel(), w.ravel())
    safe = np.where(meas > 0.0, meas, 1.0)
    means = sums / safe[(...,) + (None,) * len(comp_shape)]
    means[~part.interior] = 0.0
    return CellwiseConstant(part, means)


def eps_cell_table_average(table, sample_grid, eps, zero_boundary=False):
    """Average rows of a per-sample-point table over eps-cells.

    ``table`` has one row per quadrature point of ``sample_grid`` (the
    layout produced by corrector reconstruction).  Boundary-layer cells
    average over the sample points inside the domain (renormalized), or
    carry zero rows when ``zero_boundary``.
    Returns (cell_table (n_cells, ...), partition).
    """
    part = EpsPartition(eps)
    pts = sample_grid.qp_coords().reshape(-1, 2)
    ids = part.cell_of(pts)
    counts = np.bincount(ids, minlength=part.n_cells).astype(float)
    comp_shape = table.shape[1:]
    sums = np.zeros((part.n_cells,) + comp_shape)
    np.add.at(sums, ids, table)
    safe = np.where(counts > 0.0, counts, 1.0)
    means = sums / safe[(...,) + (None,) * len(comp_shape)]
    if zero_boundary:
        means[~part.interior] = 0.0
    return means, part


def coarse_average_MM(table, sample_grid, eps):
    """Coarse-scale averaging in the macroscopic variable only.

    ``table[k]`` holds the unit-cell data attached to sample quadrature
    point k; the output attaches to each eps-cell the mean of the rows
    whose sample point falls in that cell (renormalized over the domain
    part for boundary-layer cells).  Returns (cell_table, partition).
    """
    return eps_cell_table_average(table, sample_grid, eps, zero_boundary=False)


# ---------------------------------------------------------------------------
# Two-scale composition (unfolding)
# ---------------------------------------------------------------------------

@dataclass
class UnfoldedField:
    """v(eps*[x/eps] + eps*y) sampled on the fine quadrature layout.

    ``values[c]`` is the unit-cell trace of v over interior cell c,
    arranged as (elements-per-cell, 4, ...) in unit-cell element order.
    """

    eps: float
    cells: np.ndarray           # interior flat cell ids
    values: np.ndarray          # (n_interior_cells, m*m, 4, ...)
    weight: float               # quadrature weight per point in y-units

    def norm_lp(self, p):
        mag = np.abs(self.values) if self.values.ndim == 3 else np.sqrt(
            _contract("cmq...i,cmq...i->cmq...", self.values, self.values))
        return float((self.eps ** 2 * self.weight * (mag ** p).sum())
                     ** (1.0 / p))


def two_scale_compose_S(v, eps):
    """Unfold a fine-scale field onto (interior eps-cells) x (unit cell).

    The composition is a rearrangement of quadrature values, so L^p norms
    over whole cells are preserved exactly.  Requires the fine grid to
    resolve each eps-period (N * eps integer).
    """
    domain = v.grid if not isinstance(v, np.ndarray) else None
    if domain is None:
        raise ValueError("two_scale_compose_S expects a field")
    data = v.at_quadrature()
    part = EpsPartition(eps)
    n = domain.n
    m = n * eps
    if abs(m - round(m)) > 1e-9:
        raise ValueError("fine grid does not resolve the eps-cells")
    m = int(round(m))
    # element (ex, ey) belongs to cell (cx, cy) with offset (ox, oy)
    ex = np.arange(n)
    cxa = (ex + m // 2) // m
    oxa = (ex + m // 2) % m
    ex_grid, ey_grid = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    cid = (cxa[ey_grid] * part.per_axis + cxa[ex_grid]).ravel()
    # unit-cell element index: offsets count from the cell's lower-left
    off = (oxa[ey_grid] * m + oxa[ex_grid]).ravel()
    keep = part.interior[cid]
    cells = np.unique(cid[keep])
    cell_pos = np.full(part.n_cells, -1)
    cell_pos[cells] = np.arange(cells.size)
    comp_shape = data.shape[2:]
    values = np.zeros((cells.size, m * m, 4) + comp_shape)
    values[cell_pos[cid[keep]], off[keep]] = data.reshape(
        (n * n, 4) + comp_shape)[keep]
    weight = (1.0 / m) ** 2 / 4.0
    return UnfoldedField(eps, cells, values, weight)


# ---------------------------------------------------------------------------
# Corrector error norms
# ---------------------------------------------------------------------------

def _fine_qp_setup(phi_eps, phi0, corr, eps, grad0_field=None):
    from .homogenized import _gradient_at
    domain = phi_eps.grid
    pts = domain.qp_coords().reshape(-1, 2)
    grad_eps = _fem.qp_gradient(phi_eps.values, domain.conn,
                                domain.h).reshape(-1, 2)
    grad0 = _gradient_at(phi0, grad0_field, pts)
    # sample quadrature point containing each fine point (quadrant lookup)
    ns = corr.sample_grid.n
    ix = np.clip((pts[:, 0] * 2 * ns).astype(int), 0, 2 * ns - 1)
    iy = np.clip((pts[:, 1] * 2 * ns).astype(int), 0, 2 * ns - 1)
    sample_idx = ((iy // 2) * ns + ix // 2) * 4 + (iy % 2) * 2 + (ix % 2)
    y = wrap_to_cell(pts / eps)
    return domain, pts, grad_eps, grad0, sample_idx, y


def _table_grad_at(tables, row_idx, cell_grid, y):
    """Gradient of table rows (Q1 fields on the unit cell) at points y."""
    elem, local = _fem.locate_points(y, cell_grid.n, cell_grid.h,
                                     cell_grid.origin)
    conn = cell_grid.conn[elem]
    vals = tables[row_idx[:, None], conn]
    grad = _fem.shape_grad_at(local) / cell_grid.h
    return _contract("mad,ma->md", grad, vals)


def _lp_of(diff, domain, p, mask=None):
    w = np.broadcast_to(domain.rule.weights,
                        (domain.n_elems, 4)).reshape(-1)
    mag = np.sqrt(np.sum(diff * diff, axis=-1))
    if mask is not None:
        w = w * mask
    return float((w @ (mag ** p)) ** (1.0 / p))


def corrector_error_explicit(phi_eps, phi0, corr, eps, p, grad0_field=None):
    """Explicit and averaged corrector errors plus the no-corrector error.

    E_exp = || grad phi_eps - grad phi0 - grad_y phi1(x, x/eps) ||_Lp with
    the corrector read from the cell solution attached to the sample
    point of x; E_avg first averages the corrector over each eps-cell in
    the macroscopic variable; E_nocorr drops the corrector entirely.
    Interior-only variants (over cells fully inside the domain) expose
    the boundary-layer contribution.
    """
    domain, pts, grad_eps, grad0, sample_idx, y = _fine_qp_setup(
        phi_eps, phi0, corr, eps, grad0_field)
    grad_y = _table_grad_at(corr.potentials, sample_idx, corr.cell_grid, y)
    avg_tables, part = coarse_average_MM(corr.potentials,
                                         corr.sample_grid, eps)
    cell_ids = part.cell_of(pts)
    grad_y_avg = _table_grad_at(avg_tables, cell_ids, corr.cell_grid, y)
    interior = part.interior[cell_ids].astype(float)
    diff_exp = grad_eps - grad0 - grad_y
    diff_avg = grad_eps - grad0 - grad_y_avg
    diff_no = grad_eps - grad0
    return {
        "E_exp": _lp_of(diff_exp, domain, p),
        "E_avg": _lp_of(diff_avg, domain, p),
        "E_nocorr": _lp_of(diff_no, domain, p),
        "E_exp_interior": _lp_of(diff_exp, domain, p, interior),
        "E_avg_interior": _lp_of(diff_avg, domain, p, interior),
    }


def corrector_error_dalmaso(phi_eps, phi0, law, corr, eps, p,
                            grad0_field=None):
    """Cell-averaged-loading corrector error.

    The macroscopic gradient is averaged over each eps-cell (zero on
    boundary-layer cells), one cell solve is attached per cell at the
    averaged loading, and the flux map loading + grad_y eta replaces the
    fine gradient.  Loading averages are quadrature-exact when the cells
    align with the sample grid's elements.
    """
    domain, pts, grad_eps, grad0, sample_idx, y = _fine_qp_setup(
        phi_eps, phi0, corr, eps, grad0_field)
    cell_loadings, part = eps_cell_table_average(
        corr.loadings, corr.sample_grid, eps, zero_boundary=True)
    tables = law.solutions_for(cell_loadings)
    cell_ids = part.cell_of(pts)
    grad_y = _table_grad_at(tables, cell_ids, corr.cell_grid, y)
    flux_map = cell_loadings[cell_ids] + grad_y
    return _lp_of(grad_eps - flux_map, domain, p)


# ---------------------------------------------------------------------------
# Two-scale pairings
# ---------------------------------------------------------------------------

def two_scale_pairing(v, psi_x, psi_y, eps, domain=None):
    """∫ v(x) psi_x(x) psi_y(x/eps) dx by fine-grid quadrature.

    ``v`` is a field (or quadrature data with ``domain`` given); the test
    factors are smooth closed-form callables of (x1, x2) and (y1, y2).
    """
    if domain is None:
        domain = v.grid
    data = v if isinstance(v, np.ndarray) else v.at_quadrature()
    pts = domain.qp_coords()
    y = wrap_to_cell(pts / eps)
    weights = psi_x(pts[..., 0], pts[..., 1]) * psi_y(y[..., 0], y[..., 1])
    return float(_fem.integrate_qp(domain.h, data * weights))


def pairing_limit(g_field, psi_x, psi_y, resolution=256):
    """(1/|Y|) ∫∫ g(y) psi_x(x) psi_y(y) dy dx for a separable limit.

    The x-factor integral uses an independent high-resolution quadrature;
    the y-factor integrates the interpolated unit-cell field against the
    closed-form test factor.
    """
    ref = DomainGrid(resolution)
    pts = ref.qp_coords()
    int_x = _fem.integrate_qp(ref.h, psi_x(pts[..., 0], pts[..., 1]))
    cg = g_field.grid
    ypts = cg.qp_coords()
    gy = g_field.at_quadrature() * psi_y(ypts[..., 0], ypts[..., 1])
    return float(int_x * _fem.integrate_qp(cg.h, gy))


def maxwell_two_scale_check(sigma_qp, domain, eps, corr, phi0, psi_x, psi_y,
                            chunk=2048):
    """Entrywise two-scale pairing gap for the electric stress.

    Compares ∫ Sigma_eps psi_x(x) psi_y(x/eps) dx against the pairing of
    the reconstructed two-scale stress (grad phi0 + grad_y phi1) tensored
    with itself, attached at sample quadrature points.  Returns the max
    absolute entry of the difference.
    """
    pts = domain.qp_coords()
    y = wrap_to_cell(pts / eps)
    weights = psi_x(pts[..., 0], pts[..., 1]) * psi_y(y[..., 0], y[..., 1])
    lhs = _fem.integrate_qp(domain.h,
                            weights[..., None, None] * sigma_qp)

    sample = corr.sample_grid
    spts = sample.qp_coords().reshape(-1, 2)
    wx = np.broadcast_to(sample.rule.weights,
                         (sample.n_elems, 4)).reshape(-1)
    fx = psi_x(spts[:, 0], spts[:, 1]) * wx
    cg = corr.cell_grid
    ypts = cg.qp_coords()
    wy = np.broadcast_to(cg.rule.weights, (cg.n_elems, 4))
    fy = psi_y(ypts[..., 0], ypts[..., 1]) * wy
    rhs = np.zeros((2, 2))
    for start in range(0, spts.shape[0], chunk):
        sl = slice(start, min(start + chunk, spts.shape[0]))
        idx = np.arange(sl.start, sl.stop)
        grad_fields = corr.grad_y_fields(idx)          # (k, nel_c, 4, 2)
        total = grad_fields + corr.loadings[sl][:, None, None, :]
        outer = _contract("keqc,keqd->keqcd", total, total)
        rhs += _contract("k,eq,keqcd->cd", fx[sl], fy, outer)
    return float(np.abs(lhs - rhs).max())


def functional_pairing(u, psi):
    """∫ psi . u dx for a vector field and a closed-form vector test."""
    domain = u.grid
    pts = domain.qp_coords()
    test = np.stack(psi(pts[..., 0], pts[..., 1]), axis=-1)
    vals = u.at_quadrature()
    return float(_fem.integrate_qp(domain.h,
                                   _contract("eqc,eqc->eq", vals, test)))


def fit_rate(ladder, errors):
    """Least-squares slope of log(error) against log(eps).

    Returns None when the rate is degenerate (an error hit zero, i.e.
    the discretization floor).
    """
    ladder = np.asarray(ladder, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ladder.size < 3:
        raise ValueError("rate fit needs at least 3 ladder points")
    if np.any(errors <= 0.0):
        return None
    slope = np.polyfit(np.log(ladder), np.log(errors), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# The eps-sweep study
# ---------------------------------------------------------------------------

def study_source(x1, x2):
    """Smooth interior charge bump with unit mean, zero on the boundary."""
    return (1.0 - np.cos(2.0 * np.pi * x1)) * (1.0 - np.cos(2.0 * np.pi * x2))


def _default_psi_x(x1, x2):
    return 16.0 * x1 * (1.0 - x1) * x2 * (1.0 - x2)


def _default_psi_y_pairing(y1, y2):
    return np.sin(2.0 * np.pi * y1)


def _default_psi_y_maxwell(y1, y2):
    return 1.0 + 0.5 * np.sin(2.0 * np.pi * y1)


def _default_psi_vec(x1, x2):
    s = np.sin(np.pi * x1) * np.sin(np.pi * x2)
    return (s, s)


@dataclass
class CorrectorReport:
    """Per-eps corrector errors, fitted rates, and pairing diagnostics."""

    ladder: list
    errors: dict                 # name -> list aligned with ladder
    rates: dict                  # name -> slope or None (floor reached)
    pairing_values: list
    pairing_limit: float
    pairing_gaps: list
    maxwell_gaps: list
    elasticity_gaps: list
    energy_ratios: list
    fine_residuals: list
    cell_residual_max: float
    identity_residual_max: float
    macro_iterations: int
    macro_history: list
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "ladder": list(self.ladder),
            "errors": {k: list(v) for k, v in self.errors.items()},
            "rates": dict(self.rates),
            "pairing": {
                "values": list(self.pairing_values),
                "limit": self.pairing_limit,
                "gaps": list(self.pairing_gaps),
            },
            "maxwell_gaps": list(self.maxwell_gaps),
            "elasticity_gaps": list(self.elasticity_gaps),
            "energy_ratios": list(self.energy_ratios),
            "fine_residuals": list(self.fine_residuals),
            "cell_residual_max": self.cell_residual_max,
            "identity_residual_max": self.identity_residual_max,
            "macro_iterations": self.macro_iterations,
            "macro_history": list(self.macro_history),
            "provenance": dict(self.provenance),
        }


def run_corrector_study(spec, ladder, cell_n=8, fine_m=16, solve_n=32,
                        sample_n=64, f=None, tensor_b=None, tensor_c=None,
                        g_src=(0.0, -1.0), variant="C-applied", p_norm=None,
                        cell_opts=None, macro_opts=None, threads=1,
                        recover_gradient=True,
                        psi_x=_default_psi_x,
                        psi_y_pairing=_default_psi_y_pairing,
                        psi_y_maxwell=_default_psi_y_maxwell,
                        psi_vec=_default_psi_vec):
    """Run the eps-sweep corrector verification for one operator family.

    Grids: unit-cell solves on cell_n, fine meshes with fine_m elements
    per eps-period, the effective solve on solve_n, corrector sampling on
    sample_n (one cell solve per sample quadrature point).  When elastic
    tensors are supplied, the coupled system is solved on each rung and
    the weak-convergence functional gap reported alongside the electric
    stress pairing gap.

    The default source is a smooth interior bump (mean 1, vanishing on
    the boundary), which keeps the boundary layer from dominating the
    error ladders; ``recover_gradient`` evaluates the macroscopic
    gradient by nodal averaging so the effective solve's raw gradient
    error stays below the corrector errors being measured.
    """
    # local imports keep module import cheap and avoid cycles
    from .cell_problems import SolverOptions
    from .effective import EffectiveLaw, assemble_B_hom, assemble_C_hom
    from .fine_scale import solve_fine_electrostatic, solve_fine_elasticity
    from .homogenized import (macroscopic_gradient_field, reconstruct_phi1,
                              solve_homogenized_elasticity,
                              solve_homogenized_electrostatic)

    if f is None:
        f = study_source

    ladder = sorted(ladder, reverse=True)
    if len(ladder) < 2 or any(e2 >= e1 for e1, e2 in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly decreasing with >= 2 rungs")
    if fine_m < 4 or fine_m & (fine_m - 1):
        raise ValueError("fine_m must be a power of two >= 4")
    p_norm = p_norm or spec.p
    cell_opts = cell_opts or SolverOptions()
    for eps in ladder:
        if abs(fine_m / eps - round(fine_m / eps)) > 1e-9:
            raise ValueError(f"fine_m={fine_m} incommensurate with eps={eps}")
        if abs(sample_n * eps / 2 - round(sample_n * eps / 2)) > 1e-9:
            raise ValueError(
                f"sample grid {sample_n} does not align with eps={eps} cells")
    if sample_n % solve_n != 0:
        raise ValueError("sample grid must refine the solve grid")

    cell_grid = CellGrid(cell_n)
    law = EffectiveLaw(spec, cell_grid, cell_opts)
    solve_grid = DomainGrid(solve_n)
    macro = solve_homogenized_electrostatic(law, f, solve_grid, macro_opts)
    phi0 = macro.potential
    grad_field = macroscopic_gradient_field(phi0) if recover_gradient else None
    sample_grid = DomainGrid(sample_n)
    corr = reconstruct_phi1(law, phi0, cell_grid, sample_grid=sample_grid,
                            gradient_field=grad_field)

    with_elasticity = tensor_b is not None and tensor_c is not None
    u0 = None
    u0_pairing = 0.0
    if with_elasticity:
        b_eff = assemble_B_hom(tensor_b, cell_grid, cell_opts)
        c_eff = assemble_C_hom(tensor_c, spec, cell_grid, variant, cell_opts)
        u0, _ = solve_homogenized_elasticity(b_eff, c_eff, g_src, phi0,
                                             solve_grid, cell_opts,
                                             gradient_field=grad_field)
        u0_pairing = functional_pairing(u0, psi_vec)

    g_pair = ScalarField(CellGrid(fine_m), np.sin(
        2.0 * np.pi * CellGrid(fine_m).node_coords()[:, 0]))
    limit = pairing_limit(g_pair, psi_x, psi_y_pairing)

    def one_rung(eps):
        domain = DomainGrid(int(round(fine_m / eps)))
        fine = solve_fine_electrostatic(spec, eps, f, domain, cell_opts)
        errs = corrector_error_explicit(fine.potential, phi0, corr, eps,
                                        p_norm, grad0_field=grad_field)
        errs["E_dm"] = corrector_error_dalmaso(fine.potential, phi0, law,
                                               corr, eps, p_norm,
                                               grad0_field=grad_field)
        v_eps = sample_oscillatory(g_pair, eps, domain)
        pairing = two_scale_pairing(v_eps, psi_x, psi_y_pairing, eps)
        mw_gap = maxwell_two_scale_check(fine.maxwell, domain, eps, corr,
                                         phi0, psi_x, psi_y_maxwell)
        el_gap = None
        if with_elasticity:
            u_eps, _ = solve_fine_elasticity(tensor_b, tensor_c, eps, g_src,
                                             fine.maxwell, domain, cell_opts)
            el_gap = abs(functional_pairing(u_eps, psi_vec) - u0_pairing)
        return {
            "errs": errs,
            "pairing": pairing,
            "maxwell": mw_gap,
            "elastic": el_gap,
            "energy": fine.energy["ratio"],
            "residual": fine.residuals["electrostatic"],
        }

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rungs = list(pool.map(one_rung, ladder))
    else:
        rungs = [one_rung(eps) for eps in ladder]

    names = ("E_exp", "E_avg", "E_dm", "E_nocorr", "E_exp_interior",
             "E_avg_interior")
    errors = {name: [r["errs"][name] for r in rungs] for name in names}
    rates = {name: fit_rate(ladder, errors[name]) if len(ladder) >= 3 else None
             for name in ("E_exp", "E_avg", "E_dm")}
    pairing_values = [r["pairing"] for r in rungs]
    report = CorrectorReport(
        ladder=list(ladder),
        errors=errors,
        rates=rates,
        pairing_values=pairing_values,
        pairing_limit=limit,
        pairing_gaps=[abs(v - limit) for v in pairing_values],
        maxwell_gaps=[r["maxwell"] for r in rungs],
        elasticity_gaps=[r["elastic"] for r in rungs] if with_elasticity
        else [],
        energy_ratios=[r["energy"] for r in rungs],
        fine_residuals=[r["residual"] for r in rungs],
        cell_residual_max=float(corr.cell_residuals.max()),
        identity_residual_max=float(corr.identity_residuals.max()),
        macro_iterations=macro.iterations,
        macro_history=list(macro.residual_history),
        provenance={
            "cell_n": cell_n, "fine_m": fine_m, "solve_n": solve_n,
            "sample_n": sample_n, "p_norm": p_norm, "variant": variant,
            "operator": spec.fingerprint(),
            "law": law.provenance(),
        })
    return report
