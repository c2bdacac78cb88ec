import numpy as np
import pytest

from hk import _fem
from hk.constitutive import ElasticTensorField, Geometry, OperatorSpec
from hk.core_fields import DomainGrid, ScalarField
from hk.fine_scale import (OscillatoryMap, maxwell_stress,
                           solve_fine_elasticity, solve_fine_electrostatic,
                           weak_interface_balance)

from oracles import manufactured_elasticity, manufactured_laplace

LAMINATE = Geometry(kind="laminate", fraction=0.5)
UNIFORM = Geometry("uniform")


def identity_spec():
    return OperatorSpec(family="linear", geometry=UNIFORM, sigma=(1.0, 1.0))


def l2_error_nodal(dom, values, exact_fn):
    pts = dom.node_coords()
    err = values - exact_fn(pts[:, 0], pts[:, 1])
    return _fem.lp_norm_qp(dom.h, _fem.qp_values(err, dom.conn), 2.0)


def test_zero_source_zero_solution():
    dom = DomainGrid(16)
    sol = solve_fine_electrostatic(identity_spec(), 0.25, 0.0, dom)
    assert np.abs(sol.potential.values).max() < 1e-14


def test_manufactured_laplace_second_order():
    phi, f = manufactured_laplace()
    errs = []
    for n in (16, 32, 64):
        dom = DomainGrid(n)
        sol = solve_fine_electrostatic(identity_spec(), 0.25, f, dom)
        errs.append(l2_error_nodal(dom, sol.potential.values,
                                   lambda x, y: phi(x, y)))
    rate1 = np.log2(errs[0] / errs[1])
    rate2 = np.log2(errs[1] / errs[2])
    assert 1.8 <= rate1 <= 2.2
    assert 1.8 <= rate2 <= 2.2


def test_constant_coefficients_eps_independent():
    spec = OperatorSpec(family="power-law", p=3.0, alpha=1.0,
                        geometry=UNIFORM, sigma=(2.0, 2.0))
    dom = DomainGrid(32)
    sols = [solve_fine_electrostatic(spec, eps, 1.0, dom)
            for eps in (0.5, 0.25, 0.125)]
    for s in sols[1:]:
        assert np.abs(s.potential.values
                      - sols[0].potential.values).max() < 1e-12


def test_nonlinear_laminate_converges():
    spec = OperatorSpec(family="power-law", p=3.0, alpha=1.0,
                        geometry=LAMINATE, sigma=(1.0, 4.0))
    dom = DomainGrid(64)
    sol = solve_fine_electrostatic(spec, 0.25, 1.0, dom)
    assert sol.residuals["electrostatic"] <= 1e-10
    assert sol.residuals["electrostatic_max_nodal"] <= 1e-9


def test_weak_interface_balance_small_after_convergence():
    spec = OperatorSpec(family="linear", geometry=LAMINATE, sigma=(1.0, 4.0))
    dom = DomainGrid(64)
    sol = solve_fine_electrostatic(spec, 0.25, 1.0, dom)
    assert weak_interface_balance(spec, 0.25, sol.potential, 1.0, dom) <= 1e-8


def test_energy_bound_uniform_across_ladder():
    spec = OperatorSpec(family="linear", geometry=LAMINATE, sigma=(1.0, 4.0))
    ratios = []
    for eps in (0.25, 0.125, 0.0625, 0.03125):
        dom = DomainGrid(int(8 / eps))
        sol = solve_fine_electrostatic(spec, eps, 1.0, dom)
        ratios.append(sol.energy["ratio"])
    ratios = np.array(ratios)
    assert ratios.max() / ratios.min() < 1.05
    assert np.all(np.diff(ratios) < 0.05 * ratios[0])  # no growth


def test_oscillatory_map_rejects_aliasing():
    with pytest.raises(ValueError, match="incommensurate"):
        OscillatoryMap(DomainGrid(30), 1.0 / 7.0)
    with pytest.raises(ValueError, match="aliasing"):
        OscillatoryMap(DomainGrid(24), 0.25, Geometry("square", size=0.3))


def test_maxwell_stress_affine():
    dom = DomainGrid(8)
    pts = dom.node_coords()
    phi = ScalarField(dom, pts[:, 0] + 2.0 * pts[:, 1])
    sigma = maxwell_stress(phi)
    assert np.abs(sigma - np.array([[1.0, 2.0], [2.0, 4.0]])).max() < 1e-12


def test_maxwell_stress_trace_and_rank():
    dom = DomainGrid(16)
    rng = np.random.default_rng(11)
    phi = ScalarField(dom, rng.standard_normal(dom.n_nodes))
    sigma = maxwell_stress(phi)
    grad = _fem.qp_gradient(phi.values, dom.conn, dom.h)
    trace = sigma[..., 0, 0] + sigma[..., 1, 1]
    norms = np.einsum("eqd,eqd->eq", grad, grad)
    assert np.abs(trace - norms).max() < 1e-14 * max(1, norms.max())
    det = (sigma[..., 0, 0] * sigma[..., 1, 1]
           - sigma[..., 0, 1] * sigma[..., 1, 0])
    assert np.abs(det).max() < 1e-12 * max(1.0, norms.max() ** 2)
    assert np.abs(sigma - np.swapaxes(sigma, -1, -2)).max() == 0.0


# -- elasticity ---------------------------------------------------------------

def uniform_b(lam=1.0, mu=1.0):
    return ElasticTensorField.from_lame((lam, mu), geometry=UNIFORM)


def test_elasticity_zero_loads():
    dom = DomainGrid(16)
    sigma = np.zeros((dom.n_elems, 4, 2, 2))
    u, resid = solve_fine_elasticity(uniform_b(), uniform_b(), 0.25,
                                     np.zeros(2), sigma, dom)
    assert np.abs(u.values).max() < 1e-14


def test_elasticity_manufactured_second_order():
    lam, mu = 1.0, 1.0
    u_exact, g = manufactured_elasticity(lam, mu)
    zero_c = ElasticTensorField.from_lame((0.0, 0.0), geometry=UNIFORM)
    errs = []
    for n in (16, 32, 64):
        dom = DomainGrid(n)
        sigma = np.zeros((dom.n_elems, 4, 2, 2))
        u, _ = solve_fine_elasticity(uniform_b(lam, mu), zero_c, 0.25,
                                     lambda x, y: g(x, y), sigma, dom)
        pts = dom.node_coords()
        err = u.values - u_exact(pts[:, 0], pts[:, 1])
        e_qp = _fem.qp_values(err, dom.conn)
        errs.append(_fem.lp_norm_qp(dom.h, e_qp, 2.0))
    rate1 = np.log2(errs[0] / errs[1])
    rate2 = np.log2(errs[1] / errs[2])
    assert 1.8 <= rate1 <= 2.2
    assert 1.8 <= rate2 <= 2.2


def test_elasticity_linear_in_load():
    dom = DomainGrid(16)
    rng = np.random.default_rng(12)
    grad = rng.standard_normal((dom.n_elems, 4, 2))
    sigma = np.einsum("eqc,eqd->eqcd", grad, grad)
    b = ElasticTensorField.from_lame((1.0, 1.0), (3.0, 2.0), LAMINATE)
    c = ElasticTensorField.from_lame((0.5, 0.5), (1.5, 1.0), LAMINATE)
    u1, _ = solve_fine_elasticity(b, c, 0.25, np.zeros(2), sigma, dom)
    u2, _ = solve_fine_elasticity(b, c, 0.25, np.zeros(2), 2.0 * sigma, dom)
    assert np.abs(u2.values - 2.0 * u1.values).max() < 1e-12
