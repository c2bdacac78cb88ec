"""Independent oracles used to freeze expected values.

Everything here is derived from one-dimensional flux/traction balance or
closed-form calculus, with no code shared with the package's assembly
and solver paths.
"""

import numpy as np


def laminate_flux_balance(sigmas, fractions, p, loading=1.0):
    """Effective axial response of a layered medium via constant flux.

    For layers normal to the first axis, the flux q = sigma |t|^{p-2} t is
    constant and the layer gradients t_k = (q / sigma_k)^{1/(p-1)} must
    average to the loading.  Returns (q, per-layer gradients t_k).
    """
    sigmas = np.asarray(sigmas, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    if loading <= 0:
        raise ValueError("oracle stated for positive axial loading")
    denom = float((fractions * sigmas ** (-1.0 / (p - 1.0))).sum())
    q = (loading / denom) ** (p - 1.0)
    t = (q / sigmas) ** (1.0 / (p - 1.0))
    return q, t


def laminate_transverse_mean(sigmas, fractions, p, loading=1.0):
    """Transverse response: no corrector, flux averages arithmetically."""
    sigmas = np.asarray(sigmas, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    return float((fractions * sigmas).sum()) * loading ** (p - 1.0)


def _iso_stress(lam, mu, strain):
    return lam * np.trace(strain) * np.eye(2) + 2.0 * mu * strain


def laminate_elastic_tensor(lame_a, lame_b, fractions=(0.5, 0.5)):
    """Effective elasticity of a two-layer isotropic laminate.

    Solved from first principles: within each layer the strain is the
    macroscopic strain E plus sym(c_k (x) e1) for a constant vector c_k;
    traction continuity across the interface plus zero-average
    compatibility determine c_1, c_2.  Returns the 3x3 response matrix on
    the symmetric-strain basis (E11, E22, E12) and an evaluator
    strain -> per-layer corrections.
    """
    th = np.asarray(fractions, dtype=float)
    lams = (lame_a[0], lame_b[0])
    mus = (lame_a[1], lame_b[1])
    e1 = np.array([1.0, 0.0])

    def solve_corrections(macro_strain):
        # unknowns [c1 (2), c2 (2)]; traction continuity + compatibility
        mat = np.zeros((4, 4))
        rhs = np.zeros(4)
        for k in range(2):
            sgn = 1.0 if k == 0 else -1.0
            for comp in range(2):
                c = np.zeros(2)
                c[comp] = 1.0
                strain = 0.5 * (np.outer(c, e1) + np.outer(e1, c))
                traction = _iso_stress(lams[k], mus[k], strain) @ e1
                mat[0:2, 2 * k + comp] = sgn * traction
        rhs[0:2] = -( _iso_stress(lams[0], mus[0], macro_strain)
                      - _iso_stress(lams[1], mus[1], macro_strain)) @ e1
        mat[2, 0] = th[0]
        mat[2, 2] = th[1]
        mat[3, 1] = th[0]
        mat[3, 3] = th[1]
        sol = np.linalg.solve(mat, rhs)
        return sol[:2], sol[2:]

    basis = [np.array([[1.0, 0.0], [0.0, 0.0]]),
             np.array([[0.0, 0.0], [0.0, 1.0]]),
             np.array([[0.0, 0.5], [0.5, 0.0]])]
    response = np.zeros((3, 3))
    for b_idx, macro in enumerate(basis):
        cs = solve_corrections(macro)
        stresses = []
        strains = []
        for k in range(2):
            extra = 0.5 * (np.outer(cs[k], e1) + np.outer(e1, cs[k]))
            strains.append(macro + extra)
            stresses.append(_iso_stress(lams[k], mus[k], macro + extra))
        mean_stress = th[0] * stresses[0] + th[1] * stresses[1]
        response[0, b_idx] = mean_stress[0, 0]
        response[1, b_idx] = mean_stress[1, 1]
        response[2, b_idx] = mean_stress[0, 1]
    return response, solve_corrections


def manufactured_laplace():
    """phi = sin(pi x) sin(pi y) solves -div(grad phi) = f with this f."""
    def phi(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def f(x, y):
        return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)

    return phi, f


def manufactured_elasticity(lam, mu):
    """u = (sin(pi x) sin(pi y), 0) under constant isotropic elasticity.

    Applying -div(B D(u)) by hand gives the body force returned here.
    """
    def u(x, y):
        return np.stack([np.sin(np.pi * x) * np.sin(np.pi * y),
                         np.zeros_like(x)], axis=-1)

    def g(x, y):
        g1 = (lam + 3.0 * mu) * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        g2 = -(lam + mu) * np.pi ** 2 * np.cos(np.pi * x) * np.cos(np.pi * y)
        return np.stack([g1, g2], axis=-1)

    return u, g
