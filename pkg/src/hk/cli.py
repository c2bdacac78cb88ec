"""Configuration, experiment orchestration, and reporting.

Usage: ``hk <subcommand> --config <path-or-preset> [--out DIR] [--threads K]``
with subcommands ``cell``, ``effective``, ``fine``, ``homogenized``,
``corrector-study``, and ``verify``.  Configs are JSON documents with a
versioned ``schema`` field; validation errors are reported with a
JSON-pointer path and exit code 3, solver non-convergence with exit
code 2.  Outputs are bitwise deterministic for a fixed config and seed.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .cell_problems import (SolverOptions, assemble_zeta, solve_elastic_cell_U,
                            solve_electrostriction_cell, solve_scalar_cell,
                            verify_flux_identity)
from .constitutive import (ElasticTensorField, Geometry, OperatorSpec,
                           check_growth_conditions)
from .core_fields import CellGrid, DomainGrid, ScalarField, dump_field
from .corrector import run_corrector_study, study_source
from .effective import (EffectiveLaw, assemble_B_hom, assemble_C_hom,
                        check_a_hom_properties, linear_case_b_hom)
from .errors import ConfigError, NonConvergence, SingularSystem
from .fine_scale import solve_fine_elasticity, solve_fine_electrostatic
from .homogenized import (MacroOptions, solve_homogenized_elasticity,
                          solve_homogenized_electrostatic)

SCHEMA_VERSION = 1

PRESETS = {
    "laminate-p2": {
        "schema": SCHEMA_VERSION,
        "seed": 0,
        "operator": {"family": "linear", "p": 2.0, "alpha": 1.0,
                     "sigma": [1.0, 4.0]},
        "geometry": {"kind": "laminate", "fraction": 0.5},
        "elasticity": {"B": {"matrix": [1.0, 1.0], "inclusion": [3.0, 2.0]},
                       "C": {"matrix": [0.5, 0.5], "inclusion": [1.5, 1.0]}},
        "grids": {"cell_n": 8, "fine_m": 16, "solve_n": 32, "sample_n": 64},
        "ladder": [0.25, 0.125, 0.0625, 0.03125],
        "tolerances": {"cell": 1e-10, "macro": 1e-9},
        "chom_variant": "C-applied",
        "sources": {"f": "bump", "g": [0.0, -1.0]},
    },
    "laminate-p3": {
        "schema": SCHEMA_VERSION,
        "seed": 0,
        "operator": {"family": "power-law", "p": 3.0, "alpha": 1.0,
                     "delta": 0.0, "sigma": [1.0, 4.0]},
        "geometry": {"kind": "laminate", "fraction": 0.5},
        "elasticity": {"B": {"matrix": [1.0, 1.0], "inclusion": [3.0, 2.0]},
                       "C": {"matrix": [0.5, 0.5], "inclusion": [1.5, 1.0]}},
        "grids": {"cell_n": 8, "fine_m": 16, "solve_n": 32, "sample_n": 64},
        "ladder": [0.25, 0.125, 0.0625, 0.03125],
        "tolerances": {"cell": 1e-10, "macro": 1e-9},
        "chom_variant": "C-applied",
        "sources": {"f": "bump", "g": [0.0, -1.0]},
    },
    "checkerboard-p2": {
        "schema": SCHEMA_VERSION,
        "seed": 0,
        "operator": {"family": "linear", "p": 2.0, "alpha": 1.0,
                     "sigma": [1.0, 4.0]},
        "geometry": {"kind": "checkerboard"},
        "elasticity": {"B": {"matrix": [1.0, 1.0], "inclusion": [3.0, 2.0]},
                       "C": {"matrix": [0.5, 0.5], "inclusion": [1.5, 1.0]}},
        "grids": {"cell_n": 16, "fine_m": 16, "solve_n": 32, "sample_n": 64},
        "ladder": [0.25, 0.125, 0.0625, 0.03125],
        "tolerances": {"cell": 1e-10, "macro": 1e-9},
        "chom_variant": "C-applied",
        "sources": {"f": "bump", "g": [0.0, -1.0]},
    },
    "variable-exponent": {
        "schema": SCHEMA_VERSION,
        "seed": 0,
        "operator": {"family": "variable-exponent", "p": 2.0, "alpha": 1.0,
                     "sigma": [1.0, 1.0], "exponent": [3.0, 2.0]},
        "geometry": {"kind": "square", "size": 0.5},
        "elasticity": {"B": {"matrix": [1.0, 1.0], "inclusion": [3.0, 2.0]},
                       "C": {"matrix": [0.5, 0.5], "inclusion": [1.5, 1.0]}},
        "grids": {"cell_n": 8, "fine_m": 16, "solve_n": 32, "sample_n": 64},
        "ladder": [0.25, 0.125, 0.0625],
        "tolerances": {"cell": 1e-10, "macro": 1e-9},
        "chom_variant": "C-applied",
        "sources": {"f": "bump", "g": [0.0, -1.0]},
    },
}


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

def _require(cfg, key, pointer, types=None):
    if key not in cfg:
        raise ConfigError(f"missing required field {key!r}", f"{pointer}/{key}")
    val = cfg[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(f"field {key!r} has wrong type", f"{pointer}/{key}")
    return val


def _positive(value, pointer):
    if not isinstance(value, (int, float)) or value <= 0:
        raise ConfigError("must be a positive number", pointer)
    return float(value)


def validate_config(cfg):
    """Validate a raw config dict; returns it with defaults filled in.

    Raises ConfigError with a JSON-pointer path on the first violation.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", "")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema (expected {SCHEMA_VERSION})",
                          "/schema")
    out = {"schema": SCHEMA_VERSION, "seed": int(cfg.get("seed", 0))}

    op = _require(cfg, "operator", "", dict)
    family = _require(op, "family", "/operator", str)
    if family not in ("linear", "power-law", "variable-exponent"):
        raise ConfigError(f"unknown family {family!r}", "/operator/family")
    p = _positive(_require(op, "p", "/operator"), "/operator/p")
    alpha = float(op.get("alpha", min(1.0, p - 1.0)))
    if not 0.0 <= alpha <= min(1.0, p - 1.0):
        raise ConfigError("alpha outside [0, min(1, p-1)]", "/operator/alpha")
    sigma = op.get("sigma", [1.0, 1.0])
    if not (isinstance(sigma, list) and len(sigma) == 2):
        raise ConfigError("sigma must be a [matrix, inclusion] pair",
                          "/operator/sigma")
    operator = {
        "family": family, "p": p, "alpha": alpha,
        "delta": float(op.get("delta", 0.0)),
        "sigma": [float(sigma[0]), float(sigma[1])],
    }
    if family == "variable-exponent":
        expo = _require(op, "exponent", "/operator", list)
        if len(expo) != 2 or not 2.0 <= float(expo[1]) <= float(expo[0]):
            raise ConfigError(
                "exponent must be [matrix, inclusion] with "
                "2 <= inclusion <= matrix", "/operator/exponent")
        operator["exponent"] = [float(expo[0]), float(expo[1])]
        if p != float(expo[1]):
            raise ConfigError("p must equal the inclusion exponent",
                              "/operator/p")
    if family == "linear" and "matrix" in op:
        operator["matrix"] = op["matrix"]
    structure = op.get("structure", {})
    operator["structure"] = {
        "lambda_o": _positive(structure.get("lambda_o", 1.0),
                              "/operator/structure/lambda_o"),
        "Lambda_o": _positive(structure.get("Lambda_o", 1.0),
                              "/operator/structure/Lambda_o"),
        "Lambda_star": _positive(structure.get("Lambda_star", 1.0),
                                 "/operator/structure/Lambda_star"),
    }
    out["operator"] = operator

    geom = cfg.get("geometry", {"kind": "uniform"})
    kind = geom.get("kind", "uniform")
    if kind not in ("uniform", "laminate", "square", "checkerboard", "disc"):
        raise ConfigError(f"unknown geometry kind {kind!r}", "/geometry/kind")
    out["geometry"] = {"kind": kind,
                       "fraction": float(geom.get("fraction", 0.5)),
                       "size": float(geom.get("size", 0.5))}

    elast = cfg.get("elasticity")
    if elast is not None:
        for name in ("B", "C"):
            block = _require(elast, name, "/elasticity", dict)
            for phase in ("matrix", "inclusion"):
                pair = _require(block, phase, f"/elasticity/{name}", list)
                if len(pair) != 2:
                    raise ConfigError("expected a [lam, mu] pair",
                                      f"/elasticity/{name}/{phase}")
        out["elasticity"] = elast
    else:
        out["elasticity"] = None

    grids = cfg.get("grids", {})
    out["grids"] = {
        "cell_n": int(grids.get("cell_n", 8)),
        "fine_m": int(grids.get("fine_m", 16)),
        "solve_n": int(grids.get("solve_n", 32)),
        "sample_n": int(grids.get("sample_n", 64)),
    }
    for key, val in out["grids"].items():
        if val < 2:
            raise ConfigError("grid sizes must be >= 2", f"/grids/{key}")
    for key in ("cell_n", "fine_m"):
        val = out["grids"][key]
        if val < 4 or val & (val - 1):
            raise ConfigError("must be a power of two >= 4", f"/grids/{key}")
    if out["grids"]["sample_n"] % out["grids"]["solve_n"] != 0:
        raise ConfigError("sample_n must be a multiple of solve_n",
                          "/grids/sample_n")

    ladder = cfg.get("ladder", [0.25, 0.125, 0.0625, 0.03125])
    if not isinstance(ladder, list) or not ladder:
        raise ConfigError("ladder must be a non-empty list", "/ladder")
    ladder = [float(e) for e in ladder]
    if any(e2 >= e1 for e1, e2 in zip(ladder, ladder[1:])):
        raise ConfigError("ladder must be strictly decreasing", "/ladder")
    for idx, eps in enumerate(ladder):
        if eps <= 0 or abs(1.0 / eps - round(1.0 / eps)) > 1e-12:
            raise ConfigError("1/eps must be a positive integer",
                              f"/ladder/{idx}")
        if abs(out["grids"]["fine_m"] / eps
               - round(out["grids"]["fine_m"] / eps)) > 1e-9:
            raise ConfigError("ladder incommensurate with fine_m",
                              f"/ladder/{idx}")
    out["ladder"] = ladder

    tols = cfg.get("tolerances", {})
    out["tolerances"] = {
        "cell": _positive(tols.get("cell", 1e-10), "/tolerances/cell"),
        "macro": _positive(tols.get("macro", 1e-9), "/tolerances/macro"),
    }
    variant = cfg.get("chom_variant", "C-applied")
    if variant not in ("C-applied", "as-written"):
        raise ConfigError("unknown electrostriction variant", "/chom_variant")
    out["chom_variant"] = variant

    sources = cfg.get("sources", {})
    f_src = sources.get("f", "constant:1.0")
    if isinstance(f_src, str) and f_src != "bump" \
            and not f_src.startswith("constant:"):
        raise ConfigError("f must be 'bump', 'constant:<v>', or a number",
                          "/sources/f")
    g_src = sources.get("g", [0.0, -1.0])
    if not (isinstance(g_src, list) and len(g_src) == 2):
        raise ConfigError("g must be a 2-vector", "/sources/g")
    out["sources"] = {"f": f_src, "g": [float(g_src[0]), float(g_src[1])]}
    return out


# ---------------------------------------------------------------------------
# Config -> model objects
# ---------------------------------------------------------------------------

def build_geometry(cfg):
    g = cfg["geometry"]
    return Geometry(kind=g["kind"], fraction=g["fraction"], size=g["size"])


def build_spec(cfg):
    op = cfg["operator"]
    geometry = build_geometry(cfg)
    kwargs = dict(family=op["family"], p=op["p"], alpha=op["alpha"],
                  delta=op["delta"], geometry=geometry,
                  sigma=tuple(op["sigma"]),
                  lambda_o=op["structure"]["lambda_o"],
                  Lambda_o=op["structure"]["Lambda_o"],
                  Lambda_star=op["structure"]["Lambda_star"])
    if op["family"] == "variable-exponent":
        kwargs["exponent"] = tuple(op["exponent"])
    if op["family"] == "linear" and "matrix" in op:
        mat = np.array(op["matrix"], dtype=float)
        kwargs["matrices"] = (mat, mat)
    return OperatorSpec(**kwargs)


def build_tensors(cfg):
    if cfg["elasticity"] is None:
        return None, None
    geometry = build_geometry(cfg)
    blocks = cfg["elasticity"]
    tb = ElasticTensorField.from_lame(tuple(blocks["B"]["matrix"]),
                                      tuple(blocks["B"]["inclusion"]),
                                      geometry)
    tc = ElasticTensorField.from_lame(tuple(blocks["C"]["matrix"]),
                                      tuple(blocks["C"]["inclusion"]),
                                      geometry)
    return tb, tc


def build_source_f(cfg):
    f_src = cfg["sources"]["f"]
    if f_src == "bump":
        return study_source
    if isinstance(f_src, str) and f_src.startswith("constant:"):
        return float(f_src.split(":", 1)[1])
    return float(f_src)


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def provenance_block(cfg):
    return {"config_hash": config_hash(cfg), "grids": cfg["grids"],
            "tolerances": cfg["tolerances"], "seed": cfg["seed"],
            "chom_variant": cfg["chom_variant"]}


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------

def write_json(payload, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_report(results, out_dir):
    """Write a report bundle: {relative path: dict (JSON) or str (text)}.

    File contents are bitwise deterministic for identical inputs (sorted
    keys, no timestamps).  Returns the written paths.
    """
    out_dir = Path(out_dir)
    written = []
    for rel, payload in sorted(results.items()):
        path = out_dir / rel
        if isinstance(payload, dict):
            write_json(payload, path)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(payload)
        written.append(path)
    return written


def write_corrector_csv(report, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("epsilon,E_exp,E_avg,E_dm,E_nocorr\n")
        for i, eps in enumerate(report.ladder):
            row = [eps, report.errors["E_exp"][i], report.errors["E_avg"][i],
                   report.errors["E_dm"][i], report.errors["E_nocorr"][i]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _tensor_nested(arr):
    return np.asarray(arr).tolist()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_cell(cfg, out_dir, threads):
    spec = build_spec(cfg)
    grid = CellGrid(cfg["grids"]["cell_n"])
    opts = SolverOptions(tol=cfg["tolerances"]["cell"])
    summary = {"provenance": provenance_block(cfg), "scalar": {},
               "elastic": {}, "electrostriction": {}}
    sols = []
    for k in range(2):
        sol = solve_scalar_cell(spec, np.eye(2)[k], grid, opts)
        sols.append(sol)
        name = f"cell_potential_e{k + 1}"
        dump_field(ScalarField(grid, sol.values), name,
                   str(out_dir / f"{name}.field"))
        summary["scalar"][f"e{k + 1}"] = {
            "residual": sol.residual, "iterations": sol.iterations,
            "flux_identity": verify_flux_identity(spec, np.eye(2)[k], sol),
        }
    tensor_b, tensor_c = build_tensors(cfg)
    if tensor_b is not None:
        from .core_fields import VectorField
        for (i, j) in ((0, 0), (1, 1), (0, 1)):
            sol = solve_elastic_cell_U(tensor_b, grid, i, j, opts)
            name = f"cell_displacement_{i + 1}{j + 1}"
            dump_field(VectorField(grid, sol.values), name,
                       str(out_dir / f"{name}.field"))
            summary["elastic"][f"{i + 1}{j + 1}"] = {
                "residual": sol.residual, "iterations": sol.iterations}
        for i in range(2):
            for j in range(2):
                zeta = assemble_zeta(i, j, sols[i], sols[j])
                chi = solve_electrostriction_cell(
                    tensor_c, zeta, grid, opts,
                    variant=cfg["chom_variant"], indices=(i, j))
                summary["electrostriction"][f"{i + 1}{j + 1}"] = {
                    "residual": chi.residual, "iterations": chi.iterations}
    write_json(summary, out_dir / "cell_report.json")
    return 0


def cmd_effective(cfg, out_dir, threads):
    spec = build_spec(cfg)
    grid = CellGrid(cfg["grids"]["cell_n"])
    opts = SolverOptions(tol=cfg["tolerances"]["cell"])
    law = EffectiveLaw(spec, grid, opts)
    report = {"provenance": provenance_block(cfg)}
    report["a_hom_unit_loadings"] = _tensor_nested(
        np.stack([law.eval(np.eye(2)[k]) for k in range(2)]))
    if spec.is_linear:
        report["b_hom"] = _tensor_nested(linear_case_b_hom(spec, grid, opts))
    props = check_a_hom_properties(law, m=100, seed=cfg["seed"])
    report["a_hom_properties"] = {
        "theta": props.theta, "pairs": props.pairs,
        "min_monotonicity": props.min_monotonicity,
        "max_continuity": props.max_continuity,
        "violation": props.violation,
    }
    tensor_b, tensor_c = build_tensors(cfg)
    if tensor_b is not None:
        b_eff = assemble_B_hom(tensor_b, grid, opts)
        report["B_hom"] = _tensor_nested(b_eff.tensor)
        both = {}
        for variant in ("C-applied", "as-written"):
            c_eff = assemble_C_hom(tensor_c, spec, grid, variant, opts)
            both[variant] = _tensor_nested(c_eff.pair_matrices)
        report["C_hom"] = both
        report["C_hom_default_variant"] = cfg["chom_variant"]
    write_json(report, out_dir / "effective.json")
    return 0


def cmd_fine(cfg, out_dir, threads):
    spec = build_spec(cfg)
    tensor_b, tensor_c = build_tensors(cfg)
    opts = SolverOptions(tol=cfg["tolerances"]["cell"])
    f = build_source_f(cfg)
    g = np.array(cfg["sources"]["g"])
    summary = {"provenance": provenance_block(cfg), "rungs": []}
    for eps in cfg["ladder"]:
        domain = DomainGrid(int(round(cfg["grids"]["fine_m"] / eps)))
        fine = solve_fine_electrostatic(spec, eps, f, domain, opts)
        entry = {"eps": eps, "grid_n": domain.n,
                 "residuals": fine.residuals,
                 "iterations": fine.iterations, "energy": fine.energy}
        tag = f"{int(round(1 / eps))}"
        dump_field(fine.potential, f"potential_eps_1_{tag}",
                   str(out_dir / f"fine_potential_eps_1_{tag}.field"))
        if tensor_b is not None:
            u, resid = solve_fine_elasticity(tensor_b, tensor_c, eps, g,
                                             fine.maxwell, domain, opts)
            entry["elastic_residual"] = resid
            dump_field(u, f"displacement_eps_1_{tag}",
                       str(out_dir / f"fine_displacement_eps_1_{tag}.field"))
        summary["rungs"].append(entry)
    write_json(summary, out_dir / "fine_report.json")
    return 0


def cmd_homogenized(cfg, out_dir, threads):
    spec = build_spec(cfg)
    grid = CellGrid(cfg["grids"]["cell_n"])
    opts = SolverOptions(tol=cfg["tolerances"]["cell"])
    law = EffectiveLaw(spec, grid, opts)
    domain = DomainGrid(cfg["grids"]["solve_n"])
    macro_opts = MacroOptions(tol=cfg["tolerances"]["macro"])
    f = build_source_f(cfg)
    macro = solve_homogenized_electrostatic(law, f, domain, macro_opts)
    report = {"provenance": provenance_block(cfg),
              "iterations": macro.iterations,
              "residual": macro.residual,
              "residual_history": macro.residual_history,
              "law": law.provenance()}
    dump_field(macro.potential, "effective_potential",
               str(out_dir / "effective_potential.field"))
    tensor_b, tensor_c = build_tensors(cfg)
    if tensor_b is not None:
        b_eff = assemble_B_hom(tensor_b, grid, opts)
        c_eff = assemble_C_hom(tensor_c, spec, grid, cfg["chom_variant"], opts)
        u0, resid = solve_homogenized_elasticity(
            b_eff, c_eff, np.array(cfg["sources"]["g"]), macro.potential,
            domain, opts)
        report["elastic_residual"] = resid
        dump_field(u0, "effective_displacement",
                   str(out_dir / "effective_displacement.field"))
    write_json(report, out_dir / "homogenized_report.json")
    return 0


def cmd_corrector_study(cfg, out_dir, threads):
    spec = build_spec(cfg)
    tensor_b, tensor_c = build_tensors(cfg)
    report = run_corrector_study(
        spec, cfg["ladder"],
        cell_n=cfg["grids"]["cell_n"], fine_m=cfg["grids"]["fine_m"],
        solve_n=cfg["grids"]["solve_n"], sample_n=cfg["grids"]["sample_n"],
        f=build_source_f(cfg), tensor_b=tensor_b, tensor_c=tensor_c,
        g_src=np.array(cfg["sources"]["g"]), variant=cfg["chom_variant"],
        cell_opts=SolverOptions(tol=cfg["tolerances"]["cell"]),
        macro_opts=MacroOptions(tol=cfg["tolerances"]["macro"]),
        threads=threads)
    write_corrector_csv(report, out_dir / "corrector_study.csv")
    payload = report.to_dict()
    payload["provenance"].update(provenance_block(cfg))
    write_json(payload, out_dir / "corrector_report.json")
    return 0


def cmd_verify(cfg, out_dir, threads):
    spec = build_spec(cfg)
    grid = CellGrid(cfg["grids"]["cell_n"])
    opts = SolverOptions(tol=cfg["tolerances"]["cell"])
    checks = {}
    ok = True

    reports = [check_growth_conditions(spec, m=1000, seed=cfg["seed"] + k)
               for k in range(3)]
    checks["growth_conditions"] = [
        {"seed": r.seed, "max_flux_at_zero": r.max_flux_at_zero,
         "empirical_continuity": r.empirical_continuity,
         "empirical_monotonicity": r.empirical_monotonicity,
         "violation": r.violation} for r in reports]
    ok &= not any(r.violation for r in reports)

    law = EffectiveLaw(spec, grid, opts)
    props = check_a_hom_properties(law, m=100, seed=cfg["seed"])
    checks["a_hom_properties"] = {
        "theta": props.theta, "min_monotonicity": props.min_monotonicity,
        "max_continuity": props.max_continuity, "violation": props.violation}
    ok &= not props.violation

    idents = {}
    for k in range(2):
        sol = solve_scalar_cell(spec, np.eye(2)[k], grid, opts)
        idents[f"e{k + 1}"] = verify_flux_identity(spec, np.eye(2)[k], sol)
    checks["flux_identities"] = idents
    ok &= all(v <= 1e-9 for v in idents.values())

    tensor_b, tensor_c = build_tensors(cfg)
    if tensor_b is not None:
        max_norm, min_ratio = tensor_b.audit_bounds(100, cfg["seed"])
        checks["elastic_tensor"] = {
            "symmetries": tensor_b.has_elastic_symmetries(),
            "max_norm": max_norm, "min_ellipticity_ratio": min_ratio}
        ok &= tensor_b.has_elastic_symmetries() and min_ratio > 0
        b_eff = assemble_B_hom(tensor_b, grid, opts)
        t = b_eff.tensor
        major = float(np.abs(t - np.transpose(t, (2, 3, 0, 1))).max())
        minor = float(np.abs(t - np.transpose(t, (1, 0, 2, 3))).max())
        mat = t.reshape(4, 4)
        sym_basis = np.array([[1, 0, 0, 0], [0, 0, 0, 1],
                              [0, 1 / np.sqrt(2), 1 / np.sqrt(2), 0]])
        gram = sym_basis @ mat @ sym_basis.T
        eigmin = float(np.linalg.eigvalsh(0.5 * (gram + gram.T)).min())
        checks["B_hom"] = {"major_symmetry_defect": major,
                           "minor_symmetry_defect": minor,
                           "min_eigenvalue_on_symmetric": eigmin}
        ok &= major <= 1e-10 and minor <= 1e-10 and eigmin > 0
    checks["pass"] = bool(ok)
    payload = {"provenance": provenance_block(cfg), "checks": checks}
    write_json(payload, out_dir / "verify.json")
    return 0 if ok else 2


COMMANDS = {
    "cell": cmd_cell,
    "effective": cmd_effective,
    "fine": cmd_fine,
    "homogenized": cmd_homogenized,
    "corrector-study": cmd_corrector_study,
    "verify": cmd_verify,
}


def load_config(path_or_preset):
    if path_or_preset in PRESETS and not os.path.exists(path_or_preset):
        return json.loads(json.dumps(PRESETS[path_or_preset]))
    try:
        with open(path_or_preset) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"config {path_or_preset!r} is neither a file nor a preset "
            f"({', '.join(sorted(PRESETS))})", "")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "")


def run(subcommand, config_path, out_dir="out", threads=1):
    """Execute one subcommand pipeline; returns the process exit code."""
    try:
        cfg = validate_config(load_config(config_path))
    except ConfigError as exc:
        print(f"config error at {exc.pointer or '/'}: {exc}", file=sys.stderr)
        return 3
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[subcommand](cfg, out, threads)
    except (NonConvergence, SingularSystem) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hk",
        description="Periodic homogenization experiments for coupled "
                    "electrostatic/elastic composites.")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True,
                        help="path to a JSON config, or a preset name: "
                             + ", ".join(sorted(PRESETS)))
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("HK_THREADS", "1")),
                        help="parallel ladder workers (HK_THREADS fallback)")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
