"""Command line entry point: ``bggprolong {algebra,prolong,verify,oracle} --config C --out DIR``.

Exit codes: 0 ok, 2 configuration or missing artifacts, 3 invariant failure or
verification mismatch, 4 numerical instability.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, _linalg
from .algebra import (
    ModuleSpec,
    build_algebra,
    build_module,
    cartan_product_projection,
    codifferential,
    delta_star,
    dimension_formula_table,
    hodge_decompose,
    lie_differential,
    module_dimension,
    phi_map,
    reference_standard_delta_star,
)
from .config import SCHEMA, load_config
from .errors import AlgebraInvariantError, BGGProlongError, ConfigError, DomainError, NumericalInstabilityError
from .geometry import CURVATURE_CONVENTION, GridScalarField, LowerOrderTensor, einstein_residual_of_rescaling, make_chart
from .kernels import BACKEND
from .oracle import oracle_dimension, parse_tag
from .polynomials import Polynomial
from .prolongation import (
    SolutionSpace,
    build_closed_system_einstein,
    build_closed_system_flat,
    default_loops,
    equivalence_check,
    fixed_space_residual,
    operator_tag,
    reconstruct_and_check,
    solution_space,
    splitting_operator_for,
    transport_rays,
)
from .stencils import Grid, stencil_halfwidth

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# deterministic serialisation


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    s = "%.17g" % x
    return s if any(c in s for c in ".en") else s + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with insertion-ordered keys and floats at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    return json.dumps(str(obj))


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# object construction


def _module(cfg):
    alg = build_algebra(cfg["algebra"]["n"])
    spec = ModuleSpec(cfg["module"]["family"], cfg["module"]["r"])
    return alg, build_module(alg, spec)


def _chart(cfg):
    m = cfg["metric"]
    return make_chart(cfg["algebra"]["n"], m["family"], m.get("params", {}), m.get("domain", {}).get("radius"))


def _lower_order(cfg):
    n = cfg["algebra"]["n"]
    entries = cfg["lower_order"]["A"]
    if not entries:
        return LowerOrderTensor.zero(n)
    comps = {}
    for e in entries:
        comps[(e["i"], e["j"])] = Polynomial.from_dense(n, e["coefficients"])
    return LowerOrderTensor.from_polynomials(n, comps)


def _system(cfg, module, chart):
    # flat chart without A: C vanishes for every module
    if chart.family == "flat" and not cfg["lower_order"]["A"]:
        return build_closed_system_flat(module, chart)
    return build_closed_system_einstein(chart, _lower_order(cfg), module)


def _grid(cfg) -> Grid:
    g = cfg["run"]["grid"]
    return Grid(tuple(float(c) for c in g["center"]), float(g["half_width"]), int(g["points"]))


def _conventions(system=None) -> dict:
    out = {
        "curvature": dict(CURVATURE_CONVENTION),
        "module_coordinates": "ascending grading eigenvalue; standard module ordered (f, phi_1..phi_n, h)",
        "frame": "orthonormal, e_a = exp(-phi) d/dx^a",
        "forms": "values on increasing index tuples, coordinate = position * dim W + w",
    }
    if system is not None:
        out["closed_system"] = system.convention()
    return out


def _header(command: str, cfg: dict, system=None) -> dict:
    return {
        "command": command,
        "version": __version__,
        "kernel_backend": BACKEND,
        "config": cfg,
        "conventions": _conventions(system),
    }


def _matrix(M) -> list:
    M = np.asarray(M, dtype=float)
    M = np.where(np.abs(M) < 1e-15, 0.0, M)
    return M.tolist()


# ---------------------------------------------------------------------------
# commands


def cmd_algebra(cfg: dict) -> tuple:
    alg, module = _module(cfg)
    n = alg.n
    report = _header("algebra", cfg)
    report["algebra_check"] = alg.check_invariants()
    report["module_check"] = module.check_invariants()
    report["module"] = module.spec.label
    report["dim_W"] = module.dim
    report["N"] = module.N
    report["component_dims"] = list(module.component_dims)
    report["eigenvalues"] = list(module.eigenvalues)
    hodge = {}
    for k in range(0, min(2, n) + 1):
        h = hodge_decompose(module, k)
        hodge[str(k)] = {"image_d": h.dims[0], "harmonic": h.dims[1], "image_codiff": h.dims[2], "total": sum(h.dims)}
    report["hodge_dims"] = hodge
    report["H0_dim"] = hodge["0"]["harmonic"]
    report["H1_dim"] = hodge["1"]["harmonic"]
    d0 = lie_differential(module, 0)
    d1 = lie_differential(module, 1)
    report["differentials_zero"] = bool(not np.any(d0) and not np.any(d1))
    report["d_squared_residual"] = float(np.abs(d1 @ d0).max())
    if n >= 2:
        report["codiff_squared_residual"] = float(np.abs(codifferential(module, 1) @ codifferential(module, 2)).max())
    report["matrices"] = {
        "d0": _matrix(d0),
        "d1": _matrix(d1),
        "delta_star_1": _matrix(delta_star(module, 1)),
        "delta_star_2": _matrix(delta_star(module, 2)),
    }
    report["phi_ranks"] = [int(_linalg.rank(phi_map(module, i))) for i in range(module.N + 1)]
    cp = cartan_product_projection(module)
    report["cartan_product_rank"] = int(_linalg.rank(cp.matrix))
    if module.spec.family == "scalar" and module.spec.r == 2:
        report["displayed_delta_star_deviation"] = {
            str(k): float(np.abs(delta_star(module, k) - reference_standard_delta_star(n, k)).max()) for k in (1, 2)
        }
    report["module_dimension_formula"] = module_dimension(module.spec, n)
    table = dimension_formula_table(n)
    report["dimension_formula_table"] = table
    report["dimension_formula_note"] = (
        "the quoted closed form for the scalar family disagrees with the constructed module "
        "dimension for r >= 3; the binomial count is authoritative"
    )
    if report["module_dimension_formula"] != module.dim:
        raise AlgebraInvariantError("dimension formula disagrees with the constructed module")
    return report, None, EXIT_OK


def _csv_rows(system, recon, grid: Grid) -> str:
    kind, r = parse_tag(operator_tag(system))
    margin = stencil_halfwidth(r)
    inner = grid.interior(margin)
    pts = grid.nodes[inner].reshape(-1, grid.n)
    module = system.module
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["basis"] + [f"x{i + 1}" for i in range(grid.n)] + ["D_f"] + [f"sigma{j}_norm" for j in range(module.N + 1)]
    w.writerow(head)
    secs = recon.sections if recon.sections.ndim == grid.n + 2 else recon.sections[..., None]
    for k, field_ in enumerate(recon.residual_fields):
        s = secs[..., k][inner].reshape(-1, module.dim)
        norms = [np.linalg.norm(s[:, sl], axis=1) for sl in module.slices]
        D = field_.reshape(-1)
        for i in range(pts.shape[0]):
            w.writerow([k] + [_fmt_float(v) for v in pts[i]] + [_fmt_float(D[i])] + [_fmt_float(nm[i]) for nm in norms])
    return buf.getvalue()


def cmd_prolong(cfg: dict) -> tuple:
    _, module = _module(cfg)
    chart = _chart(cfg)
    system = _system(cfg, module, chart)
    run = cfg["run"]
    tol = run["tolerances"]
    base = np.array(run["basepoint"], dtype=float)
    loops = default_loops(chart.n, base, tuple(run["loops"]["sides"]))
    space = solution_space(system, loops, base, run["step"], tol["holonomy"])
    report = _header("prolong", cfg, system)
    report["module"] = module.spec.label
    report["dim_W"] = module.dim
    report["component_dims"] = list(module.component_dims)
    report["system_kind"] = system.kind
    report["solution_dim"] = space.dimension
    report["basis_initial_values"] = space.basis.T.tolist()
    defects = space.holonomy_defects
    report["holonomy"] = {
        "loops": len(loops),
        "sides": list(run["loops"]["sides"]),
        "singular_values": space.singular_values.tolist(),
        "threshold": space.threshold,
        "max_defect": max(defects),
        "step_halving_error": space.step_error,
        "ill_conditioned": space.ill_conditioned,
    }
    if system.kind == "flat_zero":
        report["holonomy"]["identity_within_tolerance"] = bool(max(defects) <= tol["flat_identity"])
    grid = _grid(cfg)
    csv_text = None
    if space.dimension:
        recon = reconstruct_and_check(system, space.basis, grid, base, run["step"])
        report["reconstruction"] = {
            "grid": dict(run["grid"]),
            "residuals": list(recon.residuals),
            "residual_max": recon.residual,
            "tolerance": tol["residual"],
            "passed": bool(recon.residual <= tol["residual"]),
        }
        csv_text = _csv_rows(system, recon, grid)
    code = EXIT_NUMERIC if space.ill_conditioned else EXIT_OK
    if system.kind == "flat_zero" and not report["holonomy"]["identity_within_tolerance"]:
        code = EXIT_INVARIANT
    return report, csv_text, code


def _oracle_setup(cfg, module, chart):
    """``(tag, degree, chart)`` for configurations the collocation oracle covers, else None."""
    fam, r = module.spec.family, module.spec.r
    deg = cfg["run"]["oracle"]["degree"]
    A_zero = not cfg["lower_order"]["A"]
    if chart.family == "flat" and A_zero:
        if fam == "adjoint":
            return "adjoint", 2 if deg is None else deg, None
        return f"flat_r{r}", 2 * (r - 1) if deg is None else deg, None
    if chart.family == "sphere" and A_zero and fam == "scalar" and r == 2:
        return "sphere_einstein", 2 if deg is None else deg, chart
    return None


def cmd_oracle(cfg: dict) -> tuple:
    _, module = _module(cfg)
    chart = _chart(cfg)
    setup = _oracle_setup(cfg, module, chart)
    if setup is None:
        raise ConfigError("the collocation oracle covers flat charts (A = 0) and the round sphere (A = 0) only")
    tag, deg, och = setup
    rng = np.random.default_rng(cfg["run"]["seed"])
    o = oracle_dimension(tag, chart.n, deg, rng, och, cfg["run"]["oracle"]["sample_factor"], cfg["run"]["oracle"]["radius"])
    report = _header("oracle", cfg)
    report["tag"] = tag
    report["dimension"] = o["primary"].dimension
    report["complete"] = o["complete"]
    report["primary"] = o["primary"].to_json()
    report["extended"] = {"degree": o["extended"].degree, "dimension": o["extended"].dimension,
                          "singular_values": o["extended"].singular_values.tolist()}
    return report, None, EXIT_OK


def _oracle_prolongations(tag, op, polys, points, chart) -> np.ndarray:
    """Values ``L(p)(y)`` for every oracle solution ``p`` and point ``y``, shape (P, dim W, m)."""
    cols = []
    for p in polys:
        f = p.to_sympy(chart.xs) / chart.frame_scale_expr if tag == "sphere_einstein" else p
        cols.append(op(f, points).value)
    return np.stack(cols, axis=-1)


def cmd_verify(cfg: dict, outdir: Path) -> tuple:
    src = outdir / "prolong.json"
    if not src.is_file():
        raise ConfigError(f"missing artifact {src}; run the prolong command first")
    try:
        prior = json.loads(src.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"artifact {src} is not valid JSON: {exc}") from None
    if json.loads(dumps(cfg)) != prior.get("config"):
        raise ConfigError("config differs from the one recorded in prolong.json")
    _, module = _module(cfg)
    chart = _chart(cfg)
    system = _system(cfg, module, chart)
    run, tol = cfg["run"], cfg["run"]["tolerances"]
    base = np.array(run["basepoint"], dtype=float)
    dim = int(prior["solution_dim"])
    basis = np.array(prior["basis_initial_values"], dtype=float).T.reshape(module.dim, dim)
    space = SolutionSpace(dim, basis, np.array([]), [], False, tol["holonomy"], 0.0)
    report = _header("verify", cfg, system)
    report["prolong_dim"] = dim
    checks = {}
    setup = _oracle_setup(cfg, module, chart)
    if setup is not None:
        tag, deg, och = setup
        rng = np.random.default_rng(run["seed"])
        o = oracle_dimension(tag, chart.n, deg, rng, och, run["oracle"]["sample_factor"], run["oracle"]["radius"])
        prim = o["primary"]
        report["oracle"] = {"tag": tag, "degree": deg, "dimension": prim.dimension, "complete": o["complete"],
                            "extended_dimension": o["extended"].dimension}
        report["dims_match"] = bool(prim.dimension == dim and o["complete"])
        checks["dims_match"] = report["dims_match"]
        op = splitting_operator_for(chart, module)
        grid = _grid(cfg)
        probe = grid.nodes.reshape(-1, chart.n)[:: max(1, grid.nodes.size // (chart.n * 40))]
        prolonged = _oracle_prolongations(tag, op, prim.polynomials(), np.vstack([base, probe]), chart)
        V, direct = prolonged[0], prolonged[1:]
        sub = fixed_space_residual(space, V) if dim else np.array([np.inf])
        report["subspace_residual_max"] = float(sub.max())
        report["oracle_initial_value_rank"] = int(_linalg.rank(V))
        checks["subspace"] = bool(sub.max() <= tol["subspace"] and _linalg.rank(V) == dim)
        # transported oracle solutions must match their own prolongation elsewhere
        moved = transport_rays(system, base, probe, V, run["step"])
        scale = max(1.0, float(np.abs(direct).max()))
        report["transport_agreement_max"] = float(np.abs(moved - direct).max() / scale)
        checks["transport_agreement"] = bool(report["transport_agreement_max"] <= tol["subspace"])
    else:
        report["oracle"] = None
        report["dims_match"] = None
    grid = _grid(cfg)
    if dim:
        recon = reconstruct_and_check(system, basis, grid, base, run["step"])
        report["residual_max"] = recon.residual
        checks["residual"] = bool(recon.residual <= tol["residual"])
        eq = max(equivalence_check(system, recon, grid, k) for k in range(dim))
        report["equivalence_max"] = eq
        checks["equivalence"] = bool(eq <= tol["equivalence"])
        if system.kind == "explicit_einstein":
            ein = _einstein_checks(system, basis, recon, grid, tol)
            report["einstein"] = ein
            report["einstein_residual_max"] = ein["residual_max"]
            if ein["expected"]:
                checks["einstein"] = bool(ein["count"] >= 3 and ein["residual_max"] <= tol["einstein"])
    report["checks"] = checks
    report["passed"] = bool(all(checks.values()))
    return report, None, EXIT_OK if report["passed"] else EXIT_INVARIANT


def _einstein_checks(system, basis, recon, grid: Grid, tol) -> dict:
    """Rescale by reconstructed positive solutions and measure the tracefree Ricci of the result.

    Candidates are projections of ``e_f + 0.2 e_k`` onto the solution space; sections
    depend linearly on initial data, so their bottom slots are combinations of the
    basis reconstruction.
    """
    module = system.module
    d = module.dim
    f_idx = module.slices[0].start
    coeffs = []
    for k in range(d):
        e = np.zeros(d)
        e[f_idx] = 1.0
        if k != f_idx:
            e[k] += 0.2
        c = np.linalg.lstsq(basis, e, rcond=None)[0]
        if np.linalg.norm(basis @ c) > 1e-8:
            coeffs.append(c)
    Cc = np.array(coeffs).T
    bottom = recon.bottom.reshape(grid.shape + (basis.shape[1],)) @ Cc
    values, used = [], []
    for k in range(Cc.shape[1]):
        f = bottom[..., k]
        if f.min() <= tol["positivity"] * np.abs(f).max():
            continue
        values.append(einstein_residual_of_rescaling(system.chart, GridScalarField(grid, f)))
        used.append(k)
    count = _linalg.rank(basis @ Cc[:, used]) if used else 0
    expected = bool(system.A is None or system.A.is_zero) and system.chart.family in ("flat", "sphere", "hyperbolic")
    return {
        "expected": expected,
        "candidates": Cc.shape[1],
        "count": int(count),
        "residuals": values,
        "residual_max": max(values) if values else None,
    }


# ---------------------------------------------------------------------------
# entry point


COMMANDS = ("algebra", "prolong", "verify", "oracle")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bggprolong", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    sub.add_parser("schema", help="print the configuration JSON schema")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        outdir = Path(args.out if args.out is not None else cfg["output"]["directory"])
        formats = cfg["output"]["formats"]
        if args.command == "verify":
            report, csv_text, code = cmd_verify(cfg, outdir)
        else:
            fn = {"algebra": cmd_algebra, "prolong": cmd_prolong, "oracle": cmd_oracle}[args.command]
            report, csv_text, code = fn(cfg)
        outdir.mkdir(parents=True, exist_ok=True)
        if "json" in formats or args.command == "prolong":
            write_json(outdir / f"{args.command}.json", report)
        if csv_text is not None and "csv" in formats:
            (outdir / f"{args.command}_residuals.csv").write_text(csv_text)
        return code
    except (ConfigError, DomainError) as exc:
        print(f"bggprolong: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlgebraInvariantError as exc:
        print(f"bggprolong: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericalInstabilityError as exc:
        print(f"bggprolong: numerical instability: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BGGProlongError as exc:
        print(f"bggprolong: error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
