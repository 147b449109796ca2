"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one PASS/FAIL line (echoed in the terminal summary) and
then asserts, so a failing criterion also fails the run.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from bggprolong.algebra import (
    ModuleSpec,
    build_algebra,
    build_module,
    delta_star,
    dimension_formula_table,
    form_dim,
    hodge_decompose,
    killing_tensor_dimension,
    lie_differential,
    codifferential,
    module_dimension,
    quoted_scalar_dimension,
    reference_standard_delta_star,
    standard_module,
)
from bggprolong._linalg import rank
from bggprolong.cli import run
from bggprolong.geometry import make_chart, scalar_curvature
from bggprolong.oracle import oracle_dimension
from bggprolong.polynomials import Polynomial, space_dim
from bggprolong.prolongation import (
    build_closed_system_flat,
    fixed_space_residual,
    jet_dependence_check,
    solution_space,
    splitting_operator_for,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
RESULTS = {}


def record(k: int, ok: bool, detail: str):
    line = f"ACCEPTANCE {k:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


def _module(n, fam, r):
    return build_module(build_algebra(n), ModuleSpec(fam, r))


def _tracefree_symmetric_dim(n, r):
    return math.comb(n + r - 1, r) - (math.comb(n + r - 3, r - 2) if r >= 2 else 0)


def test_criterion_01_delta_star_reproduction():
    worst = 0.0
    for n in (2, 3, 4):
        m = standard_module(n)
        for k in (1, 2):
            worst = max(worst, float(np.abs(delta_star(m, k) - reference_standard_delta_star(n, k)).max()))
    record(1, worst <= 1e-12, f"max |delta* - displayed| over n=2,3,4, k=1,2 is {worst:.3g} (tol 1e-12)")


def test_criterion_02_hodge_decomposition():
    cases = [(n, f, r) for n in (3, 4) for f, r in (("scalar", 1), ("scalar", 2), ("scalar", 3), ("adjoint", 1))]
    cases += [(2, "scalar", r) for r in (1, 2, 3)]
    bad = []
    for n, fam, r in cases:
        m = _module(n, fam, r)
        for k in (0, 1, 2):
            dims = hodge_decompose(m, k).dims
            total = form_dim(m, k)
            ker_d = total - (rank(lie_differential(m, k)) if k < n else 0)
            ker_cd = total - (rank(codifferential(m, k)) if k > 0 else 0)
            if sum(dims) != math.comb(n, k) * m.dim or dims[0] + dims[1] != ker_d or dims[1] + dims[2] != ker_cd:
                bad.append((n, fam, r, k, dims))
    record(2, not bad, f"{len(cases) * 3} (module, degree) cases, mismatches: {bad or 'none'}")


def test_criterion_03_kostant_identification():
    found, bad = {}, []
    for n in (2, 3, 4):
        for r in (1, 2, 3):
            m = _module(n, "scalar", r)
            h0, h1 = hodge_decompose(m, 0).dims[1], hodge_decompose(m, 1).dims[1]
            found[(n, r)] = h1
            if h0 != m.component_dims[0] or h1 != _tracefree_symmetric_dim(n, r):
                bad.append((n, r, h0, h1))
    ok = not bad and found[(3, 2)] == 5 and found[(3, 3)] == 7
    record(3, ok, f"dim H1 at n=3: r=2 -> {found[(3, 2)]}, r=3 -> {found[(3, 3)]}; mismatches: {bad or 'none'}")


FLAT_CASES = [(3, "scalar", 2, "flat_r2", 2, 5), (2, "scalar", 2, "flat_r2", 2, 4),
              (2, "scalar", 3, "flat_r3", 4, 9), (3, "adjoint", 1, "adjoint", 2, 10)]


def test_criterion_04_flat_model_sharpness():
    rng = np.random.default_rng(4)
    parts, ok = [], True
    for n, fam, r, tag, deg, expected in FLAT_CASES:
        m = _module(n, fam, r)
        system = build_closed_system_flat(m)
        space = solution_space(system)
        orc = oracle_dimension(tag, n, deg, rng)
        prim = orc["primary"]
        op = splitting_operator_for(system.chart, m)
        V = np.stack([op(p, np.zeros((1, n))).value[0] for p in prim.polynomials()], axis=1)
        sub = float(fixed_space_residual(space, V).max())
        dims = (space.dimension, m.dim, prim.dimension)
        good = dims == (expected,) * 3 and orc["complete"] and sub <= 1e-6 and rank(V) == expected
        if fam == "adjoint":
            good &= expected == killing_tensor_dimension(n, 1)
        ok &= good
        parts.append(f"{tag} n={n}: prolong/dimW/oracle={dims}, subspace={sub:.1e}")
    record(4, ok, "; ".join(parts))


def test_criterion_05_splitting_operator():
    rng = np.random.default_rng(5)
    configs = [("flat", 3, "scalar", 2), ("flat", 2, "scalar", 3), ("sphere", 3, "scalar", 2), ("flat", 3, "adjoint", 1)]
    worst, jets_ok, parts = 0.0, True, []
    for fam, n, mfam, r in configs:
        chart = make_chart(n, fam)
        m = _module(n, mfam, r)
        op = splitting_operator_for(chart, m)
        x = rng.uniform(-0.5, 0.5, size=(50, n))
        d0 = m.component_dims[0]
        local = 0.0
        for _ in range(20):
            polys = [Polynomial.from_dense(n, rng.normal(size=space_dim(n, m.N + 2))) for _ in range(d0)]
            f = polys if d0 > 1 else polys[0]
            res = op.residual(f, x)
            local = max(local, float(np.abs(res).max() / max(1.0, np.abs(op(f, x).value).max())))
        worst = max(worst, local)
        # component l of L(f)(x0) only sees the l-jet of f
        x0 = rng.uniform(-0.3, 0.3, size=n)
        xs = chart.xs
        base = [sum(rng.normal() * xs[i] ** 2 for i in range(n)) + xs[0] * xs[-1] for _ in range(d0)]
        for ell in range(r):
            bump = [(xs[0] - x0[0]) ** (ell + 1) * (1 + xs[-1]) * (j + 1) for j in range(d0)]
            jets_ok &= jet_dependence_check(chart, m, base if d0 > 1 else base[0], bump if d0 > 1 else bump[0], ell, x0)
        parts.append(f"{fam}/{m.spec.label} n={n}: {local:.1e}")
    record(5, worst <= 1e-9 and jets_ok,
           f"max relative delta* nabla~ L(f) over 50 pts x 20 polys = {worst:.2e} (tol 1e-9); "
           f"jet dependence {'ok' if jets_ok else 'FAILED'} [{'; '.join(parts)}]")


@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sphere")
    cfg = str(CONFIGS / "sphere_n3.json")
    code_p = run(["prolong", "--config", cfg, "--out", str(out)])
    code_v = run(["verify", "--config", cfg, "--out", str(out)])
    prolong = json.loads((out / "prolong.json").read_text())
    verify = json.loads((out / "verify.json").read_text())
    return code_p, code_v, prolong, verify


def test_criterion_06_closed_system_on_sphere(sphere_run):
    code, _, rep, _ = sphere_run
    grid = rep["reconstruction"]["grid"]
    res = rep["reconstruction"]["residual_max"]
    ok = code == 0 and rep["solution_dim"] == 5 and grid["points"] == 21 and res <= 1e-6
    record(6, ok, f"holonomy dimension {rep['solution_dim']} (expect 5); max |D(f)| on 21^3 grid "
                  f"(half-width {grid['half_width']}) = {res:.2e} (tol 1e-6)")


def test_criterion_07_einstein_rescaling(sphere_run):
    _, code, _, ver = sphere_run
    ein = ver["einstein"]
    ok = code == 0 and ein["count"] >= 3 and ein["residual_max"] is not None and ein["residual_max"] <= 1e-4
    record(7, ok, f"{ein['count']} independent positive solutions (need >= 3); "
                  f"max |Ric0(f^-2 g)| = {ein['residual_max']:.2e} (tol 1e-4)")


def test_criterion_08_curvature_sanity():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1.5, 1.5, size=(100, 3))
    R = scalar_curvature(make_chart(3, "sphere", {"radius": 1.0}), x)
    dev = float(np.abs(R - 6.0).max())
    defects = []
    for n, fam, r in ((3, "scalar", 2), (2, "scalar", 3), (3, "adjoint", 1)):
        defects += solution_space(build_closed_system_flat(_module(n, fam, r))).holonomy_defects
    hol = max(defects)
    record(8, dev <= 1e-10 and hol <= 1e-8,
           f"sphere scalar curvature |R - 6| max {dev:.1e} (tol 1e-10); flat holonomy |H - I| max {hol:.1e} (tol 1e-8)")


def test_criterion_09_dimension_formula_audit():
    killing = {n: killing_tensor_dimension(n, 1) for n in range(3, 9)}
    exact = all(isinstance(v, int) and v == (n + 1) * (n + 2) // 2 for n, v in killing.items())
    flagged = []
    for n in (2, 3, 4):
        row = [r for r in dimension_formula_table(n) if r["r"] == 3][0]
        flagged.append(row["quoted_formula_consistent"] is False
                       and row["direct_count"] == module_dimension(ModuleSpec("scalar", 3), n)
                       == _module(n, "scalar", 3).dim)
    q = quoted_scalar_dimension(2, 3)
    record(9, exact and all(flagged),
           f"conformal Killing dims n=3..8 {list(killing.values())}; quoted r=3 formula gives {q} vs constructed 9 "
           f"at n=2 (expected discrepancy, reported)")


def test_criterion_10_determinism(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for cmd, cfg in (("algebra", "standard_algebra_n4.json"), ("prolong", "flat_scalar_r3_n2.json"),
                         ("oracle", "adjoint_n3.json")):
            assert run([cmd, "--config", str(CONFIGS / cfg), "--out", str(out)]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = runs[0].keys() == runs[1].keys() and all(runs[0][k] == runs[1][k] for k in runs[0])
    record(10, same, f"{len(runs[0])} artifacts compared byte for byte across two runs: "
                     f"{'identical' if same else 'DIFFERENT'}")
