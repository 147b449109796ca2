import math

import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, strategies as st

from bggprolong.algebra import (
    ModuleSpec,
    build_algebra,
    build_module,
    cartan_product_projection,
    codifferential,
    delta_star,
    dimension_formula_table,
    form_dim,
    hodge_decompose,
    killing_tensor_dimension,
    lie_differential,
    module_dimension,
    phi_map,
    quoted_scalar_dimension,
    reference_standard_delta_star,
    standard_module,
)
from bggprolong._linalg import rank

MODULES = [("scalar", 1), ("scalar", 2), ("scalar", 3), ("adjoint", 1)]


def _module(n, fam, r):
    return build_module(build_algebra(n), ModuleSpec(fam, r))


def _cases():
    for n in (2, 3, 4):
        for fam, r in MODULES:
            if fam == "adjoint" and n < 3:
                continue
            yield n, fam, r


CASES = list(_cases())


# -- graded algebra ----------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_algebra_dims(n):
    alg = build_algebra(n)
    assert alg.dim == (n + 2) * (n + 1) // 2
    assert [len(alg.basis_minus1), len(alg.basis_0), len(alg.basis_1)] == [n, n * (n - 1) // 2 + 1, n]


@pytest.mark.parametrize("n", [2, 3, 6])
def test_algebra_invariants(n):
    report = build_algebra(n).check_invariants()
    for key in ("form_residual", "grading_residual", "bracket_closure_residual", "g1_abelian_residual"):
        assert report[key] < 1e-12
    assert report["total_dim"] == (n + 2) * (n + 1) // 2


def test_grading_acts_by_minus_one_on_lowest_part():
    alg = build_algebra(3)
    for X in alg.basis_minus1:
        assert np.allclose(alg.E @ X - X @ alg.E, -X)


# -- modules -----------------------------------------------------------------


@pytest.mark.parametrize(
    "n,fam,r,dim,comps",
    [
        (3, "scalar", 2, 5, [1, 3, 1]),
        (2, "scalar", 3, 9, [1, 2, 3, 2, 1]),
        (3, "adjoint", 1, 10, [3, 4, 3]),
        (4, "scalar", 1, 1, [1]),
    ],
)
def test_module_dims(n, fam, r, dim, comps):
    m = _module(n, fam, r)
    assert m.dim == dim
    assert list(m.component_dims) == comps
    assert module_dimension(m.spec, n) == dim


@pytest.mark.parametrize("n,fam,r", CASES)
def test_module_representation_invariants(n, fam, r):
    m = _module(n, fam, r)
    rep = m.check_invariants()
    assert rep["homomorphism_residual"] < 1e-10
    assert rep["grading_leak"] < 1e-10
    assert rep["eigenvalues"] == list(range(rep["eigenvalues"][0], rep["eigenvalues"][0] + m.N + 1))


def test_standard_module_order_and_soldering():
    m = standard_module(3)
    # (f, phi, h): lowering moves h -> phi_a -> -f
    for a in range(3):
        X = m.rho_minus1[a]
        h = np.zeros(5)
        h[4] = 1.0
        phi = X @ h
        assert np.allclose(phi, np.eye(5)[1 + a])
        assert np.allclose(X @ phi, -np.eye(5)[0])


# -- differentials -----------------------------------------------------------


@pytest.mark.parametrize("n,fam,r", CASES)
def test_d_squared_vanishes(n, fam, r):
    m = _module(n, fam, r)
    for k in range(0, min(n, 3) - 1):
        assert np.abs(lie_differential(m, k + 1) @ lie_differential(m, k)).max() < 1e-12


@pytest.mark.parametrize("n,fam,r", CASES)
def test_codiff_squared_vanishes(n, fam, r):
    m = _module(n, fam, r)
    for k in range(1, min(n, 3)):
        assert np.abs(codifferential(m, k) @ codifferential(m, k + 1)).max() < 1e-12


def test_d0_kills_bottom_and_is_injective_above():
    m = standard_module(2)
    d0 = lie_differential(m, 0)
    assert np.allclose(d0[:, 0], 0.0)
    assert rank(d0[:, 1:]) == m.dim - 1


@pytest.mark.parametrize("n", [2, 3, 4])
def test_d0_formula_on_standard_module(n):
    m = standard_module(n)
    d0 = lie_differential(m, 0)
    rng = np.random.default_rng(n)
    f, phi, h = rng.normal(), rng.normal(size=n), rng.normal()
    out = d0 @ np.concatenate([[f], phi, [h]])
    d = m.dim
    for a in range(n):
        block = out[a * d:(a + 1) * d]
        expected = np.zeros(d)
        expected[0] = -phi[a]
        expected[1 + a] = h
        assert np.allclose(block, expected)


def test_trivial_module_has_zero_codifferential():
    m = _module(3, "scalar", 1)
    for k in (1, 2, 3):
        assert not np.any(codifferential(m, k))


def test_standard_codiff_image_is_upper_part():
    m = standard_module(3)
    img = codifferential(m, 1)
    assert rank(img) == m.dim - 1
    assert np.allclose(img[0], 0.0)


# -- Hodge decomposition -----------------------------------------------------


@pytest.mark.parametrize("n,fam,r", CASES)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_hodge_dims_sum(n, fam, r, k):
    m = _module(n, fam, r)
    h = hodge_decompose(m, k)
    assert sum(h.dims) == math.comb(n, k) * m.dim == form_dim(m, k)
    ker_d = form_dim(m, k) - rank(lie_differential(m, k)) if k < n else form_dim(m, k)
    ker_cd = form_dim(m, k) - rank(codifferential(m, k)) if k > 0 else form_dim(m, k)
    assert h.dims[0] + h.dims[1] == ker_d
    assert h.dims[1] + h.dims[2] == ker_cd


@pytest.mark.parametrize("n,r,expected", [(3, 2, 5), (3, 3, 7), (2, 3, 2), (4, 2, 9)])
def test_first_cohomology_is_tracefree_symmetric(n, r, expected):
    m = _module(n, "scalar", r)
    assert hodge_decompose(m, 1).dims[1] == expected
    assert hodge_decompose(m, 0).dims[1] == m.component_dims[0]


# -- delta star --------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("k", [1, 2])
def test_delta_star_matches_closed_form(n, k):
    m = standard_module(n)
    assert np.abs(delta_star(m, k) - reference_standard_delta_star(n, k)).max() <= 1e-12


@pytest.mark.parametrize("n,fam,r", CASES)
def test_delta_star_squares_to_zero_and_inverts_d(n, fam, r):
    m = _module(n, fam, r)
    if n < 2:
        pytest.skip("needs two-forms")
    D1, D2 = delta_star(m, 1), delta_star(m, 2)
    assert np.abs(D1 @ D2).max() < 1e-12
    d0 = lie_differential(m, 0)
    # delta* d is the projection onto the image of the codifferential
    P = D1 @ d0
    assert np.abs(P @ P - P).max() < 1e-10
    assert np.abs(d0 @ P - d0).max() < 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
def test_delta_star_entry_patterns(n):
    D1 = reference_standard_delta_star(n, 1)
    D2 = reference_standard_delta_star(n, 2)
    vals1 = set(np.round(np.unique(D1[D1 != 0]), 12))
    vals2 = set(np.round(np.unique(D2[D2 != 0]), 12))
    assert vals1 <= {round(1 / n, 12), -1.0}
    assert vals2 <= {round(-1 / (n - 1), 12), round(1 / (n - 1), 12), 0.5, -0.5}


# -- phi maps and Cartan product ---------------------------------------------


@pytest.mark.parametrize("n,fam,r", CASES)
def test_phi_zero_is_identity(n, fam, r):
    m = _module(n, fam, r)
    P0 = phi_map(m, 0)
    assert np.allclose(P0, np.eye(P0.shape[0]))


def test_phi_ranks_standard():
    m = standard_module(3)
    assert rank(phi_map(m, 1)) == 3
    assert rank(phi_map(m, 2)) == 1


@pytest.mark.parametrize("n", [2, 3, 4])
def test_cartan_product_scalar_r2(n):
    cp = cartan_product_projection(standard_module(n))
    assert rank(cp.matrix) == n * (n + 1) // 2 - 1
    # the metric is pure trace, so it is annihilated
    assert np.abs(cp.matrix @ np.eye(n).reshape(-1)).max() < 1e-12
    assert np.abs(cp.matrix @ (np.eye(n)[0][:, None] * np.eye(n)[1][None]).reshape(-1)).max() > 0.1


@pytest.mark.parametrize("n", [3, 4])
def test_cartan_product_adjoint_matches_harmonic_part(n):
    m = _module(n, "adjoint", 1)
    cp = cartan_product_projection(m)
    assert rank(cp.matrix) == hodge_decompose(m, 1).dims[1]
    # inclusion is a right inverse
    assert np.allclose(cp.matrix @ cp.inclusion, np.eye(cp.harmonic.shape[1]), atol=1e-10)


# -- dimension formulas ------------------------------------------------------


@pytest.mark.parametrize("n", range(3, 9))
def test_killing_dimension(n):
    assert killing_tensor_dimension(n, 1) == (n + 1) * (n + 2) // 2


@given(st.integers(min_value=2, max_value=8))
def test_standard_module_dimension_is_n_plus_two(n):
    assert module_dimension(ModuleSpec("scalar", 2), n) == n + 2


@given(st.integers(min_value=2, max_value=4), st.integers(min_value=1, max_value=3))
def test_dimension_count_matches_constructed_module(n, r):
    m = _module(n, "scalar", r)
    assert module_dimension(m.spec, n) == m.dim == sum(m.component_dims)
    # symmetric ladder of components
    assert list(m.component_dims) == list(reversed(m.component_dims))


def test_quoted_formula_discrepancy():
    assert quoted_scalar_dimension(2, 3) == Fraction(1080)
    assert module_dimension(ModuleSpec("scalar", 3), 2) == 9
    rows = {row["r"]: row for row in dimension_formula_table(2)}
    assert not rows[3]["quoted_formula_consistent"]
