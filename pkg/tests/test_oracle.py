import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bggprolong.algebra import killing_tensor_dimension
from bggprolong.errors import ConfigError, NumericalInstabilityError
from bggprolong.geometry import make_chart
from bggprolong.oracle import (
    PolynomialSpace,
    collocation_nullspace,
    fd_residual,
    oracle_dimension,
    parse_tag,
    sample_points,
    tracefree_symmetric,
)
from bggprolong.polynomials import Polynomial
from bggprolong.stencils import Grid


def test_parse_tag():
    assert parse_tag("flat_r3") == ("flat", 3)
    assert parse_tag("adjoint") == ("adjoint", 1)
    assert parse_tag("einstein") == ("einstein", 2)
    with pytest.raises(ConfigError):
        parse_tag("flat_r0")


def test_partial_matrix_matches_polynomial_derivative(rng):
    space = PolynomialSpace(3, 3)
    c = rng.normal(size=space.dim)
    x = rng.normal(size=(7, 3))
    p = space.polynomial(c)
    assert np.allclose(space.partial_matrix((1, 0, 2), x) @ c, p.partial((1, 0, 2))(x))


def test_tracefree_projection_kills_metric_powers():
    n = 3
    from bggprolong.stencils import multi_indices

    comps = np.array([1.0 if max(a) == 2 else 0.0 for a in multi_indices(n, 2)])
    assert np.abs(tracefree_symmetric(comps, n, 2)).max() < 1e-14


@pytest.mark.parametrize("n,r,d,dim", [(3, 2, 2, 5), (2, 2, 2, 4), (2, 3, 4, 9), (3, 3, 4, 14), (2, 1, 0, 1)])
def test_flat_dimensions(rng, n, r, d, dim):
    res = oracle_dimension(f"flat_r{r}", n, d, rng)
    assert res["primary"].dimension == dim
    assert res["complete"]


def test_flat_r2_basis_spans_expected_polynomials(rng):
    res = oracle_dimension("flat_r2", 3, 2, rng)["primary"]
    # 1, x1, x2, x3, |x|^2 in the monomial order
    expected = np.zeros((10, 5))
    expected[0, 0] = expected[1, 1] = expected[2, 2] = expected[3, 3] = 1.0
    expected[[4, 7, 9], 4] = 1.0
    both = np.hstack([res.basis, expected])
    assert np.linalg.matrix_rank(both, tol=1e-8) == 5


@pytest.mark.parametrize("n", [3, 4])
def test_conformal_killing_vectors(rng, n):
    res = oracle_dimension("adjoint", n, 2, rng)
    assert res["primary"].dimension == killing_tensor_dimension(n, 1) == (n + 1) * (n + 2) // 2
    assert res["complete"]


def test_sphere_collocation(rng):
    ch = make_chart(3, "sphere")
    res = oracle_dimension("sphere_einstein", 3, 2, rng, ch)
    assert res["primary"].dimension == 5
    assert res["complete"]


def test_sphere_collocation_needs_sphere(rng):
    with pytest.raises(ConfigError):
        collocation_nullspace("sphere_einstein", 3, 2, sample_points(3, 60, rng), make_chart(3, "flat"))


def test_too_few_samples(rng):
    with pytest.raises(ValueError):
        collocation_nullspace("flat_r2", 3, 2, sample_points(3, 10, rng))


def test_ambiguous_rank_is_reported(rng):
    pts = sample_points(3, 30, rng)
    res = collocation_nullspace("flat_r2", 3, 2, pts)
    kept, dropped = res.singular_values[:5], res.singular_values[5:]
    observed = kept.min() / dropped.max()
    assert observed > 1e6
    # demanding more separation than the spectrum has must fail loudly
    with pytest.raises(NumericalInstabilityError):
        collocation_nullspace("flat_r2", 3, 2, pts, gap=10 * observed)


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_dimension_is_stable_under_resampling(seed):
    dims = {collocation_nullspace("flat_r3", 2, 4, sample_points(2, 60, np.random.default_rng(seed + k))).dimension
            for k in range(5)}
    assert dims == {9}


def test_oracle_report_is_json_ready(rng):
    out = oracle_dimension("flat_r2", 2, 2, rng)["primary"].to_json()
    assert out["dimension"] == 4
    assert len(out["basis_coefficients"]) == 4
    assert len(out["singular_values"]) == 6


# -- stencil residuals ---------------------------------------------------------


def _grid(n, pts=11):
    return Grid((0.0,) * n, 0.5, pts)


def test_fd_residual_exact_on_quadratics():
    g = _grid(3)
    x = g.nodes
    flat = make_chart(3, "flat")
    # x1 x2 has the tracefree Hessian e1e2 + e2e1, of norm sqrt(2), at every node
    _, field = fd_residual(flat, g, x[..., 0] * x[..., 1], "flat_r2", return_field=True)
    assert np.abs(field - np.sqrt(2)).max() <= 1e-12
    solution = 1 + x[..., 0] - 2 * x[..., 2] + 0.5 * np.sum(x**2, axis=-1)
    assert fd_residual(flat, g, solution, "flat_r2") <= 1e-12


def test_fd_residual_cubic_is_nonzero():
    g = _grid(2)
    x = g.nodes
    res, field = fd_residual(make_chart(2, "flat"), g, x[..., 0] ** 3, "flat_r2", return_field=True)
    # tracefree part of diag(6 x1, 0) has norm 6 |x1| / sqrt(2)
    inner = g.interior(2)
    assert np.allclose(field, 6 * np.abs(x[inner][..., 0]) / np.sqrt(2), atol=1e-9)
    assert res > 1.0


def test_fd_residual_constant_on_sphere():
    g = _grid(3, 9)
    assert fd_residual(make_chart(3, "sphere"), g, np.ones(g.shape), "einstein") <= 1e-12


def test_fd_residual_adjoint_rotation_field():
    g = _grid(3, 9)
    x = g.nodes
    V = np.stack([-x[..., 1], x[..., 0], np.zeros(g.shape)], axis=-1)
    assert fd_residual(make_chart(3, "flat"), g, V, "adjoint") <= 1e-12
    with pytest.raises(ValueError):
        fd_residual(make_chart(3, "flat"), g, x[..., 0], "adjoint")


def test_fd_residual_rejects_curved_flat_tag():
    g = _grid(3, 9)
    with pytest.raises(ConfigError):
        fd_residual(make_chart(3, "sphere"), g, np.ones(g.shape), "flat_r2")


def test_fd_residual_with_lower_order_term():
    from bggprolong.geometry import LowerOrderTensor

    n = 2
    g = _grid(n)
    x = g.nodes
    flat = make_chart(n, "flat")
    f = 2 + x[..., 0] ** 2
    # tracefree Hessian of f is diag(1, -1); A = -diag(1, -1) / 2 cancels it exactly at f = 2 only
    A = LowerOrderTensor.from_polynomials(n, {(0, 0): Polynomial.from_dense(n, [-1.0])})
    assert np.allclose(A.values(np.zeros((1, n)))[0], -0.5 * np.diag([1.0, -1.0]))
    _, field = fd_residual(flat, g, f, "einstein", A=A, return_field=True)
    inner = g.interior(2)
    expected = np.sqrt(2) * np.abs(1 - 0.5 * f[inner])
    assert np.abs(field - expected).max() <= 1e-12
