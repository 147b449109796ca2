"""Conformally flat Riemannian charts with exact connection and curvature.

Every catalog metric has the form ``g = exp(2 phi) delta`` on a ball in R^n.
Christoffel symbols and curvature follow in closed form from the first and
second partials of ``phi``, which are produced once by sympy and lambdified.

Index conventions (coordinate components, arrays carry point axes in front):

* ``christoffel[..., a, b, c] = Gamma^a_{bc}``
* ``riemann[..., a, b, c, d] = R_ab^c_d`` with
  ``(nabla_a nabla_b - nabla_b nabla_a) V^c = R_ab^c_d V^d``
* ``ricci[..., a, b] = R_ca^c_b``; the round sphere has positive scalar curvature.

The orthonormal frame used by the prolongation code is ``e_a = exp(-phi) d/dx^a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from .errors import DomainError
from .polynomials import Polynomial
from .stencils import Grid, grid_partial, stencil_halfwidth

__all__ = [
    "MetricChart",
    "LowerOrderTensor",
    "make_chart",
    "metric",
    "christoffel",
    "christoffel_derivative",
    "riemann",
    "ricci",
    "scalar_curvature",
    "tracefree_ricci",
    "conformal_curvature",
    "conformal_ricci",
    "covariant_derivative",
    "covariant_hessian",
    "frame_scale",
    "frame_connection",
    "ScalarFunction",
    "GridScalarField",
    "einstein_residual_of_rescaling",
    "CURVATURE_CONVENTION",
]

CURVATURE_CONVENTION = {
    "riemann": "(nabla_a nabla_b - nabla_b nabla_a) V^c = R_ab^c_d V^d",
    "ricci": "Ric_ab = R_ca^c_b",
    "sphere_scalar_curvature": "positive, n(n-1)/rho^2",
}

FAMILIES = ("flat", "sphere", "hyperbolic", "conformal_poly")


def _lambdify(exprs, xs):
    """Vectorised numeric evaluation of an array of sympy expressions."""
    arr = np.array(exprs, dtype=object)
    shape = arr.shape
    flat = list(arr.ravel())
    fn = sp.lambdify(xs, flat, modules="numpy", cse=True)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        vals = fn(*[x[..., i] for i in range(x.shape[-1])])
        batch = x.shape[:-1]
        out = np.empty(batch + (len(flat),))
        for k, v in enumerate(vals):
            out[..., k] = v
        return out.reshape(batch + shape)

    return evaluate


@dataclass(frozen=True, eq=False)
class MetricChart:
    """Analytic conformally flat metric ``exp(2 phi) delta`` on ``|x| <= domain_radius``."""

    n: int
    family: str
    params: dict = field(default_factory=dict)
    domain_radius: float = 10.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}; choose from {FAMILIES}")
        if self.n < 2:
            raise ValueError("chart dimension must be >= 2")
        if self.family in ("sphere", "hyperbolic") and float(self.params.get("radius", 1.0)) <= 0:
            raise ValueError("radius must be positive")
        if self.family == "hyperbolic" and self.domain_radius >= self.radius:
            raise ValueError("hyperbolic chart domain must stay inside the ball |x| < radius")

    @property
    def radius(self) -> float:
        return float(self.params.get("radius", 1.0))

    @cached_property
    def xs(self) -> tuple:
        return sp.symbols(f"x1:{self.n + 1}", real=True)

    @cached_property
    def phi_expr(self) -> sp.Expr:
        xs = self.xs
        r2 = sum(x**2 for x in xs)
        rho = sp.nsimplify(self.radius)
        if self.family == "flat":
            return sp.Integer(0)
        if self.family == "sphere":
            return sp.log(2 * rho**2 / (rho**2 + r2))
        if self.family == "hyperbolic":
            return sp.log(2 * rho**2 / (rho**2 - r2))
        poly = Polynomial.from_dense(self.n, self.params["coefficients"])
        return poly.to_sympy(xs)

    @cached_property
    def frame_scale_expr(self) -> sp.Expr:
        """``exp(-phi)`` in simplest available form."""
        return sp.cancel(sp.exp(-self.phi_expr))

    @cached_property
    def phi_grad_expr(self) -> list:
        return [sp.cancel(sp.diff(self.phi_expr, x)) for x in self.xs]

    @cached_property
    def frame_phi_grad_expr(self) -> list:
        """``exp(-phi) d_b phi``; polynomial for the flat, sphere and hyperbolic charts."""
        return [sp.cancel(self.frame_scale_expr * g) for g in self.phi_grad_expr]

    @cached_property
    def _num(self):
        xs = self.xs
        grad = self.phi_grad_expr
        hess = [[sp.cancel(sp.diff(g, y)) for y in xs] for g in grad]
        return {
            "phi": _lambdify(self.phi_expr, xs),
            "grad": _lambdify(grad, xs),
            "hess": _lambdify(hess, xs),
        }

    def check_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"points must have {self.n} coordinates")
        r = np.linalg.norm(x, axis=-1)
        if np.any(r > self.domain_radius * (1 + 1e-12)):
            raise DomainError(
                f"point outside the {self.family} chart domain |x| <= {self.domain_radius} "
                f"(max |x| = {r.max():.6g})"
            )
        return x

    def phi(self, x) -> np.ndarray:
        return self._num["phi"](self.check_points(x))

    def phi_grad(self, x) -> np.ndarray:
        return self._num["grad"](self.check_points(x))

    def phi_hess(self, x) -> np.ndarray:
        return self._num["hess"](self.check_points(x))

    def describe(self) -> dict:
        return {"family": self.family, "n": self.n, "params": dict(self.params), "domain_radius": self.domain_radius}


def make_chart(n: int, family: str = "flat", params: dict | None = None, domain_radius: float | None = None) -> MetricChart:
    """Catalog constructor applying the default domain of each family."""
    params = dict(params or {})
    rho = float(params.get("radius", 1.0))
    if domain_radius is None:
        domain_radius = {"flat": 10.0, "sphere": 3.0 * rho, "hyperbolic": 0.9 * rho}.get(family, 1.0)
    return MetricChart(n=n, family=family, params=params, domain_radius=float(domain_radius))


# ---------------------------------------------------------------------------
# curvature from the conformal factor


def conformal_curvature(grad: np.ndarray, hess: np.ndarray) -> dict:
    """Christoffel symbols and curvature of ``exp(2 phi) delta`` from the partials of ``phi``.

    Returns coordinate components: ``christoffel``, ``christoffel_derivative``
    (derivative index first), ``riemann``, ``ricci``.
    """
    n = grad.shape[-1]
    I = np.eye(n)
    gam = (
        np.einsum("ab,...c->...abc", I, grad)
        + np.einsum("ac,...b->...abc", I, grad)
        - np.einsum("bc,...a->...abc", I, grad)
    )
    dgam = (
        np.einsum("ab,...cd->...dabc", I, hess)
        + np.einsum("ac,...bd->...dabc", I, hess)
        - np.einsum("bc,...ad->...dabc", I, hess)
    )
    # std[a,b,c,d]: R(d_c, d_d) d_b = std^a_{bcd} d_a
    std = (
        np.einsum("...cadb->...abcd", dgam)
        - np.einsum("...dacb->...abcd", dgam)
        + np.einsum("...ace,...edb->...abcd", gam, gam)
        - np.einsum("...ade,...ecb->...abcd", gam, gam)
    )
    riem = np.einsum("...cdab->...abcd", std)
    ric = np.einsum("...cacb->...ab", riem)
    return {"christoffel": gam, "christoffel_derivative": dgam, "riemann": riem, "ricci": ric}


def conformal_ricci(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Ricci tensor of ``exp(2 phi) delta`` from the closed-form conformal change law.

    ``Ric = -(n-2)(Hess phi - dphi dphi) - (Lap phi + (n-2)|dphi|^2) delta``.
    """
    n = grad.shape[-1]
    outer = grad[..., :, None] * grad[..., None, :]
    lap = np.trace(hess, axis1=-2, axis2=-1)
    sq = np.sum(grad * grad, axis=-1)
    return -(n - 2) * (hess - outer) - (lap + (n - 2) * sq)[..., None, None] * np.eye(n)


def metric(chart: MetricChart, x) -> np.ndarray:
    e2 = np.exp(2 * chart.phi(x))
    return e2[..., None, None] * np.eye(chart.n)


def christoffel(chart: MetricChart, x) -> np.ndarray:
    return conformal_curvature(chart.phi_grad(x), chart.phi_hess(x))["christoffel"]


def christoffel_derivative(chart: MetricChart, x) -> np.ndarray:
    return conformal_curvature(chart.phi_grad(x), chart.phi_hess(x))["christoffel_derivative"]


def riemann(chart: MetricChart, x) -> np.ndarray:
    return conformal_curvature(chart.phi_grad(x), chart.phi_hess(x))["riemann"]


def ricci(chart: MetricChart, x) -> np.ndarray:
    return conformal_curvature(chart.phi_grad(x), chart.phi_hess(x))["ricci"]


def scalar_curvature(chart: MetricChart, x) -> np.ndarray:
    ric = ricci(chart, x)
    return np.exp(-2 * chart.phi(x)) * np.trace(ric, axis1=-2, axis2=-1)


def tracefree_ricci(chart: MetricChart, x) -> np.ndarray:
    ric = ricci(chart, x)
    return ric - np.trace(ric, axis1=-2, axis2=-1)[..., None, None] / chart.n * np.eye(chart.n)


# ---------------------------------------------------------------------------
# covariant differentiation


def covariant_derivative(chart: MetricChart, x, values: np.ndarray, partials: np.ndarray) -> np.ndarray:
    """Levi-Civita derivative of a covariant tensor field at points ``x``.

    ``values[..., a_1..a_k]`` are the components and ``partials[..., c, a_1..a_k]``
    their coordinate partials ``d_c``.  Returns ``nabla_c T_{a_1..a_k}`` with the
    derivative index first.
    """
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    n = chart.n
    gam = christoffel(chart, x).reshape((-1, n, n, n))
    values = np.asarray(values, dtype=float)
    rank = values.ndim - len(batch)
    T = values.reshape((gam.shape[0],) + (n,) * rank)
    out = np.array(partials, dtype=float).reshape((gam.shape[0], n) + (n,) * rank)
    for slot in range(rank):
        # subtract Gamma^e_{c a_slot} T_{.. e ..}
        moved = np.moveaxis(T, 1 + slot, -1)
        rest = moved.shape[1:-1]
        t = np.einsum("zeca,zpe->zcpa", gam, moved.reshape(moved.shape[0], -1, n))
        t = t.reshape((moved.shape[0], n) + rest + (n,))
        out = out - np.moveaxis(t, -1, 2 + slot)
    return out.reshape(batch + (n,) * (rank + 1))


def covariant_hessian(chart: MetricChart, x, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """``nabla_a nabla_b f = d_a d_b f - Gamma^c_ab d_c f``."""
    return hess - np.einsum("...cab,...c->...ab", christoffel(chart, x), grad)


def frame_scale(chart: MetricChart, x) -> np.ndarray:
    """``exp(-phi)``: coordinate components of the orthonormal frame vectors."""
    return np.exp(-chart.phi(x))


def frame_connection(chart: MetricChart, x) -> np.ndarray:
    """Levi-Civita connection forms in the orthonormal frame.

    ``out[..., c, a, b] = omega^a_b(e_c) = exp(-phi) (phi_b delta_ac - phi_a delta_bc)``.
    """
    g = chart.phi_grad(x) * frame_scale(chart, x)[..., None]
    I = np.eye(chart.n)
    return np.einsum("ac,...b->...cab", I, g) - np.einsum("bc,...a->...cab", I, g)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class LowerOrderTensor:
    """Symmetric tracefree 2-tensor ``A_ab`` with polynomial coordinate components.

    Components are projected to their tracefree part on construction (the
    metric is conformal to delta, so the projection is metric independent).
    """

    n: int
    components: tuple  # n x n nested tuple of Polynomial
    projected: bool = True

    @classmethod
    def zero(cls, n: int) -> "LowerOrderTensor":
        z = Polynomial(np.zeros((1, n), dtype=int), [0.0])
        return cls(n, tuple(tuple(z for _ in range(n)) for _ in range(n)))

    @classmethod
    def from_polynomials(cls, n: int, comps: dict) -> "LowerOrderTensor":
        """Build from ``{(i, j): Polynomial}``; missing entries are zero, symmetry is imposed."""
        zero = Polynomial(np.zeros((1, n), dtype=int), [0.0])
        full = [[zero for _ in range(n)] for _ in range(n)]
        for (i, j), p in comps.items():
            full[i][j] = p
            full[j][i] = p
        trace = zero
        for i in range(n):
            trace = trace + full[i][i]
        proj = [[full[i][j] for j in range(n)] for i in range(n)]
        for i in range(n):
            proj[i][i] = full[i][i] + trace.scale(-1.0 / n)
        return cls(n, tuple(tuple(row) for row in proj))

    @property
    def is_zero(self) -> bool:
        return all(not np.any(p.coeffs) for row in self.components for p in row)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.stack([p(x) for p in row], axis=-1) for row in self.components], axis=-2)

    def partials(self, x) -> np.ndarray:
        """``out[..., c, a, b] = d_c A_ab``."""
        x = np.asarray(x, dtype=float)
        return np.stack(
            [np.stack([np.stack([p.deriv(c)(x) for p in row], axis=-1) for row in self.components], axis=-2)
             for c in range(self.n)],
            axis=-3,
        )

    def trace_residual(self, x) -> float:
        vals = self.values(x)
        tr = np.abs(np.trace(vals, axis1=-2, axis2=-1))
        scale = max(1.0, np.abs(vals).max())
        return float(tr.max() / scale)


class ScalarFunction:
    """A scalar field with exact derivatives from a sympy expression."""

    def __init__(self, expr, xs):
        self.expr = sp.sympify(expr)
        self.xs = tuple(xs)
        grad = [sp.diff(self.expr, x) for x in self.xs]
        hess = [[sp.diff(g, y) for y in self.xs] for g in grad]
        self._f = _lambdify(self.expr, self.xs)
        self._g = _lambdify(grad, self.xs)
        self._h = _lambdify(hess, self.xs)

    def __call__(self, x) -> np.ndarray:
        return self._f(x)

    def derivatives(self, x):
        return self._f(x), self._g(x), self._h(x)


class GridScalarField:
    """Scalar samples on a regular grid; derivatives by order-4 central stencils."""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values of shape {values.shape} do not match grid {grid.shape}")
        self.grid = grid
        self.values = values
        self.margin = stencil_halfwidth(2)

    def points(self) -> np.ndarray:
        return self.grid.nodes[self.grid.interior(self.margin)]

    def derivatives(self, x=None):
        if x is not None:
            raise ValueError("grid fields are evaluated on their own interior nodes")
        n, h, m = self.grid.n, self.grid.spacing, self.margin
        val = self.values[self.grid.interior(m)]
        unit = np.eye(n, dtype=int)
        grad = np.stack([grid_partial(self.values, h, tuple(unit[a]), m) for a in range(n)], axis=-1)
        hess = np.empty(val.shape + (n, n))
        for a in range(n):
            for b in range(a, n):
                hess[..., a, b] = hess[..., b, a] = grid_partial(self.values, h, tuple(unit[a] + unit[b]), m)
        return val, grad, hess


def einstein_residual_of_rescaling(chart: MetricChart, f, region=None, eps: float | None = None) -> float:
    """Largest frame norm of ``Ric^0`` for the rescaled metric ``f^-2 g``.

    ``f`` is a :class:`ScalarFunction` (evaluated on the points ``region``) or a
    :class:`GridScalarField` (evaluated on its interior nodes).  Every point must
    have ``f > eps``; the default is ``0.3 * max|f|`` over the region.
    """
    if isinstance(f, GridScalarField):
        pts = f.points()
        val, grad, hess = f.derivatives()
    else:
        pts = np.asarray(region, dtype=float)
        val, grad, hess = f.derivatives(pts)
    chart.check_points(pts)
    if eps is None:
        eps = 0.3 * float(np.abs(val).max())
    if np.any(val <= eps):
        raise DomainError(f"rescaling function drops to {val.min():.4g} <= {eps:.4g} on the region")
    g_phi = chart.phi_grad(pts)
    h_phi = chart.phi_hess(pts)
    # phi_hat = phi - log f
    g_hat = g_phi - grad / val[..., None]
    h_hat = h_phi - hess / val[..., None, None] + np.einsum("...a,...b->...ab", grad, grad) / val[..., None, None] ** 2
    ric = conformal_curvature(g_hat, h_hat)["ricci"]
    ric0 = ric - np.trace(ric, axis1=-2, axis2=-1)[..., None, None] / chart.n * np.eye(chart.n)
    phi_hat = chart.phi(pts) - np.log(val)
    frame = np.exp(-2 * phi_hat)[..., None, None] * ric0
    return float(np.linalg.norm(frame, axis=(-2, -1)).max())
