"""Modified connection, splitting operators, closed systems and their transport.

Sections are written in the orthonormal frame ``e_a = exp(-phi) d_a`` of the
chart, so a module vector at a point is just a coordinate vector of W.  On a
field the modified connection is

    nabla~_xi Sigma = xi(Sigma) + rho(omega(xi)) Sigma + rho(X_xi) Sigma,

with ``omega`` the Levi-Civita connection forms of the frame and ``X_xi`` the
element of g_{-1} with frame components of ``xi``.  A closed system adds a
bundle map ``C`` and its parallel sections solve ``nabla~ Sigma + C(Sigma) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp

from . import _linalg
from .algebra import GradedModule, ModuleSpec, delta_star
from .errors import ConfigError, NumericalInstabilityError
from .geometry import (
    LowerOrderTensor,
    MetricChart,
    _lambdify,
    conformal_ricci,
    covariant_derivative,
)
from .kernels import propagate
from .polynomials import Polynomial
from .stencils import Grid, multi_indices, point_partials

DEFAULT_STEP = 1e-3
HOLONOMY_THRESHOLD = 1e-6
ILL_CONDITIONED_BAND = (1e-8, 1e-4)
CHUNK_NODES = 40_000


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True, eq=False)
class TractorSection:
    """Module-valued value (or array of values, last axis) with graded access."""

    module: GradedModule
    value: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        if v.shape[-1] != self.module.dim:
            raise ValueError(f"section values need {self.module.dim} coordinates, got {v.shape[-1]}")
        object.__setattr__(self, "value", v)

    @classmethod
    def from_components(cls, module: GradedModule, parts) -> "TractorSection":
        return cls(module, np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts], axis=-1))

    def component(self, i: int) -> np.ndarray:
        return self.value[..., self.module.slices[i]]

    @property
    def components(self) -> list:
        return self.module.split(self.value)

    @property
    def bottom(self) -> np.ndarray:
        """The projection ``Sigma -> Sigma_0`` onto the lowest eigenspace."""
        return self.component(0)

    def recombine(self) -> np.ndarray:
        return np.concatenate(self.components, axis=-1)


# ---------------------------------------------------------------------------
# frame geometry on a module


def rotation_forms(chart: MetricChart, x) -> np.ndarray:
    """Connection forms on coordinate vectors: ``out[..., c, a, b] = omega^a_b(d_c)``."""
    g = chart.phi_grad(x)
    I = np.eye(chart.n)
    return np.einsum("ac,...b->...cab", I, g) - np.einsum("bc,...a->...cab", I, g)


@lru_cache(maxsize=None)
def _rotation_tensor(module: GradedModule) -> np.ndarray:
    """``out[c, b] = rho(L_cb)`` with ``L_bc = -L_cb``, shape ``(n, n, d, d)``."""
    n, d = module.n, module.dim
    out = np.zeros((n, n, d, d))
    for (a, b), R in zip(module.algebra.rotation_pairs, module.rho_rotations):
        out[a, b] = R
        out[b, a] = -R
    return out


def levi_civita_matrices(chart: MetricChart, module: GradedModule, x) -> np.ndarray:
    """``rho(omega(d_c))`` for every coordinate direction, shape ``(..., n, d, d)``.

    Since ``omega(d_c) = sum_b phi_b L_cb`` this is a single contraction.
    """
    g = chart.phi_grad(x)
    R = _rotation_tensor(module)
    return np.tensordot(g, np.moveaxis(R, 1, 0), axes=1)


def modified_connection_form(chart: MetricChart, module: GradedModule, x, values, partials) -> np.ndarray:
    """``nabla~ Sigma`` as a W-valued 1-form in frame components, shape ``(..., n, d)``.

    ``values[..., w]`` and ``partials[..., c, w]`` (coordinate partials ``d_c``)
    describe the section near ``x``.
    """
    x = np.asarray(x, dtype=float)
    scale = np.exp(-chart.phi(x))
    rot = levi_civita_matrices(chart, module, x)
    coord = np.asarray(partials) + np.einsum("...cvw,...w->...cv", rot, values)
    frame = scale[..., None, None] * coord
    return frame + np.einsum("avw,...w->...av", module.rho_minus1, values)


def modified_connection_apply(chart: MetricChart, module: GradedModule, field, x, xi, partials=None, h: float = 1e-3):
    """``nabla~_xi Sigma`` at ``x`` for a frame vector ``xi``.

    ``field`` is either a callable returning module vectors (differentiated by
    an order-4 central stencil of step ``h``) or the values at ``x``, in which
    case ``partials[..., c, w]`` must be supplied.
    """
    x = np.asarray(x, dtype=float)
    if callable(field):
        pp = point_partials(field, x, h, 1)
        values = pp[(0,) * chart.n]
        partials = np.stack([pp[tuple(np.eye(chart.n, dtype=int)[c])] for c in range(chart.n)], axis=-2)
    else:
        values = np.asarray(field, dtype=float)
        if partials is None:
            raise ValueError("partials are required when the field is given by values")
    form = modified_connection_form(chart, module, x, values, partials)
    return np.einsum("...a,...av->...v", np.asarray(xi, dtype=float), form)


# ---------------------------------------------------------------------------
# splitting operator


def _alpha_add(alpha: tuple, c: int) -> tuple:
    a = list(alpha)
    a[c] += 1
    return tuple(a)


def _bottom_dim(module: GradedModule) -> int:
    return module.component_dims[0]


def _poly_jets(polys, alphas, x) -> np.ndarray:
    """``out[..., k, j] = d^alphas[k] polys[j] (x)``."""
    return np.stack([np.stack([p.partial(a)(x) for p in polys], axis=-1) for a in alphas], axis=-2)


def _expr_jets(exprs, xs, alphas, x) -> np.ndarray:
    table = [[sp.diff(e, *[v for v, k in zip(xs, a) for _ in range(k)]) if any(a) else e for e in exprs] for a in alphas]
    return _lambdify(table, xs)(x)


class SplittingOperator:
    """The differential operator ``L`` sending a bottom field to its prolongation.

    ``L(f) = sum_i S_i`` with ``S_0 = f`` and ``S_{i+1} = -delta*(nabla S_i)``.
    The operator is stored as coefficient functions of the jets of ``f``:
    ``L(f)(x) = sum_alpha K_alpha(x) d^alpha f(x)``, built once symbolically.
    """

    def __init__(self, chart: MetricChart, module: GradedModule):
        if chart.n != module.n:
            raise ValueError("chart and module dimensions differ")
        self.chart = chart
        self.module = module
        self.order = module.N
        self.alphas = tuple(a for k in range(self.order + 1) for a in multi_indices(chart.n, k))
        self.residual_alphas = tuple(a for k in range(self.order + 2) for a in multi_indices(chart.n, k))
        coeffs, resid = self._build()
        self._coeff_fn = _lambdify(coeffs, chart.xs)
        self._resid_fn = _lambdify(resid, chart.xs)

    # symbolic construction -------------------------------------------------

    def _frame_data(self):
        ch, mod = self.chart, self.module
        n = ch.n
        s = ch.frame_scale_expr
        fg = ch.frame_phi_grad_expr
        rots = [sp.Matrix(R) for R in mod.rho_rotations]
        pairs = mod.algebra.rotation_pairs
        rho_w = []
        for c in range(n):
            # omega^a_b(e_c) = e^-phi (phi_b delta_ac - phi_a delta_bc)
            M = sp.zeros(mod.dim, mod.dim)
            for (a, b), R in zip(pairs, rots):
                w = (fg[b] if a == c else 0) - (fg[a] if b == c else 0)
                if w != 0:
                    M += w * R
            rho_w.append(M)
        return s, rho_w

    def _nabla(self, state: dict, s, rho_w) -> list:
        """Frame covariant derivative of an operator state, one dict per direction."""
        xs = self.chart.xs
        out = []
        for c in range(self.chart.n):
            new = {}
            for alpha, K in state.items():
                term = K.applyfunc(lambda e: sp.expand(s * sp.diff(e, xs[c]))) + (rho_w[c] * K).applyfunc(sp.expand)
                new[alpha] = new.get(alpha, sp.zeros(*K.shape)) + term
                beta = _alpha_add(alpha, c)
                new[beta] = new.get(beta, sp.zeros(*K.shape)) + K.applyfunc(lambda e: sp.expand(s * e))
            out.append(new)
        return out

    def _apply_delta_star(self, forms: list, D) -> dict:
        keys = sorted(set().union(*[f.keys() for f in forms]))
        out = {}
        for alpha in keys:
            parts = [f.get(alpha) for f in forms]
            shape = next(p.shape for p in parts if p is not None)
            stacked = sp.Matrix.vstack(*[p if p is not None else sp.zeros(*shape) for p in parts])
            out[alpha] = (D * stacked).applyfunc(sp.expand)
        return {a: v for a, v in out.items() if any(e != 0 for e in v)}

    def _build(self):
        mod = self.module
        d, d0 = mod.dim, _bottom_dim(mod)
        s, rho_w = self._frame_data()
        D = sp.Matrix(delta_star(mod, 1))
        zero = (0,) * self.chart.n
        S = sp.zeros(d, d0)
        for j in range(d0):
            S[j, j] = 1
        step = {zero: S}
        total = dict(step)
        for _ in range(self.order):
            step = self._apply_delta_star(self._nabla(step, s, rho_w), D)
            step = {a: -v for a, v in step.items()}
            for a, v in step.items():
                total[a] = total.get(a, sp.zeros(d, d0)) + v
        coeffs = [[[total.get(a, sp.zeros(d, d0))[i, j] for j in range(d0)] for i in range(d)] for a in self.alphas]
        # delta*(nabla~ L) as a jet operator of one order more
        forms = self._nabla(total, s, rho_w)
        for c in range(self.chart.n):
            X = sp.Matrix(mod.rho_minus1[c])
            for a, K in total.items():
                forms[c][a] = forms[c].get(a, sp.zeros(d, d0)) + X * K
        resid = self._apply_delta_star(forms, D)
        rcoeffs = [[[resid.get(a, sp.zeros(d, d0))[i, j] for j in range(d0)] for i in range(d)] for a in self.residual_alphas]
        return coeffs, rcoeffs

    # numeric evaluation ----------------------------------------------------

    def coefficients(self, x) -> np.ndarray:
        """``K_alpha(x)``, shape ``(..., len(alphas), d, d0)``."""
        return self._coeff_fn(self.chart.check_points(x))

    def jet_matrix(self, x0) -> np.ndarray:
        """Linear map from the stacked jet ``(d^alpha f(x0))_alpha`` to ``L(f)(x0)``."""
        K = self.coefficients(np.asarray(x0, dtype=float))
        return np.moveaxis(K, -3, -2).reshape(K.shape[:-3] + (K.shape[-2], -1))

    def jets(self, f, x, alphas=None) -> np.ndarray:
        """Exact jets ``(..., len(alphas), d0)`` of a bottom field.

        ``f`` is a :class:`Polynomial`, a sympy expression in the chart
        coordinates, or a list of either (one per bottom coordinate).
        """
        alphas = self.alphas if alphas is None else alphas
        items = f if isinstance(f, (list, tuple)) else [f]
        if len(items) != _bottom_dim(self.module):
            raise ValueError(f"bottom field needs {_bottom_dim(self.module)} components")
        x = np.asarray(x, dtype=float)
        if all(isinstance(p, Polynomial) for p in items):
            return _poly_jets(items, alphas, x)
        exprs = [p.to_sympy(self.chart.xs) if isinstance(p, Polynomial) else sp.sympify(p) for p in items]
        return _expr_jets(exprs, self.chart.xs, alphas, x)

    def apply_jets(self, jets, x) -> np.ndarray:
        return np.einsum("...kij,...kj->...i", self.coefficients(x), jets)

    def __call__(self, f, x) -> TractorSection:
        x = self.chart.check_points(x)
        return TractorSection(self.module, self.apply_jets(self.jets(f, x), x))

    def residual(self, f, x) -> np.ndarray:
        """``delta*(nabla~ L(f))(x)`` evaluated from the exact jet operator."""
        x = self.chart.check_points(x)
        R = self._resid_fn(x)
        return np.einsum("...kij,...kj->...i", R, self.jets(f, x, self.residual_alphas))

    def residual_fd(self, f, x, h: float = 1e-3) -> np.ndarray:
        """``delta*(nabla~ L(f))(x)`` with ``nabla~`` taken by finite differences of ``L(f)``."""
        x = self.chart.check_points(x)
        pp = point_partials(lambda y: self(f, y).value, x, h, 1)
        n = self.chart.n
        vals = pp[(0,) * n]
        parts = np.stack([pp[tuple(np.eye(n, dtype=int)[c])] for c in range(n)], axis=-2)
        form = modified_connection_form(self.chart, self.module, x, vals, parts)
        return np.einsum("ij,...j->...i", delta_star(self.module, 1), form.reshape(form.shape[:-2] + (-1,)))


@lru_cache(maxsize=64)
def splitting_operator_for(chart: MetricChart, module: GradedModule) -> SplittingOperator:
    return SplittingOperator(chart, module)


def splitting_operator(chart: MetricChart, module: GradedModule, f, x) -> TractorSection:
    """``L(f)`` at the points ``x``."""
    return splitting_operator_for(chart, module)(f, x)


def jet_dependence_check(chart: MetricChart, module: GradedModule, f, perturbation, ell: int, x0, tol: float = 1e-10) -> bool:
    """Whether component ``ell`` of ``L(f)(x0)`` is unchanged by ``perturbation``.

    ``f`` and ``perturbation`` are sympy expressions (or lists of them) in the chart
    coordinates; the perturbation is meant to vanish to order ``ell + 1`` at ``x0``.
    """
    op = splitting_operator_for(chart, module)
    x0 = np.asarray(x0, dtype=float)
    items = f if isinstance(f, (list, tuple)) else [f]
    pert = perturbation if isinstance(perturbation, (list, tuple)) else [perturbation]
    g = [sp.sympify(a) + sp.sympify(b) for a, b in zip(items, pert)]
    a = TractorSection(module, op.apply_jets(op.jets(list(items), x0), x0)).component(ell)
    b = TractorSection(module, op.apply_jets(op.jets(g, x0), x0)).component(ell)
    return bool(np.abs(a - b).max() <= tol * max(1.0, np.abs(a).max()))


# ---------------------------------------------------------------------------
# closed systems


@dataclass(frozen=True, eq=False)
class ClosedSystem:
    """First-order system ``nabla~ Sigma + C(Sigma) = 0`` on a chart.

    ``kind`` is ``"explicit_einstein"`` (standard module, tracefree Hessian
    equation with lower-order term ``f A``), ``"flat_zero"`` (flat chart, C = 0)
    or ``"bare"`` (C = 0 on any chart; only the modified connection itself).
    """

    chart: MetricChart
    module: GradedModule
    kind: str
    A: LowerOrderTensor | None = None
    curvature_sign: int = 1

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def dim(self) -> int:
        return self.module.dim

    def C(self, x) -> np.ndarray:
        """``C(e_a)`` as matrices in frame components, shape ``(..., n, d, d)``."""
        x = np.asarray(x, dtype=float)
        n, d = self.n, self.dim
        out = np.zeros(x.shape[:-1] + (n, d, d))
        if self.kind in ("flat_zero", "bare"):
            return out
        phi = self.chart.phi(x)
        e2 = np.exp(-2 * phi)[..., None, None]
        ric = e2 * conformal_ricci(self.chart.phi_grad(x), self.chart.phi_hess(x))
        f_, m_, h_ = self.module.slices
        if self.A is not None and not self.A.is_zero:
            A = e2 * self.A.values(x)
            nabla_A = covariant_derivative(self.chart, x, self.A.values(x), self.A.partials(x))
            div = np.exp(-3 * phi)[..., None] * np.einsum("...cca->...a", nabla_A)
        else:
            A = np.zeros_like(ric)
            div = np.zeros(x.shape[:-1] + (n,))
        k = 1.0 / (n - 1)
        # rows in module order (f, phi_1..phi_n, h)
        out[..., :, m_, f_.start] = A
        out[..., :, h_.start, m_] = -k * (self.curvature_sign * ric + A)
        out[..., :, h_.start, f_.start] = -k * div
        return out

    def matrices(self, x) -> np.ndarray:
        """Connection matrices along coordinate directions, shape ``(..., n, d, d)``.

        Along a curve with coordinate velocity ``v`` parallel sections satisfy
        ``dSigma/dt = -sum_c v^c M_c Sigma``.
        """
        x = self.chart.check_points(x)
        rot = levi_civita_matrices(self.chart, self.module, x)
        sold = self.module.rho_minus1 + self.C(x)
        return rot + np.exp(self.chart.phi(x))[..., None, None, None] * sold

    def direction_matrix(self, x, v) -> np.ndarray:
        """``sum_c v^c M_c(x)`` for velocities ``v`` broadcast against ``x``."""
        x = self.chart.check_points(x)
        v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
        R = _rotation_tensor(self.module)
        # rotation part: sum_{c,b} v_c phi_b rho(L_cb)
        w = v[..., :, None] * self.chart.phi_grad(x)[..., None, :]
        out = np.tensordot(w, R, axes=2)
        sold = np.tensordot(v, self.module.rho_minus1, axes=1)
        if self.kind == "explicit_einstein":
            sold = sold + np.einsum("...c,...cvw->...vw", v, self.C(x))
        return out + np.exp(self.chart.phi(x))[..., None, None] * sold

    def residual(self, x, values, partials) -> np.ndarray:
        """``nabla~ Sigma + C(Sigma)`` in frame components, shape ``(..., n, d)``."""
        form = modified_connection_form(self.chart, self.module, x, values, partials)
        return form + np.einsum("...avw,...w->...av", self.C(x), values)

    def convention(self) -> dict:
        return {
            "curvature_sign": self.curvature_sign,
            "top_row": "grad_a h - (1/(n-1)) (s Ric_a^d phi_d + f div(A)_a + phi^c A_ac), s = curvature_sign",
            "frame": "orthonormal, e_a = exp(-phi) d_a",
        }


def _require_standard(module: GradedModule):
    if module.spec.family != "scalar" or module.spec.r != 2:
        raise ConfigError("the explicit closed system needs the standard module (scalar family, r = 2)")


def build_closed_system_einstein(chart: MetricChart, A: LowerOrderTensor | None = None,
                                 module: GradedModule | None = None, curvature_sign: int = 1,
                                 trace_tol: float = 1e-12) -> ClosedSystem:
    """Closed system for ``D(f) = nabla_(a nabla_b)_0 f + A_ab f`` on the standard module."""
    from .algebra import build_algebra, build_module

    if module is None:
        module = build_module(build_algebra(chart.n), ModuleSpec("scalar", 2))
    _require_standard(module)
    if module.n != chart.n:
        raise ConfigError("chart and module dimensions differ")
    if A is None:
        A = LowerOrderTensor.zero(chart.n)
    if A.n != chart.n:
        raise ConfigError("lower-order tensor has the wrong dimension")
    # origin plus points along each axis at half the chart radius
    E = np.eye(chart.n) * 0.5 * min(chart.domain_radius, 1.0)
    probe = np.vstack([np.zeros(chart.n), E, -E])
    if A.trace_residual(probe) > trace_tol:
        raise ConfigError("lower-order tensor is not tracefree")
    return ClosedSystem(chart, module, "explicit_einstein", A, int(curvature_sign))


def build_closed_system_flat(module: GradedModule, chart: MetricChart | None = None) -> ClosedSystem:
    """The flat-model closed system ``nabla~ Sigma = 0`` (C = 0)."""
    from .geometry import make_chart

    if chart is None:
        chart = make_chart(module.n, "flat")
    if chart.family != "flat":
        raise ConfigError("the C = 0 closed system is only valid on the flat chart")
    return ClosedSystem(chart, module, "flat_zero")


# ---------------------------------------------------------------------------
# transport


@dataclass
class TransportResult:
    value: np.ndarray
    error_estimate: float | None = None
    steps: int = 0


def _segment_steps(lengths: np.ndarray, step: float) -> int:
    if step <= 0 or not np.isfinite(step):
        raise NumericalInstabilityError("integrator step must be positive")
    k = int(math.ceil(float(np.max(lengths)) / step - 1e-9)) if lengths.size else 1
    if k > 10_000_000:
        raise NumericalInstabilityError("integrator step underflow: too many steps requested")
    return max(k, 1)


def transport_segments(system: ClosedSystem, starts, ends, Y0, step: float = DEFAULT_STEP, steps: int | None = None) -> np.ndarray:
    """Transport along straight segments ``starts[b] -> ends[b]``.

    ``Y0`` has shape ``(B, d, m)`` (or ``(d, m)``, shared).  All segments in the
    batch use the same number of RK4 steps, so no step exceeds ``step``.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    B = ends.shape[0]
    starts = np.broadcast_to(starts, ends.shape)
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.ndim == 2:
        Y0 = np.broadcast_to(Y0, (B,) + Y0.shape)
    vel = ends - starts
    K = steps if steps is not None else _segment_steps(np.linalg.norm(vel, axis=-1), step)
    t = np.arange(2 * K + 1) / (2.0 * K)
    out = np.empty((B,) + Y0.shape[1:])
    per = max(1, CHUNK_NODES // (2 * K + 1))
    for lo in range(0, B, per):
        hi = min(B, lo + per)
        pts = starts[lo:hi, None, :] + t[None, :, None] * vel[lo:hi, None, :]
        Acoef = np.ascontiguousarray(system.direction_matrix(pts, vel[lo:hi, None, :]))
        out[lo:hi] = propagate(Acoef, 1.0 / K, np.ascontiguousarray(Y0[lo:hi]))
    return out


def path_transport_matrix(system: ClosedSystem, path, step: float = DEFAULT_STEP, refine: int = 1) -> np.ndarray:
    """Transport matrix along a polyline ``path`` (vertices, shape ``(P, n)``)."""
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[0] < 2:
        raise ValueError("a path needs at least two vertices")
    system.chart.check_points(path)
    d = system.dim
    M = np.eye(d)
    for p, q in zip(path[:-1], path[1:]):
        K = _segment_steps(np.array([np.linalg.norm(q - p)]), step) * refine
        T = transport_segments(system, p, q[None], np.eye(d), steps=K)[0]
        M = T @ M
    return M


def transport(system: ClosedSystem, sigma0, path, step: float = DEFAULT_STEP, estimate_error: bool = True) -> TransportResult:
    """Transport an initial value (vector or matrix of columns) along a polyline."""
    sigma0 = np.asarray(sigma0, dtype=float)
    M = path_transport_matrix(system, path, step)
    value = M @ sigma0
    err = None
    if estimate_error:
        fine = path_transport_matrix(system, path, step, refine=2) @ sigma0
        err = float(np.abs(fine - value).max())
    n_steps = sum(
        _segment_steps(np.array([np.linalg.norm(q - p)]), step)
        for p, q in zip(np.asarray(path)[:-1], np.asarray(path)[1:])
    )
    return TransportResult(value, err, n_steps)


def transport_rays(system: ClosedSystem, basepoint, targets, sigma0, step: float = DEFAULT_STEP) -> np.ndarray:
    """Transport ``sigma0`` (``(d,)`` or ``(d, m)``) from ``basepoint`` to every target."""
    targets = np.asarray(targets, dtype=float)
    flat = targets.reshape(-1, system.n)
    system.chart.check_points(flat)
    s0 = np.asarray(sigma0, dtype=float)
    vec = s0.ndim == 1
    Y0 = s0[:, None] if vec else s0
    out = transport_segments(system, np.asarray(basepoint, dtype=float)[None], flat, Y0, step)
    out = out[..., 0] if vec else out
    return out.reshape(targets.shape[:-1] + out.shape[1:])


# ---------------------------------------------------------------------------
# holonomy


def default_loops(n: int, basepoint, sides=(0.4, 0.8)) -> list:
    """Coordinate-plane rectangles through ``basepoint``, for all axis pairs and both side assignments."""
    p = np.asarray(basepoint, dtype=float)
    loops = []
    E = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            for si, sj in (tuple(sides), tuple(reversed(sides))):
                u, v = si * E[i], sj * E[j]
                loops.append(np.array([p, p + u, p + u + v, p + v, p]))
    return loops


def holonomy(system: ClosedSystem, loop, step: float = DEFAULT_STEP) -> np.ndarray:
    loop = np.asarray(loop, dtype=float)
    if not np.allclose(loop[0], loop[-1]):
        raise ValueError("holonomy needs a closed loop")
    return path_transport_matrix(system, loop, step)


@dataclass
class SolutionSpace:
    dimension: int
    basis: np.ndarray
    singular_values: np.ndarray
    holonomies: list = field(repr=False)
    ill_conditioned: bool
    threshold: float
    step_error: float

    @property
    def holonomy_defects(self) -> list:
        return [float(np.abs(H - np.eye(H.shape[0])).max()) for H in self.holonomies]


def solution_space(system: ClosedSystem, loops=None, basepoint=None, step: float = DEFAULT_STEP,
                   threshold: float = HOLONOMY_THRESHOLD, band=ILL_CONDITIONED_BAND) -> SolutionSpace:
    """Joint fixed space of the holonomies of ``loops`` (default rectangles at ``basepoint``)."""
    if basepoint is None:
        basepoint = np.zeros(system.n)
    if loops is None:
        loops = default_loops(system.n, basepoint)
    d = system.dim
    hols, errs = [], []
    for loop in loops:
        H = holonomy(system, loop, step)
        H2 = path_transport_matrix(system, loop, step, refine=2)
        hols.append(H)
        errs.append(float(np.abs(H2 - H).max()))
    M = np.vstack([H - np.eye(d) for H in hols])
    _, s, Vt = np.linalg.svd(M)
    keep = s <= threshold
    basis = _linalg.canonical_signs(Vt[keep].T) if keep.any() else np.zeros((d, 0))
    ill = bool(np.any((s >= band[0]) & (s <= band[1])))
    return SolutionSpace(int(keep.sum()), basis, s, hols, ill, threshold, max(errs) if errs else 0.0)


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct(system: ClosedSystem, sigma0, grid: Grid, basepoint=None, step: float = DEFAULT_STEP) -> np.ndarray:
    """Transported sections on every grid node, shape ``grid.shape + (d,)`` (plus columns)."""
    if basepoint is None:
        basepoint = np.zeros(system.n)
    return transport_rays(system, basepoint, grid.nodes, sigma0, step)


@dataclass
class Reconstruction:
    """Transported sections on a grid and the residual of the recovered bottom fields.

    With several initial values (columns) ``sections`` and ``bottom`` carry a
    trailing column axis and ``residuals`` lists one maximum per column.
    """

    sections: np.ndarray
    bottom: np.ndarray
    residuals: list
    residual_fields: list = field(repr=False)

    @property
    def residual(self) -> float:
        return max(self.residuals)


def operator_tag(system: ClosedSystem) -> str:
    if system.kind == "explicit_einstein":
        return "einstein"
    return "adjoint" if system.module.spec.family == "adjoint" else f"flat_r{system.module.spec.r}"


def reconstruct_and_check(system: ClosedSystem, sigma0, grid: Grid, basepoint=None, step: float = DEFAULT_STEP,
                          tag: str | None = None) -> Reconstruction:
    """Transport to ``grid``, extract ``f = Sigma_0`` and evaluate ``D(f)`` by finite differences.

    ``sigma0`` is one initial value or a ``(d, m)`` matrix of them.
    """
    from .oracle import fd_residual

    sigma0 = np.asarray(sigma0, dtype=float)
    cols = sigma0[:, None] if sigma0.ndim == 1 else sigma0
    sec = reconstruct(system, cols, grid, basepoint, step)  # grid + (d, m)
    bottom = np.moveaxis(sec, -1, 0)[..., system.module.slices[0]]  # (m,) + grid + (d0,)
    tag = tag or operator_tag(system)
    res, fields, fs = [], [], []
    for b in bottom:
        f = b[..., 0] if b.shape[-1] == 1 else b
        r, vals = fd_residual(system.chart, grid, f, tag, A=system.A, return_field=True)
        res.append(r)
        fields.append(vals)
        fs.append(f)
    if sigma0.ndim == 1:
        sec = sec[..., 0]
        out_bottom = fs[0]
    else:
        out_bottom = np.stack(fs, axis=-1)
    return Reconstruction(sec, out_bottom, res, fields)


# ---------------------------------------------------------------------------
# cross-checks


def fixed_space_residual(space: SolutionSpace, vectors) -> np.ndarray:
    """Relative distance of each column of ``vectors`` from the computed solution space."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float).T).T
    Q = space.basis
    proj = Q @ np.linalg.lstsq(Q, V, rcond=None)[0] if Q.shape[1] else np.zeros_like(V)
    return np.linalg.norm(V - proj, axis=0) / np.maximum(np.linalg.norm(V, axis=0), 1e-300)


def grid_jets(values: np.ndarray, grid: Grid, alphas, margin: int) -> np.ndarray:
    """Stencil jets of grid samples on the interior: ``(interior..., len(alphas), d0)``."""
    from .stencils import grid_partial

    vals = values if values.ndim > grid.n else values[..., None]
    return np.stack([grid_partial(vals, grid.spacing, a, margin) for a in alphas], axis=-2)


def equivalence_check(system: ClosedSystem, recon: Reconstruction, grid: Grid, column: int | None = None) -> float:
    """Recompute ``L(f)`` from stencil jets of the reconstructed ``f`` and compare with the transported sections.

    Returns the maximum deviation over the stencil interior, relative to the section scale.
    """
    from .stencils import stencil_halfwidth

    op = splitting_operator_for(system.chart, system.module)
    margin = stencil_halfwidth(op.order)
    sec = recon.sections if column is None else recon.sections[..., column]
    f = recon.bottom if column is None else recon.bottom[..., column]
    jets = grid_jets(f, grid, op.alphas, margin)
    inner = grid.interior(margin)
    pts = grid.nodes[inner]
    L = op.apply_jets(jets, pts)
    scale = max(1.0, float(np.abs(sec).max()))
    return float(np.abs(L - sec[inner]).max() / scale)


def curvature_spot_check(chart: MetricChart, module: GradedModule, x, eps: float = 1e-2, step: float = 1e-4) -> dict:
    """Compare small-loop holonomy of ``nabla~`` with the componentwise Riemann action.

    For a square of side ``eps`` centred at ``x`` in the (a, b) coordinate plane,
    ``(I - H) / eps^2`` approximates the curvature of the connection on ``d_a, d_b``
    up to ``O(eps^2)``;
    the prediction is ``rho(R_ab)`` with ``R_ab`` the Riemann endomorphism.
    """
    from .geometry import riemann

    system = ClosedSystem(chart, module, "bare")
    x = np.asarray(x, dtype=float)
    R = riemann(chart, x[None])[0]
    worst, scale = 0.0, 0.0
    E = np.eye(chart.n)
    for a in range(chart.n):
        for b in range(a + 1, chart.n):
            u, v = 0.5 * eps * E[a], 0.5 * eps * E[b]
            # lasso based at x so the holonomy is expressed in the fibre over x
            loop = np.array([x, x - u - v, x + u - v, x + u + v, x - u + v, x - u - v, x])
            H = path_transport_matrix(system, loop, step)
            F = (np.eye(module.dim) - H) / eps**2
            pred = module.rotation_action(R[a, b])
            worst = max(worst, float(np.abs(F - pred).max()))
            scale = max(scale, float(np.abs(pred).max()))
    return {"max_deviation": worst, "curvature_scale": scale, "eps": eps}
