"""Brute-force verifiers that share no code with the prolongation machinery.

* :func:`collocation_nullspace` finds all polynomial solutions of bounded degree
  of a linear differential equation by sampling it at random points.
* :func:`fd_residual` evaluates the second (or r-th) order operator on grid
  samples with central stencils.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericalInstabilityError
from .geometry import MetricChart, christoffel
from .polynomials import Polynomial, monomial_exponents
from .stencils import Grid, grid_partial, multi_indices, stencil_halfwidth

ORACLE_RTOL = 1e-8
ORACLE_GAP = 10.0
TAG_PATTERN = re.compile(r"^(flat_r(?P<r>[1-9][0-9]*)|adjoint|einstein|sphere_einstein)$")


def parse_tag(tag: str) -> tuple:
    """``(kind, r)`` from an operator tag such as ``flat_r3``, ``adjoint``, ``einstein``."""
    m = TAG_PATTERN.match(tag)
    if not m:
        raise ConfigError(f"unknown operator tag {tag!r}")
    if m.group("r"):
        return "flat", int(m.group("r"))
    return tag, 2 if tag != "adjoint" else 1


# ---------------------------------------------------------------------------
# polynomial spaces


@dataclass(frozen=True)
class PolynomialSpace:
    """Real polynomials of degree <= d in n variables over the monomial basis."""

    n: int
    d: int

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.n, self.d)

    @property
    def dim(self) -> int:
        return math.comb(self.n + self.d, self.d)

    def partial_matrix(self, alpha, x) -> np.ndarray:
        """``out[s, j] = d^alpha m_j (x_s)`` by exact falling-factorial rules."""
        x = np.asarray(x, dtype=float)
        e = self.exponents
        alpha = np.asarray(alpha, dtype=int)
        lowered = e - alpha
        ok = np.all(lowered >= 0, axis=1)
        coeff = np.ones(len(e))
        for i in range(self.n):
            for k in range(alpha[i]):
                coeff = coeff * (e[:, i] - k)
        coeff = np.where(ok, coeff, 0.0)
        powers = np.prod(x[:, None, :] ** np.maximum(lowered, 0)[None], axis=-1)
        return powers * coeff[None]

    def evaluate(self, coeffs, x) -> np.ndarray:
        return self.partial_matrix((0,) * self.n, x) @ np.asarray(coeffs, dtype=float)

    def polynomial(self, coeffs) -> Polynomial:
        return Polynomial(self.exponents, np.asarray(coeffs, dtype=float))


# ---------------------------------------------------------------------------
# tracefree projection of symmetric tensors stored by multi-index


@lru_cache(maxsize=None)
def _tracefree_data(n: int, r: int):
    betas = multi_indices(n, r)
    w = np.array([math.factorial(r) / np.prod([math.factorial(k) for k in b]) for b in betas])
    if r < 2:
        return betas, w, np.eye(len(betas))
    gammas = multi_indices(n, r - 2)
    pos = {b: i for i, b in enumerate(betas)}
    T = np.zeros((len(gammas), len(betas)))
    for g, gam in enumerate(gammas):
        for i in range(n):
            b = list(gam)
            b[i] += 2
            T[g, pos[tuple(b)]] += 1.0
    Winv = np.diag(1.0 / w)
    P = np.eye(len(betas)) - Winv @ T.T @ np.linalg.solve(T @ Winv @ T.T, T)
    return betas, w, P


def tracefree_symmetric(components: np.ndarray, n: int, r: int) -> np.ndarray:
    """Tracefree part, scaled so the Euclidean norm of the result is the full tensor norm.

    ``components[..., k]`` are the entries ``T_beta`` of a symmetric r-tensor,
    ordered as ``multi_indices(n, r)``.
    """
    _, w, P = _tracefree_data(n, r)
    return np.einsum("kl,...l->...k", P, components) * np.sqrt(w)


# ---------------------------------------------------------------------------
# collocation


@dataclass
class OracleResult:
    tag: str
    n: int
    degree: int
    dimension: int
    singular_values: np.ndarray
    basis: np.ndarray  # coefficient columns; adjoint stacks n blocks of monomials
    components: int = 1
    samples: int = 0

    def polynomials(self) -> list:
        """Basis solutions as polynomials (lists of polynomials for vector fields)."""
        space = PolynomialSpace(self.n, self.degree)
        out = []
        for col in self.basis.T:
            parts = [space.polynomial(c) for c in col.reshape(self.components, space.dim)]
            out.append(parts if self.components > 1 else parts[0])
        return out

    def to_json(self) -> dict:
        return {
            "tag": self.tag,
            "n": self.n,
            "degree": self.degree,
            "dimension": self.dimension,
            "samples": self.samples,
            "singular_values": [float(s) for s in self.singular_values],
            "basis_coefficients": [[float(v) for v in col] for col in self.basis.T],
        }


def sample_points(n: int, count: int, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
    """Uniform points in the ball of the given radius."""
    g = rng.normal(size=(count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = radius * rng.uniform(size=(count, 1)) ** (1.0 / n)
    return g * rad


def _flat_rows(space: PolynomialSpace, r: int, x: np.ndarray) -> np.ndarray:
    n = space.n
    betas = multi_indices(n, r)
    D = np.stack([space.partial_matrix(b, x) for b in betas], axis=1)  # (S, nb, dim)
    rows = np.einsum("kl,slj->skj", _tracefree_data(n, r)[2], D) * np.sqrt(_tracefree_data(n, r)[1])[None, :, None]
    return rows.reshape(-1, space.dim)


def _adjoint_rows(space: PolynomialSpace, x: np.ndarray) -> np.ndarray:
    n, m = space.n, space.dim
    E = np.eye(n, dtype=int)
    D = [space.partial_matrix(tuple(E[a]), x) for a in range(n)]  # d_a m_j
    S = x.shape[0]
    blocks = []
    for a in range(n):
        for b in range(a, n):
            row = np.zeros((S, n * m))
            # sym part of d_a V_b
            row[:, b * m:(b + 1) * m] += 0.5 * D[a]
            row[:, a * m:(a + 1) * m] += 0.5 * D[b]
            if a == b:
                for c in range(n):
                    row[:, c * m:(c + 1) * m] -= D[c] / n
            weight = 1.0 if a == b else math.sqrt(2.0)
            blocks.append(weight * row)
    return np.stack(blocks, axis=1).reshape(-1, n * m)


def _sphere_rows(space: PolynomialSpace, chart: MetricChart, x: np.ndarray) -> np.ndarray:
    """Rows for ``nabla_(a nabla_b)_0 f = 0`` with the ansatz ``f = exp(phi) p``."""
    n = space.n
    E = np.eye(n, dtype=int)
    p0 = space.partial_matrix((0,) * n, x)
    p1 = [space.partial_matrix(tuple(E[a]), x) for a in range(n)]
    g = chart.phi_grad(x)
    H = chart.phi_hess(x)
    gam = christoffel(chart, x)
    # derivatives of exp(-phi) f = p up to the overall factor exp(phi)
    f1 = [g[:, a, None] * p0 + p1[a] for a in range(n)]
    blocks = []
    hess = {}
    for a in range(n):
        for b in range(a, n):
            pab = space.partial_matrix(tuple(E[a] + E[b]), x)
            fab = (H[:, a, b] + g[:, a] * g[:, b])[:, None] * p0 + g[:, a, None] * p1[b] + g[:, b, None] * p1[a] + pab
            cov = fab - sum(gam[:, c, a, b, None] * f1[c] for c in range(n))
            hess[(a, b)] = cov
    trace = sum(hess[(a, a)] for a in range(n)) / n
    for a in range(n):
        for b in range(a, n):
            if a == b:
                blocks.append(hess[(a, a)] - trace)
            else:
                blocks.append(math.sqrt(2.0) * hess[(a, b)])
    return np.stack(blocks, axis=1).reshape(-1, space.dim)


def collocation_nullspace(tag: str, n: int, d: int, samples: np.ndarray, chart: MetricChart | None = None,
                          rtol: float = ORACLE_RTOL, gap: float = ORACLE_GAP) -> OracleResult:
    """Numerical nullspace of the collocated operator on polynomials of degree <= d.

    Tags: ``flat_r<r>`` (tracefree symmetrised r-th derivative), ``adjoint``
    (conformal Killing operator on vector fields) and ``sphere_einstein``
    (tracefree covariant Hessian on the round sphere chart, solutions sought as
    ``exp(phi) p``).
    """
    kind, r = parse_tag(tag)
    space = PolynomialSpace(n, d)
    samples = np.asarray(samples, dtype=float)
    comps = n if kind == "adjoint" else 1
    unknowns = comps * space.dim
    if samples.shape[0] < 3 * space.dim:
        raise ValueError(f"need at least {3 * space.dim} sample points, got {samples.shape[0]}")
    if kind == "flat":
        M = _flat_rows(space, r, samples)
    elif kind == "adjoint":
        M = _adjoint_rows(space, samples)
    elif kind == "sphere_einstein":
        if chart is None or chart.family != "sphere":
            raise ConfigError("sphere_einstein collocation needs a sphere chart")
        M = _sphere_rows(space, chart, chart.check_points(samples))
    else:
        raise ConfigError(f"no collocation assembly for tag {tag!r}")
    scale = np.linalg.norm(M, axis=0)
    # columns that vanish up to rounding are left unscaled so noise is not amplified
    scale = np.where(scale > 1e-10 * scale.max(), scale, 1.0) if scale.max() > 0 else np.ones_like(scale)
    _, s, Vt = np.linalg.svd(M / scale, full_matrices=True)
    full = np.concatenate([s, np.zeros(unknowns - len(s))]) if len(s) < unknowns else s
    cut = rtol * full[0] if full[0] > 0 else 0.0
    null_mask = full <= cut
    kept, dropped = full[~null_mask], full[null_mask]
    if kept.size and dropped.size and dropped.max() > 0 and kept.min() / dropped.max() < gap:
        raise NumericalInstabilityError(
            f"collocation rank is ambiguous: gap {kept.min() / dropped.max():.3g} < {gap}; use more samples"
        )
    null = Vt[null_mask].T / scale[:, None]
    if null.shape[1]:
        q, _ = np.linalg.qr(null)
        null = _canonical(q)
    return OracleResult(tag, n, d, int(null_mask.sum()), full, null, comps, samples.shape[0])


def _canonical(B: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Reduced echelon basis of span(B): deterministic up to rounding."""
    R = B.T.copy()
    k, m = R.shape
    row = 0
    for col in range(m):
        if row == k:
            break
        piv = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[piv, col]) <= tol:
            continue
        R[[row, piv]] = R[[piv, row]]
        R[row] /= R[row, col]
        for i in range(k):
            if i != row:
                R[i] -= R[i, col] * R[row]
        row += 1
    R[np.abs(R) < 1e-13] = 0.0
    return R.T


def oracle_dimension(tag: str, n: int, d: int, rng: np.random.Generator, chart=None, factor: int = 3,
                     radius: float = 1.0) -> dict:
    """Run the collocation at degree ``d`` and ``d + 1``; report both and whether they agree."""
    out = {}
    for deg in (d, d + 1):
        comps = n if parse_tag(tag)[0] == "adjoint" else 1
        count = factor * comps * math.comb(n + deg, deg)
        pts = sample_points(n, count, rng, radius)
        out[deg] = collocation_nullspace(tag, n, deg, pts, chart)
    return {"primary": out[d], "extended": out[d + 1], "complete": out[d].dimension == out[d + 1].dimension}


# ---------------------------------------------------------------------------
# finite-difference residuals


def fd_residual(chart: MetricChart, grid: Grid, f: np.ndarray, tag: str, A=None, return_field: bool = False):
    """Maximum norm of ``D(f)`` over the stencil interior of ``grid``.

    ``f`` holds grid samples (trailing axis of length n for vector fields).
    Tags: ``einstein`` (``nabla_(a nabla_b)_0 f + A_ab f`` in frame norm),
    ``flat_r<r>`` and ``adjoint`` (flat chart only).
    """
    kind, r = parse_tag(tag)
    n = grid.n
    f = np.asarray(f, dtype=float)
    margin = stencil_halfwidth(r)
    h = grid.spacing
    inner = grid.interior(margin)
    pts = grid.nodes[inner]
    chart.check_points(pts)
    if kind in ("flat", "adjoint") and chart.family != "flat":
        raise ConfigError(f"operator {tag!r} is defined on the flat chart only")
    E = np.eye(n, dtype=int)
    if kind == "flat":
        comps = np.stack([grid_partial(f, h, b, margin) for b in multi_indices(n, r)], axis=-1)
        field_ = tracefree_symmetric(comps, n, r)
        norms = np.linalg.norm(field_, axis=-1)
    elif kind == "adjoint":
        if f.shape != grid.shape + (n,):
            raise ValueError("adjoint residual needs a vector field on the grid")
        J = np.stack([grid_partial(f, h, tuple(E[a]), margin) for a in range(n)], axis=-2)  # d_a V_b
        S = 0.5 * (J + np.swapaxes(J, -1, -2))
        S = S - np.trace(S, axis1=-2, axis2=-1)[..., None, None] / n * np.eye(n)
        field_ = S
        norms = np.linalg.norm(S, axis=(-2, -1))
    else:
        grad = np.stack([grid_partial(f, h, tuple(E[a]), margin) for a in range(n)], axis=-1)
        hess = np.empty(grad.shape[:-1] + (n, n))
        for a in range(n):
            for b in range(a, n):
                hess[..., a, b] = hess[..., b, a] = grid_partial(f, h, tuple(E[a] + E[b]), margin)
        cov = hess - np.einsum("...cab,...c->...ab", christoffel(chart, pts), grad)
        if A is not None and not A.is_zero:
            cov = cov + A.values(pts) * f[inner][..., None, None]
        cov = cov - np.trace(cov, axis1=-2, axis2=-1)[..., None, None] / n * np.eye(n)
        field_ = np.exp(-2 * chart.phi(pts))[..., None, None] * cov
        norms = np.linalg.norm(field_, axis=(-2, -1))
    res = float(norms.max())
    if return_field:
        return res, norms
    return res
