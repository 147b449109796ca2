"""Graded Lie algebra o(n+1,1), its graded modules and the Kostant differentials.

Everything here is explicit finite-dimensional linear algebra.  The ambient
space is V = R^{n+2} with coordinates numbered 0..n+1 and the light-cone form
``x0*y_{n+1} + x_{n+1}*y0 + sum_i x_i*y_i``.

Coordinate conventions
----------------------
* Module coordinates are ordered by ascending eigenvalue of the grading
  element, so the bottom component W_0 comes first.  For the standard
  representation this gives ``(f, phi_1..phi_n, h)``.
* An element of ``Lambda^k g_1 (x) W`` is stored through its values on the
  basis ``X_1..X_n`` of g_{-1}: coordinate ``(I, w)`` with ``I`` an increasing
  k-tuple (lexicographic) is ``alpha(X_I)_w``; the index is ``I_pos*dim W + w``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from . import _linalg
from ._linalg import RANK_RTOL
from .errors import AlgebraInvariantError

__all__ = [
    "GradedLieAlgebra",
    "ModuleSpec",
    "GradedModule",
    "FormBlock",
    "HodgeDecomposition",
    "CartanProduct",
    "build_algebra",
    "build_module",
    "standard_module",
    "form_indices",
    "lie_differential",
    "codifferential",
    "hodge_decompose",
    "delta_star",
    "phi_map",
    "symmetric_projector",
    "cartan_product_projection",
    "module_dimension",
    "killing_tensor_dimension",
    "quoted_scalar_dimension",
    "dimension_formula_table",
    "reference_standard_delta_star",
    "form_dim",
    "homogeneity",
]


def _bracket(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return X @ Y - Y @ X


@dataclass(frozen=True, eq=False)
class GradedLieAlgebra:
    """Matrix model of o(n+1,1) with its |1|-grading.

    ``basis_0`` starts with the grading element ``E`` followed by the
    rotations ``L_ab`` (a < b) of the Euclidean block, labelled by
    ``rotation_pairs``.
    """

    n: int
    J: np.ndarray
    basis_minus1: tuple
    basis_0: tuple
    basis_1: tuple
    E: np.ndarray
    rotation_pairs: tuple

    @property
    def dim(self) -> int:
        return len(self.basis_minus1) + len(self.basis_0) + len(self.basis_1)

    @property
    def graded_basis(self):
        """Pairs ``(grade, matrix)`` for every basis element."""
        return (
            [(-1, X) for X in self.basis_minus1]
            + [(0, A) for A in self.basis_0]
            + [(1, Z) for Z in self.basis_1]
        )

    def soldering(self, xi) -> np.ndarray:
        """The element ``sum_a xi_a X_a`` of g_{-1}."""
        return np.tensordot(np.asarray(xi, dtype=float), np.array(self.basis_minus1), axes=1)

    def rotation(self, omega: np.ndarray) -> np.ndarray:
        """Embed a skew n x n matrix as the O(n) block of g."""
        M = np.zeros((self.n + 2, self.n + 2))
        M[1:-1, 1:-1] = omega
        return M

    def check_invariants(self, atol: float = 1e-12) -> dict:
        """Verify the defining identities; raise on failure, else return a summary."""
        n = self.n
        worst = 0.0
        for _, M in self.graded_basis:
            worst = max(worst, np.abs(M.T @ self.J + self.J @ M).max())
        grading = 0.0
        for i, M in self.graded_basis:
            grading = max(grading, np.abs(_bracket(self.E, M) - i * M).max())
        closure = 0.0
        for (i, X), (j, Y) in itertools.product(self.graded_basis, repeat=2):
            B = _bracket(X, Y)
            if abs(i + j) > 1:
                closure = max(closure, np.abs(B).max())
            else:
                closure = max(closure, np.abs(_bracket(self.E, B) - (i + j) * B).max())
        abelian = max(
            (np.abs(_bracket(X, Y)).max() for X, Y in itertools.combinations(self.basis_1, 2)),
            default=0.0,
        )
        dims = (len(self.basis_minus1), len(self.basis_0), len(self.basis_1))
        expected = (n, n * (n - 1) // 2 + 1, n)
        if max(worst, grading, closure, abelian) > atol or dims != expected:
            raise AlgebraInvariantError(
                f"o({n + 1},1) invariants violated: form={worst:.3g} grading={grading:.3g} "
                f"closure={closure:.3g} abelian={abelian:.3g} dims={dims}"
            )
        return {
            "form_residual": float(worst),
            "grading_residual": float(grading),
            "bracket_closure_residual": float(closure),
            "g1_abelian_residual": float(abelian),
            "dims": list(dims),
            "total_dim": self.dim,
        }


def build_algebra(n: int) -> GradedLieAlgebra:
    """Build o(n+1,1) in light-cone form, graded by ``E = diag(1, 0, ..., 0, -1)``."""
    if int(n) != n or n < 2:
        raise ValueError(f"chart dimension must be an integer >= 2, got {n!r}")
    n = int(n)
    m = n + 2
    J = np.zeros((m, m))
    J[0, -1] = J[-1, 0] = 1.0
    J[1:-1, 1:-1] = np.eye(n)

    minus, plus = [], []
    for a in range(1, n + 1):
        X = np.zeros((m, m))
        X[a, 0] = 1.0
        X[-1, a] = -1.0
        minus.append(X)
        Z = np.zeros((m, m))
        Z[0, a] = 1.0
        Z[a, -1] = -1.0
        plus.append(Z)
    E = np.diag([1.0] + [0.0] * n + [-1.0])
    zero = [E]
    pairs = tuple(itertools.combinations(range(n), 2))
    for a, b in pairs:
        L = np.zeros((m, m))
        L[a + 1, b + 1] = 1.0
        L[b + 1, a + 1] = -1.0
        zero.append(L)
    return GradedLieAlgebra(
        n=n,
        J=J,
        basis_minus1=tuple(minus),
        basis_0=tuple(zero),
        basis_1=tuple(plus),
        E=E,
        rotation_pairs=pairs,
    )


# ---------------------------------------------------------------------------
# modules


@dataclass(frozen=True)
class ModuleSpec:
    """Module family tag.

    ``scalar`` with parameter ``r >= 1`` is the tracefree symmetric power
    ``S^{r-1}_0 V`` (bottom component trivial); ``adjoint`` is ``Lambda^2 V``
    (bottom component R^n, r = 1) and needs n >= 3.
    """

    family: str
    r: int = 1

    def __post_init__(self):
        if self.family not in ("scalar", "adjoint"):
            raise ValueError(f"unknown module family {self.family!r}")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"r must be an integer >= 1, got {self.r!r}")
        if self.family == "adjoint" and self.r != 1:
            raise ValueError("the adjoint family has r = 1")

    @property
    def label(self) -> str:
        return f"scalar(r={self.r})" if self.family == "scalar" else "adjoint"


def _monomials(nvars: int, degree: int):
    out = []
    for combo in itertools.combinations_with_replacement(range(nvars), degree):
        alpha = [0] * nvars
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    return out


class _SymmetricPower:
    """S^m V realised as homogeneous polynomials of degree m in e_0..e_{n+1}."""

    def __init__(self, J: np.ndarray, m: int):
        self.J = J
        self.nv = J.shape[0]
        self.m = m
        self.monos = _monomials(self.nv, m)
        self.index = {a: i for i, a in enumerate(self.monos)}

    def weight(self, alpha) -> int:
        return alpha[0] - alpha[-1]

    def rep(self, M: np.ndarray) -> np.ndarray:
        d = len(self.monos)
        R = np.zeros((d, d))
        for col, alpha in enumerate(self.monos):
            for j in range(self.nv):
                if alpha[j] == 0:
                    continue
                for i in range(self.nv):
                    c = M[i, j]
                    if c == 0.0:
                        continue
                    beta = list(alpha)
                    beta[j] -= 1
                    beta[i] += 1
                    R[self.index[tuple(beta)], col] += alpha[j] * c
        return R

    def trace_map(self) -> np.ndarray:
        """Contraction with the inverse form, i.e. the J-Laplacian on polynomials."""
        if self.m < 2:
            return np.zeros((0, len(self.monos)))
        low = _monomials(self.nv, self.m - 2)
        low_index = {a: i for i, a in enumerate(low)}
        Jinv = np.linalg.inv(self.J)
        T = np.zeros((len(low), len(self.monos)))
        for col, alpha in enumerate(self.monos):
            for i in range(self.nv):
                for j in range(self.nv):
                    c = Jinv[i, j]
                    if c == 0.0:
                        continue
                    beta = list(alpha)
                    if i == j:
                        if alpha[i] < 2:
                            continue
                        coeff = alpha[i] * (alpha[i] - 1)
                    else:
                        if alpha[i] < 1 or alpha[j] < 1:
                            continue
                        coeff = alpha[i] * alpha[j]
                    beta[i] -= 1
                    beta[j] -= 1
                    T[low_index[tuple(beta)], col] += c * coeff
        return T


class _ExteriorSquare:
    """Lambda^2 V with basis e_i ^ e_j, i < j."""

    def __init__(self, J: np.ndarray):
        self.nv = J.shape[0]
        self.pairs = list(itertools.combinations(range(self.nv), 2))
        self.index = {p: k for k, p in enumerate(self.pairs)}

    def weight(self, pair) -> int:
        i, j = pair
        w = 0
        for t in (i, j):
            if t == 0:
                w += 1
            elif t == self.nv - 1:
                w -= 1
        return w

    def _add(self, R, col, i, j, c):
        if i == j or c == 0.0:
            return
        if i < j:
            R[self.index[(i, j)], col] += c
        else:
            R[self.index[(j, i)], col] -= c

    def rep(self, M: np.ndarray) -> np.ndarray:
        d = len(self.pairs)
        R = np.zeros((d, d))
        for col, (i, j) in enumerate(self.pairs):
            for k in range(self.nv):
                self._add(R, col, k, j, M[k, i])
                self._add(R, col, i, k, M[k, j])
        return R


@dataclass(frozen=True, eq=False)
class GradedModule:
    """A representation W of o(n+1,1), split into grading eigenspaces.

    ``basis`` holds the adapted basis (columns) inside the ambient tensor space;
    all action matrices are expressed in that basis, so component ``j`` is the
    coordinate slice ``slices[j]``.
    """

    algebra: GradedLieAlgebra
    spec: ModuleSpec
    basis: np.ndarray
    eigenvalues: tuple
    component_dims: tuple
    _ambient: object = field(repr=False)

    @property
    def n(self) -> int:
        return self.algebra.n

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def N(self) -> int:
        return len(self.component_dims) - 1

    @cached_property
    def offsets(self) -> tuple:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.component_dims)]))

    @cached_property
    def slices(self) -> tuple:
        o = self.offsets
        return tuple(slice(o[j], o[j + 1]) for j in range(len(self.component_dims)))

    @cached_property
    def component_index(self) -> np.ndarray:
        """Component number of every module coordinate."""
        return np.repeat(np.arange(len(self.component_dims)), self.component_dims)

    @property
    def components(self) -> list:
        """``(eigenvalue, basis)`` pairs, basis columns in module coordinates."""
        eye = np.eye(self.dim)
        return [(ev, eye[:, s]) for ev, s in zip(self.eigenvalues, self.slices)]

    def rho(self, M: np.ndarray) -> np.ndarray:
        """Action matrix of an arbitrary algebra element."""
        return self.basis.T @ self._ambient.rep(M) @ self.basis

    @cached_property
    def rho_minus1(self) -> np.ndarray:
        return np.array([self.rho(X) for X in self.algebra.basis_minus1])

    @cached_property
    def rho_1(self) -> np.ndarray:
        return np.array([self.rho(Z) for Z in self.algebra.basis_1])

    @cached_property
    def rho_0(self) -> np.ndarray:
        return np.array([self.rho(A) for A in self.algebra.basis_0])

    @cached_property
    def rho_E(self) -> np.ndarray:
        return self.rho(self.algebra.E)

    @cached_property
    def rho_rotations(self) -> np.ndarray:
        """Action of the rotations L_ab, ordered as ``algebra.rotation_pairs``."""
        return self.rho_0[1:]

    @property
    def action(self) -> dict:
        """Map ``(grade, position)`` of each algebra basis element to its action matrix."""
        out = {}
        for grade, mats in ((-1, self.rho_minus1), (0, self.rho_0), (1, self.rho_1)):
            for p, R in enumerate(mats):
                out[(grade, p)] = R
        return out

    def rotation_action(self, omega: np.ndarray) -> np.ndarray:
        """Action of a skew matrix ``omega`` (n x n, possibly batched) of o(n)."""
        pairs = self.algebra.rotation_pairs
        coeff = np.stack([omega[..., a, b] for a, b in pairs], axis=-1)
        return np.tensordot(coeff, self.rho_rotations, axes=1)

    def split(self, value: np.ndarray) -> list:
        """Graded components of a module vector (last axis)."""
        value = np.asarray(value)
        return [value[..., s] for s in self.slices]

    def check_invariants(self, atol: float = 1e-10) -> dict:
        alg = self.algebra
        hom = 0.0
        for (_, X), (_, Y) in itertools.product(alg.graded_basis, repeat=2):
            lhs = self.rho(_bracket(X, Y))
            rhs = _bracket(self.rho(X), self.rho(Y))
            hom = max(hom, np.abs(lhs - rhs).max())
        ev = np.repeat(np.array(self.eigenvalues, dtype=float), self.component_dims)
        diag = np.abs(self.rho_E - np.diag(ev)).max()
        unbroken = list(self.eigenvalues) == list(
            range(self.eigenvalues[0], self.eigenvalues[0] + len(self.eigenvalues))
        )
        grading = 0.0
        idx = self.component_index
        for grade, mats in ((-1, self.rho_minus1), (0, self.rho_0), (1, self.rho_1)):
            for R in mats:
                rows, cols = np.nonzero(np.abs(R) > atol)
                bad = idx[rows] != idx[cols] + grade
                if bad.any():
                    grading = max(grading, np.abs(R[rows[bad], cols[bad]]).max())
        if max(hom, diag, grading) > atol or not unbroken:
            raise AlgebraInvariantError(
                f"{self.spec.label} module invariants violated: hom={hom:.3g} "
                f"E-diag={diag:.3g} grading={grading:.3g} unbroken={unbroken}"
            )
        return {
            "homomorphism_residual": float(hom),
            "grading_element_residual": float(diag),
            "grading_leak": float(grading),
            "eigenvalues": list(self.eigenvalues),
            "component_dims": list(self.component_dims),
        }


def _adapted_basis(weights, constraint):
    """Group ambient basis vectors by weight; inside each group keep the kernel of ``constraint``."""
    weights = np.asarray(weights)
    dim = len(weights)
    cols, evs, dims = [], [], []
    for w in sorted(set(weights.tolist())):
        members = np.flatnonzero(weights == w)
        block = constraint[:, members] if constraint.shape[0] else np.zeros((0, len(members)))
        if not np.any(block):
            local = np.eye(len(members))
        else:
            local = _linalg.null(block)
        if local.shape[1] == 0:
            continue
        full = np.zeros((dim, local.shape[1]))
        full[members] = local
        cols.append(full)
        evs.append(int(w))
        dims.append(local.shape[1])
    return np.hstack(cols), tuple(evs), tuple(dims)


def build_module(alg: GradedLieAlgebra, spec: ModuleSpec) -> GradedModule:
    """Construct the graded module for ``spec`` over ``alg``."""
    if spec.family == "adjoint":
        if alg.n < 3:
            raise ValueError("the adjoint family requires n >= 3")
        amb = _ExteriorSquare(alg.J)
        weights = [amb.weight(p) for p in amb.pairs]
        constraint = np.zeros((0, len(weights)))
    else:
        amb = _SymmetricPower(alg.J, spec.r - 1)
        weights = [amb.weight(a) for a in amb.monos]
        constraint = amb.trace_map()
    basis, evs, dims = _adapted_basis(weights, constraint)
    return GradedModule(
        algebra=alg,
        spec=spec,
        basis=basis,
        eigenvalues=evs,
        component_dims=dims,
        _ambient=amb,
    )


def standard_module(n: int) -> GradedModule:
    """The defining representation V (scalar family, r = 2)."""
    return build_module(build_algebra(n), ModuleSpec("scalar", 2))


# ---------------------------------------------------------------------------
# W-valued forms on g_{-1}


@lru_cache(maxsize=None)
def form_indices(n: int, k: int) -> tuple:
    return tuple(itertools.combinations(range(n), k))


def _form_position(n: int, k: int) -> dict:
    return {I: p for p, I in enumerate(form_indices(n, k))}


def form_dim(module: GradedModule, k: int) -> int:
    return len(form_indices(module.n, k)) * module.dim


def homogeneity(module: GradedModule, k: int) -> np.ndarray:
    """Homogeneity ``k + j`` of each coordinate of ``Lambda^k g_1 (x) W``."""
    return np.tile(module.component_index, len(form_indices(module.n, k))) + k


@dataclass(frozen=True, eq=False)
class FormBlock:
    """A coordinate vector in ``Lambda^k g_1 (x) W``."""

    k: int
    module: GradedModule
    coords: np.ndarray

    def __post_init__(self):
        expected = form_dim(self.module, self.k)
        if np.shape(self.coords) != (expected,):
            raise ValueError(f"expected {expected} coordinates, got shape {np.shape(self.coords)}")

    def by_homogeneity(self) -> dict:
        hom = homogeneity(self.module, self.k)
        out = {}
        for h in np.unique(hom):
            part = np.where(hom == h, self.coords, 0.0)
            out[int(h)] = part
        return out

    def value(self, I) -> np.ndarray:
        """Module vector ``alpha(X_I)`` for an increasing index tuple ``I``."""
        p = _form_position(self.module.n, self.k)[tuple(I)]
        d = self.module.dim
        return self.coords[p * d : (p + 1) * d]


def _check_degree(module, k, lo, hi, what):
    if not lo <= k <= hi:
        raise ValueError(f"{what} is defined for degrees {lo}..{hi}, got {k}")


@lru_cache(maxsize=None)
def lie_differential(module: GradedModule, k: int) -> np.ndarray:
    """Matrix of ``d: Lambda^k g_1 (x) W -> Lambda^{k+1} g_1 (x) W``.

    ``(d alpha)(X_0..X_k) = sum_i (-1)^i X_i . alpha(X_0..^X_i..X_k)``.
    """
    n, d = module.n, module.dim
    _check_degree(module, k, 0, n, "the Lie algebra differential")
    src = _form_position(n, k)
    tgt = form_indices(n, k + 1)
    D = np.zeros((len(tgt) * d, len(src) * d))
    for q, Jt in enumerate(tgt):
        for p, a in enumerate(Jt):
            I = Jt[:p] + Jt[p + 1 :]
            s = src[I]
            D[q * d : (q + 1) * d, s * d : (s + 1) * d] += (-1) ** p * module.rho_minus1[a]
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def codifferential(module: GradedModule, k: int) -> np.ndarray:
    """Matrix of the Kostant codifferential ``Lambda^k -> Lambda^{k-1}``.

    ``Z_1^..^Z_k (x) w  ->  sum_i (-1)^i Z_1^..^Z_i-hat^..^Z_k (x) Z_i . w``.
    """
    n, d = module.n, module.dim
    _check_degree(module, k, 1, n + 1, "the codifferential")
    src = form_indices(n, k)
    tgt = _form_position(n, k - 1)
    D = np.zeros((len(tgt) * d, len(src) * d))
    for s, I in enumerate(src):
        for p, a in enumerate(I):
            Jt = I[:p] + I[p + 1 :]
            q = tgt[Jt]
            D[q * d : (q + 1) * d, s * d : (s + 1) * d] += (-1) ** (p + 1) * module.rho_1[a]
    D.setflags(write=False)
    return D


def _d_into(module, k):
    """Differential landing in degree k (zero map from nothing at k = 0)."""
    if k == 0:
        return np.zeros((form_dim(module, 0), 0))
    return lie_differential(module, k - 1)


def _codiff_into(module, k):
    if k == module.n:
        return np.zeros((form_dim(module, k), 0))
    return codifferential(module, k + 1)


def _d_from(module, k):
    return lie_differential(module, k)


def _codiff_from(module, k):
    if k == 0:
        return np.zeros((0, form_dim(module, 0)))
    return codifferential(module, k)


@dataclass(frozen=True)
class HodgeDecomposition:
    """Orthonormal bases of ``im d``, ``ker d ∩ ker d*`` and ``im d*`` in one degree."""

    k: int
    image_d: np.ndarray
    harmonic: np.ndarray
    image_codiff: np.ndarray

    @property
    def dims(self) -> tuple:
        return (self.image_d.shape[1], self.harmonic.shape[1], self.image_codiff.shape[1])


@lru_cache(maxsize=None)
def hodge_decompose(module: GradedModule, k: int, rtol: float = RANK_RTOL) -> HodgeDecomposition:
    """Algebraic Hodge decomposition of ``Lambda^k g_1 (x) W`` (0 <= k <= n).

    Raises :class:`AlgebraInvariantError` if the three pieces fail to be
    independent and exhaustive, or if the pairwise sums are not ``ker d`` and
    ``ker d*``.
    """
    _check_degree(module, k, 0, module.n, "the Hodge decomposition")
    total = form_dim(module, k)
    D_in, S_in = _d_into(module, k), _codiff_into(module, k)
    D_out, S_out = _d_from(module, k), _codiff_from(module, k)
    im_d = _linalg.orth(D_in, rtol)
    im_s = _linalg.orth(S_in, rtol)
    harm = _linalg.null(np.vstack([D_out, S_out]), rtol)
    dims = (im_d.shape[1], harm.shape[1], im_s.shape[1])
    together = np.hstack([im_d, harm, im_s])
    if sum(dims) != total or _linalg.rank(together, rtol) != total:
        raise AlgebraInvariantError(
            f"Hodge decomposition fails in degree {k} for {module.spec.label}, n={module.n}: "
            f"dims {dims} vs total {total}"
        )
    ker_d = total - _linalg.rank(D_out, rtol)
    ker_s = total - _linalg.rank(S_out, rtol)
    in_ker_d = np.hstack([im_d, harm])
    in_ker_s = np.hstack([harm, im_s])
    scale_d = max(1.0, np.abs(D_out).max()) if D_out.size else 1.0
    scale_s = max(1.0, np.abs(S_out).max()) if S_out.size else 1.0
    ok = (
        dims[0] + dims[1] == ker_d
        and dims[1] + dims[2] == ker_s
        and (D_out.size == 0 or np.abs(D_out @ in_ker_d).max(initial=0.0) < 1e-9 * scale_d)
        and (S_out.size == 0 or np.abs(S_out @ in_ker_s).max(initial=0.0) < 1e-9 * scale_s)
    )
    if not ok:
        raise AlgebraInvariantError(
            f"Hodge pieces do not recombine into ker d / ker d* in degree {k} "
            f"({dims}, ker d={ker_d}, ker d*={ker_s})"
        )
    return HodgeDecomposition(k, im_d, harm, im_s)


@lru_cache(maxsize=None)
def delta_star(module: GradedModule, k: int) -> np.ndarray:
    """Matrix of ``delta*: Lambda^k -> Lambda^{k-1}``.

    Zero on ``ker d*`` and inverse to ``d`` on ``im d``, landing in ``im d*``.
    Built from the splitting ``Lambda^k = im d (+) ker d*``.
    """
    _check_degree(module, k, 1, module.n, "delta*")
    upper = hodge_decompose(module, k)
    lower = hodge_decompose(module, k - 1)
    P = upper.image_d
    Q = np.hstack([upper.harmonic, upper.image_codiff])
    T = np.hstack([P, Q])
    coeff = np.linalg.solve(T, np.eye(T.shape[0]))[: P.shape[1]]
    R = lower.image_codiff
    DR = lie_differential(module, k - 1) @ R
    if _linalg.rank(DR) != R.shape[1]:
        raise AlgebraInvariantError(f"d is not injective on im d* in degree {k - 1}")
    # d maps span(R) onto span(P): express P-coordinates through DR.
    to_R = np.linalg.lstsq(DR, P, rcond=None)[0]
    out = R @ to_R @ coeff
    out[np.abs(out) < 1e-14] = 0.0
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# the maps phi_i and the Cartan product


@lru_cache(maxsize=None)
def _tensor_indices(n: int, i: int) -> tuple:
    return tuple(itertools.product(range(n), repeat=i))


@lru_cache(maxsize=None)
def phi_map(module: GradedModule, i: int) -> np.ndarray:
    """Matrix of ``phi_i: W_i -> (x)^i g_1 (x) W_0``.

    Row index is ``(a_1..a_i)`` (row-major) then the W_0 coordinate; the entry
    is the W_0 part of ``X_{a_i} ... X_{a_1} . w``.
    """
    if not 0 <= i <= module.N:
        raise ValueError(f"phi_i is defined for 0 <= i <= N={module.N}, got {i}")
    s0, si = module.slices[0], module.slices[i]
    if i == 0:
        return np.eye(module.component_dims[0])
    rows = []
    for idx in _tensor_indices(module.n, i):
        M = np.eye(module.dim)
        for a in idx:
            M = module.rho_minus1[a] @ M
        rows.append(M[s0, si])
    out = np.vstack(rows)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def symmetric_projector(n: int, i: int, inner: int = 1) -> np.ndarray:
    """Symmetrisation on ``(x)^i R^n (x) R^inner`` (acts on the tensor slots only)."""
    idx = _tensor_indices(n, i)
    pos = {t: p for p, t in enumerate(idx)}
    perms = list(itertools.permutations(range(i)))
    S = np.zeros((len(idx), len(idx)))
    for p, t in enumerate(idx):
        for perm in perms:
            S[pos[tuple(t[k] for k in perm)], p] += 1.0 / len(perms)
    return np.kron(S, np.eye(inner))


@dataclass(frozen=True)
class CartanProduct:
    """The Cartan product ``S^r g_1 (x) W_0 -> H_1`` and its kernel.

    ``matrix`` acts on ``(x)^r g_1 (x) W_0`` coordinates (it symmetrises first)
    and returns coordinates in the orthonormal basis ``harmonic`` of H_1.
    ``inclusion`` maps H_1 back into ``S^r g_1 (x) W_0``; ``matrix @ inclusion``
    is the identity, so ``inclusion @ matrix`` is idempotent.
    """

    r: int
    matrix: np.ndarray
    inclusion: np.ndarray
    kernel: np.ndarray
    harmonic: np.ndarray


@lru_cache(maxsize=None)
def cartan_product_projection(module: GradedModule) -> CartanProduct:
    """Cartan product for the module's pair (W_0, r).

    ``id (x) phi_{r-1}`` identifies ``ker d`` inside ``g_1 (x) W_{r-1}`` with
    ``S^r g_1 (x) W_0``; projecting along ``im d`` onto H_1 gives the map.
    """
    n, d = module.n, module.dim
    r = module.spec.r
    d0 = module.component_dims[0]
    sl = module.slices[r - 1]
    hodge = hodge_decompose(module, 1)
    phi = phi_map(module, r - 1)
    lift = np.kron(np.eye(n), phi)  # (n * n^{r-1} * d0, n * dim W_{r-1})
    # embed g_1 (x) W_{r-1} coordinates into full 1-form coordinates
    embed = np.zeros((n * d, n * module.component_dims[r - 1]))
    for a in range(n):
        for c, w in enumerate(range(sl.start, sl.stop)):
            embed[a * d + w, a * module.component_dims[r - 1] + c] = 1.0
    pull = embed @ np.linalg.pinv(lift)
    ker_basis = np.hstack([hodge.image_d, hodge.harmonic])
    split = np.linalg.pinv(ker_basis)[hodge.image_d.shape[1] :]
    Sym = symmetric_projector(n, r, d0)
    matrix = split @ pull @ Sym
    inclusion = lift @ np.linalg.pinv(embed) @ hodge.harmonic
    sym_basis = _linalg.orth(Sym)
    kernel = sym_basis @ _linalg.null(matrix @ sym_basis)
    if _linalg.rank(matrix) != hodge.harmonic.shape[1]:
        raise AlgebraInvariantError("Cartan product is not surjective onto H_1")
    return CartanProduct(r=r, matrix=matrix, inclusion=inclusion, kernel=kernel, harmonic=hodge.harmonic)


# ---------------------------------------------------------------------------
# dimension formulas


def _binom(a: int, b: int) -> int:
    return math.comb(a, b) if 0 <= b <= a else 0


def module_dimension(spec: ModuleSpec, n: int) -> int:
    """Dimension of the module for ``spec`` by direct count."""
    if spec.family == "adjoint":
        return (n + 2) * (n + 1) // 2
    r = spec.r
    # dim S^{r-1} R^{n+2} - dim S^{r-3} R^{n+2}
    return _binom(n + r, r - 1) - _binom(n + r - 2, r - 3)


def killing_tensor_dimension(n: int, k: int) -> int:
    """Dimension of the solution space of the conformal Killing equation on S^k_0 TM."""
    if n < 3 or k < 0:
        raise ValueError("requires n >= 3 and k >= 0")
    f = math.factorial
    num = f(n + k - 3) * f(n + k - 2) * f(n + 2 * k)
    den = f(k) * f(k + 1) * f(n - 2) * f(n) * f(n + 2 * k - 3)
    q, rem = divmod(num, den)
    if rem:
        raise ArithmeticError(f"non-integral conformal Killing dimension for n={n}, k={k}")
    return q


def quoted_scalar_dimension(n: int, r: int) -> Fraction:
    """The closed form ``(n+2r-2) (n+2r-2)! / (n! (r-1)!)`` as commonly quoted.

    It does not agree with :func:`module_dimension` (e.g. n=2, r=3 gives 1080
    instead of 9); it is evaluated only so reports can flag the disagreement.
    """
    f = math.factorial
    return Fraction((n + 2 * r - 2) * f(n + 2 * r - 2), f(n) * f(r - 1))


def dimension_formula_table(n: int, rs=(1, 2, 3)) -> list:
    rows = []
    for r in rs:
        direct = module_dimension(ModuleSpec("scalar", r), n)
        row = {"r": r, "direct_count": direct}
        if r >= 3:
            quoted = quoted_scalar_dimension(n, r)
            row["quoted_formula"] = str(quoted)
            row["quoted_formula_consistent"] = quoted == direct
        rows.append(row)
    return rows


def reference_standard_delta_star(n: int, k: int) -> np.ndarray:
    """The closed-form delta* of the standard module, written entry by entry.

    Module coordinates are ``(f, phi_1..phi_n, h)``.  Degree 1 sends
    ``(h_b, phi_bc, f_b)`` to ``(phi^c_c / n, -f_b, 0)``; degree 2 sends
    ``(h_ab, phi_abc, f_ab)`` to ``(-phi_ac^c / (n-1), f_ab / 2, 0)``.  Used as an
    independent reference for :func:`delta_star`.
    """
    d = n + 2
    F, H = 0, n + 1

    def P(b):  # coordinate of phi_b
        return 1 + b

    if k == 1:
        out = np.zeros((d, n * d))
        for b in range(n):
            out[H, b * d + P(b)] = 1.0 / n
            out[P(b), b * d + F] = -1.0
        return out
    if k == 2:
        pos = {I: p for p, I in enumerate(form_indices(n, 2))}
        out = np.zeros((n * d, len(pos) * d))

        def entry(a, b):  # (column block, sign) of the 2-form value on (X_a, X_b)
            return (pos[(a, b)], 1.0) if a < b else (pos[(b, a)], -1.0)

        for a in range(n):
            for c in range(n):
                if c == a:
                    continue
                p, s = entry(a, c)
                out[a * d + H, p * d + P(c)] += -s / (n - 1)
            for b in range(n):
                if b == a:
                    continue
                p, s = entry(a, b)
                out[a * d + P(b), p * d + F] += 0.5 * s
        return out
    raise ValueError("the closed form is displayed for degrees 1 and 2 only")
