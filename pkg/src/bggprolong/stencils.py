"""Central finite-difference stencils on regular grids."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from .errors import DomainError

DEFAULT_ORDER = 4


@lru_cache(maxsize=None)
def central_weights(deriv: int, order: int = DEFAULT_ORDER) -> tuple:
    """Weights of the central stencil for the ``deriv``-th derivative.

    Returned as ``(offsets, weights)`` for unit spacing, accurate to
    ``O(h^order)``; solved exactly in rational arithmetic.
    """
    if deriv == 0:
        return (0,), (1.0,)
    half = (deriv + order - 1) // 2
    offsets = list(range(-half, half + 1))
    m = len(offsets)
    # Vandermonde system sum_j w_j o_j^k / k! = [k == deriv]
    A = [[Fraction(o) ** k for o in offsets] for k in range(m)]
    b = [Fraction(0)] * m
    fact = 1
    for i in range(2, deriv + 1):
        fact *= i
    b[deriv] = Fraction(fact)
    # Gaussian elimination over the rationals
    M = [row[:] + [rhs] for row, rhs in zip(A, b)]
    for col in range(m):
        piv = next(r for r in range(col, m) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        for r in range(m):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [x - f * y for x, y in zip(M[r], M[col])]
    w = [M[i][m] / M[i][i] for i in range(m)]
    return tuple(offsets), tuple(float(x) for x in w)


def stencil_halfwidth(max_deriv: int, order: int = DEFAULT_ORDER) -> int:
    return max(len(central_weights(k, order)[0]) // 2 for k in range(max_deriv + 1))


@dataclass(frozen=True)
class Grid:
    """Regular cube grid ``center +- half_width`` with ``points`` nodes per axis."""

    center: tuple
    half_width: float
    points: int

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points - 1)

    @cached_property
    def axes(self) -> list:
        return [np.linspace(c - self.half_width, c + self.half_width, self.points) for c in self.center]

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior(self, margin: int) -> tuple:
        if 2 * margin >= self.points:
            raise DomainError(f"grid of {self.points} points has no interior at stencil margin {margin}")
        return (slice(margin, self.points - margin),) * self.n


def grid_partial(values: np.ndarray, spacing: float, alpha, margin: int, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Apply the product stencil for ``d^alpha`` on the interior ``margin`` nodes.

    ``values`` has the grid shape on its leading ``len(alpha)`` axes.
    """
    n = len(alpha)
    npts = values.shape[0]
    if stencil_halfwidth(max(alpha), order) > margin:
        raise DomainError("stencil margin too small for the requested derivative")
    out = np.zeros(tuple(npts - 2 * margin for _ in range(n)) + values.shape[n:])
    stencils = [central_weights(a, order) for a in alpha]
    for combo in itertools.product(*[list(zip(*s)) for s in stencils]):
        w = 1.0
        index = []
        for (off, wt) in combo:
            w *= wt
            index.append(slice(margin + off, npts - margin + off))
        if w != 0.0:
            out += w * values[tuple(index)]
    return out / spacing ** sum(alpha)


def point_partials(func, x: np.ndarray, h: float, max_order: int, order: int = DEFAULT_ORDER) -> dict:
    """Partial derivatives up to ``max_order`` of a vectorised callable at points ``x``.

    Returns ``{alpha: array}``; uses product central stencils of step ``h``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    alphas = [a for k in range(max_order + 1) for a in _multi_indices(n, k)]
    cache = {}

    def sample(offset):
        if offset not in cache:
            cache[offset] = func(x + h * np.array(offset, dtype=float))
        return cache[offset]

    out = {}
    for alpha in alphas:
        stencils = [central_weights(a, order) for a in alpha]
        acc = 0.0
        for combo in itertools.product(*[list(zip(*s)) for s in stencils]):
            w = np.prod([c[1] for c in combo])
            if w != 0.0:
                acc = acc + w * sample(tuple(c[0] for c in combo))
        out[alpha] = acc / h ** sum(alpha)
    return out


@lru_cache(maxsize=None)
def _multi_indices(n: int, k: int) -> tuple:
    out = []
    for combo in itertools.combinations_with_replacement(range(n), k):
        a = [0] * n
        for i in combo:
            a[i] += 1
        out.append(tuple(a))
    return tuple(out)


multi_indices = _multi_indices
