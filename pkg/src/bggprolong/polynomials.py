"""Dense multivariate polynomials over a fixed monomial ordering.

Monomials of degree <= d in n variables are ordered by total degree, then
by exponent tuple in descending lexicographic order, e.g. for n = 2, d = 2::

    1, x1, x2, x1^2, x1 x2, x2^2

Coefficient arrays in configuration files use exactly this order.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import sympy as sp


@lru_cache(maxsize=None)
def monomial_exponents(n: int, d: int) -> np.ndarray:
    out = []
    for total in range(d + 1):
        block = []

        def rec(prefix, left, slots):
            if slots == 1:
                block.append(prefix + (left,))
                return
            for e in range(left, -1, -1):
                rec(prefix + (e,), left - e, slots - 1)

        rec((), total, n)
        out.extend(block)
    arr = np.array(out, dtype=int).reshape(-1, n)
    arr.setflags(write=False)
    return arr


def space_dim(n: int, d: int) -> int:
    return math.comb(n + d, d)


def degree_from_length(n: int, length: int) -> int:
    d = 0
    while space_dim(n, d) < length:
        d += 1
    if space_dim(n, d) != length:
        raise ValueError(f"{length} coefficients do not fill a complete degree range in {n} variables")
    return d


class Polynomial:
    """Polynomial with float coefficients stored against explicit exponents."""

    __slots__ = ("exponents", "coeffs")

    def __init__(self, exponents, coeffs):
        self.exponents = np.asarray(exponents, dtype=int)
        self.coeffs = np.asarray(coeffs, dtype=float)

    @classmethod
    def from_dense(cls, n: int, coeffs) -> "Polynomial":
        coeffs = np.asarray(coeffs, dtype=float)
        d = degree_from_length(n, len(coeffs))
        return cls(monomial_exponents(n, d), coeffs)

    @classmethod
    def monomial(cls, alpha, scale: float = 1.0) -> "Polynomial":
        return cls(np.array([alpha], dtype=int), [scale])

    @property
    def n(self) -> int:
        return self.exponents.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        powers = np.prod(x[..., None, :] ** self.exponents, axis=-1)
        return powers @ self.coeffs

    def deriv(self, axis: int, times: int = 1) -> "Polynomial":
        e = self.exponents.copy()
        c = self.coeffs.copy()
        for _ in range(times):
            c = c * e[:, axis]
            e[:, axis] = np.maximum(e[:, axis] - 1, 0)
        keep = c != 0
        if not keep.any():
            return Polynomial(np.zeros((1, self.n), dtype=int), [0.0])
        return Polynomial(e[keep], c[keep])

    def partial(self, alpha) -> "Polynomial":
        p = self
        for axis, times in enumerate(alpha):
            if times:
                p = p.deriv(axis, times)
        return p

    def to_sympy(self, xs) -> sp.Expr:
        expr = sp.Integer(0)
        for alpha, c in zip(self.exponents, self.coeffs):
            if c == 0:
                continue
            term = sp.Float(c) if c != int(c) else sp.Integer(int(c))
            for xi, e in zip(xs, alpha):
                term *= xi ** int(e)
            expr += term
        return expr

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(
            np.vstack([self.exponents, other.exponents]), np.concatenate([self.coeffs, other.coeffs])
        )

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self.exponents, self.coeffs * s)
