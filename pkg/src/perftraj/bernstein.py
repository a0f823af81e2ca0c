"""Restricted Bernstein polynomial (RBP) basis.

An RBP of order ``n`` omits the two endpoint basis functions, so every
basis function (and hence every RBP expansion) vanishes at 0 and 1.  A
trajectory is represented as a sum of RBPs of orders 2..N; the
coefficients live in a flat array whose (n, v) -> slot map defined here
is the single ordering authority shared with the MCMC design matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RbpCoefficientSet",
    "num_coefficients",
    "flat_index",
    "coefficient_orders",
    "eval_basis",
    "basis_row",
    "eval_rbp",
    "basis_integral",
    "cross_integral",
    "integral_of_sum",
    "integral_of_square",
    "squared_norm_weights",
    "convexity_matrix",
    "satisfies_shape",
]


def num_coefficients(max_order: int) -> int:
    """Total coefficient count G = N(N-1)/2 for orders 2..N."""
    if max_order < 2:
        raise ValueError(f"max_order must be >= 2, got {max_order}")
    return max_order * (max_order - 1) // 2


def flat_index(n: int, v: int, max_order: int) -> int:
    """Flat slot of coefficient (n, v) in the order
    (2,1), (3,1), (3,2), ..., (N,1), ..., (N,N-1)."""
    _check_index(n, v)
    if n > max_order:
        raise ValueError(f"order n={n} exceeds max_order={max_order}")
    return (n - 2) * (n - 1) // 2 + (v - 1)


def coefficient_orders(max_order: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (orders, indices) of length G giving (n, v) per flat slot."""
    G = num_coefficients(max_order)
    ns = np.empty(G, dtype=np.int64)
    vs = np.empty(G, dtype=np.int64)
    k = 0
    for n in range(2, max_order + 1):
        for v in range(1, n):
            ns[k] = n
            vs[k] = v
            k += 1
    return ns, vs


def _check_index(n: int, v: int) -> None:
    if n < 2:
        raise ValueError(f"order n must be >= 2, got {n}")
    if not 1 <= v <= n - 1:
        raise ValueError(f"index v must be in [1, {n - 1}] for order {n}, got {v}")


def _log_binom(n: int, v: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(v + 1) - math.lgamma(n - v + 1)


def _binom(n: int, v: int) -> float:
    # Binomials are integers; rounding the exponentiated log value keeps
    # them exact in double precision for the orders used here.
    return float(round(math.exp(_log_binom(n, v))))


def eval_basis(n: int, v: int, z):
    """Basis function C(n,v) z^v (1-z)^(n-v); exactly 0 at z in {0, 1}."""
    _check_index(n, v)
    z = np.asarray(z, dtype=np.float64)
    if np.any((z < 0.0) | (z > 1.0)):
        raise ValueError("location z must lie in [0, 1]")
    coef = _binom(n, v)
    out = coef * z**v * (1.0 - z) ** (n - v)
    return float(out) if out.ndim == 0 else out


def basis_row(max_order: int, z: float) -> np.ndarray:
    """All G basis values at z, in flat-slot order."""
    G = num_coefficients(max_order)
    out = np.empty(G, dtype=np.float64)
    k = 0
    for n in range(2, max_order + 1):
        for v in range(1, n):
            out[k] = _binom(n, v) * z**v * (1.0 - z) ** (n - v)
            k += 1
    return out


@dataclass
class RbpCoefficientSet:
    """Coefficients of a sum of RBPs of orders 2..max_order, stored flat.

    ``coeffs[flat_index(n, v, max_order)]`` is the coefficient of basis
    (n, v).  Exactly G = N(N-1)/2 finite entries.
    """

    max_order: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        G = num_coefficients(self.max_order)
        if self.coeffs.shape != (G,):
            raise ValueError(
                f"expected {G} coefficients for max_order={self.max_order}, "
                f"got shape {self.coeffs.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must all be finite")

    @classmethod
    def zeros(cls, max_order: int) -> "RbpCoefficientSet":
        return cls(max_order, np.zeros(num_coefficients(max_order)))

    def block(self, n: int) -> np.ndarray:
        """View of the order-n coefficient block (beta_{n,1..n-1})."""
        lo = flat_index(n, 1, self.max_order)
        return self.coeffs[lo : lo + n - 1]


def eval_rbp(coeffs: RbpCoefficientSet, z):
    """Evaluate the coefficient set's RBP sum at z in [0, 1]."""
    z = np.asarray(z, dtype=np.float64)
    if np.any((z < 0.0) | (z > 1.0)):
        raise ValueError("location z must lie in [0, 1]")
    scalar = z.ndim == 0
    zv = np.atleast_1d(z)
    out = np.zeros_like(zv)
    for j, zj in enumerate(zv):
        out[j] = float(coeffs.coeffs @ basis_row(coeffs.max_order, zj))
    return float(out[0]) if scalar else out


def basis_integral(order: int) -> float:
    """Integral of any order-n basis function over [0, 1]: 1/(n+1)."""
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    return 1.0 / (order + 1)


def cross_integral(n1: int, v1: int, n2: int, v2: int) -> float:
    """Integral over [0,1] of the product of two basis functions:
    C(n1,v1) C(n2,v2) (v1+v2)! (n1+n2-v1-v2)! / (n1+n2+1)!."""
    _check_index(n1, v1)
    _check_index(n2, v2)
    log_val = (
        _log_binom(n1, v1)
        + _log_binom(n2, v2)
        + math.lgamma(v1 + v2 + 1)
        + math.lgamma(n1 + n2 - v1 - v2 + 1)
        - math.lgamma(n1 + n2 + 2)
    )
    return math.exp(log_val)


def integral_of_sum(coeffs: RbpCoefficientSet) -> float:
    """Integral of the RBP sum: sum_n (1/(n+1)) sum_v beta_{n,v}."""
    total = 0.0
    for n in range(2, coeffs.max_order + 1):
        total += basis_integral(n) * float(np.sum(coeffs.block(n)))
    return total


def integral_of_square(
    coeffs_a: RbpCoefficientSet, coeffs_b: RbpCoefficientSet
) -> float:
    """Bilinear integral of the product of two RBP sums sharing max_order."""
    if coeffs_a.max_order != coeffs_b.max_order:
        raise ValueError(
            f"max_order mismatch: {coeffs_a.max_order} vs {coeffs_b.max_order}"
        )
    B = _cross_matrix(coeffs_a.max_order)
    return float(coeffs_a.coeffs @ B @ coeffs_b.coeffs)


_cross_matrix_cache: dict[int, np.ndarray] = {}


def _cross_matrix(max_order: int) -> np.ndarray:
    """(G, G) matrix of cross integrals between all flat slots."""
    cached = _cross_matrix_cache.get(max_order)
    if cached is not None:
        return cached
    ns, vs = coefficient_orders(max_order)
    G = len(ns)
    B = np.empty((G, G))
    for a in range(G):
        for b in range(a, G):
            B[a, b] = B[b, a] = cross_integral(ns[a], vs[a], ns[b], vs[b])
    _cross_matrix_cache[max_order] = B
    return B


def squared_norm_weights(max_order: int) -> np.ndarray:
    """Diagonal cross integrals B_{n,n,v,v} per flat slot (prior-expected
    squared-integral weights)."""
    ns, vs = coefficient_orders(max_order)
    return np.array([cross_integral(n, v, n, v) for n, v in zip(ns, vs)])


def convexity_matrix(order: int) -> np.ndarray:
    """(n-1) x (n-1) second-difference matrix D_n: -2 on the diagonal, 1 on
    the off-diagonals.  D_n beta_n >= 0 elementwise iff the order-n RBP is
    convex; <= 0 iff concave."""
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    m = order - 1
    D = np.zeros((m, m))
    np.fill_diagonal(D, -2.0)
    idx = np.arange(m - 1)
    D[idx, idx + 1] = 1.0
    D[idx + 1, idx] = 1.0
    return D


def satisfies_shape(coeffs: RbpCoefficientSet, direction: int) -> bool:
    """True iff every order block lies in the shape cone.

    direction < 0 (timed events, improvement = smaller): convex, so
    D_n beta_n >= 0 for all n.  direction > 0: concave, D_n beta_n <= 0.
    Tolerance is exactly 0; the cone boundary is allowed.
    """
    if direction == 0:
        raise ValueError("direction must be nonzero")
    for n in range(2, coeffs.max_order + 1):
        curv = convexity_matrix(n) @ coeffs.block(n)
        if direction < 0:
            if np.any(curv < 0.0):
                return False
        else:
            if np.any(curv > 0.0):
                return False
    return True
