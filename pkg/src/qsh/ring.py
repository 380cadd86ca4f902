"""Arithmetic in Z_q[x]/(x^n + 1), the polynomial ring behind the lattice KEM.

Multiplication is schoolbook convolution followed by the negacyclic fold
(x^n = -1); there is no number-theoretic transform.  The default ring is
n = 256, q = 3329, but both parameters stay overridable so small test rings
such as Z_17[x]/(x^4 + 1) run the identical code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N = 256
Q = 3329


def add_arrays(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    return np.mod(a + b, q)


def sub_arrays(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    return np.mod(a - b, q)


def negacyclic_mul(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """Schoolbook product reduced by x^n = -1, coefficients mod q."""
    n = len(a)
    full = np.convolve(a, b)
    out = full[:n].copy()
    if n > 1:
        out[: n - 1] -= full[n:]
    return np.mod(out, q)


@dataclass(frozen=True)
class RingPoly:
    """A ring element: canonical coefficients in [0, q-1], ascending degree."""

    coeffs: tuple[int, ...]
    q: int = Q

    def __post_init__(self) -> None:
        if self.q < 2:
            raise ValueError("ring modulus must be >= 2")
        if not self.coeffs:
            raise ValueError("empty coefficient vector")
        for c in self.coeffs:
            if not 0 <= c < self.q:
                raise ValueError(f"coefficient {c} outside [0, {self.q - 1}]")

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def as_array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=np.int64)


def _check_compatible(a: RingPoly, b: RingPoly) -> None:
    if a.n != b.n or a.q != b.q:
        raise ValueError(
            f"ring mismatch: ({a.n}, {a.q}) vs ({b.n}, {b.q})"
        )


def poly_add(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_compatible(a, b)
    out = add_arrays(a.as_array(), b.as_array(), a.q)
    return RingPoly(tuple(int(c) for c in out), a.q)


def poly_mul(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_compatible(a, b)
    out = negacyclic_mul(a.as_array(), b.as_array(), a.q)
    return RingPoly(tuple(int(c) for c in out), a.q)
