"""Truncated Laurent arithmetic and Mellin transforms of cut-off log powers.

With the cut-off fixed to the indicator of [0, 1], the Mellin transform

    (omega x^{i s0} log^k x)^(sigma) = int_0^1 x^{-i sigma} x^{i s0} log^k x dx/x
                                     = k! (-1)^k i^{k+1} (sigma - s0)^{-(k+1)}

is an exact rational function: a pure singular Laurent polynomial at s0.
The recursion for domain tails consumes only such singular parts, which are
independent of the cut-off choice, so all arithmetic here is exact data plus
explicitly truncated inverses of polynomials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import CenterMismatch, ZeroPolynomial

CENTER_TOL = 1e-9


@dataclass(frozen=True)
class LaurentExpansion:
    """Finite window of a Laurent series at ``center``.

    Coefficients cover degrees lo .. lo+len(coeffs)-1.  ``exact`` marks a
    finite Laurent *polynomial*: every degree outside the window is exactly
    zero, so products with exact series lose no information.
    """

    center: complex
    lo: int
    coeffs: tuple[complex, ...]
    exact: bool = False

    @property
    def hi(self) -> int:
        return self.lo + len(self.coeffs) - 1

    @property
    def pole_order(self) -> int:
        return max(0, -self.lo)

    def coefficient(self, degree: int) -> complex:
        if self.lo <= degree <= self.hi:
            return self.coeffs[degree - self.lo]
        return 0.0 + 0.0j

    def evaluate(self, sigma: complex) -> complex:
        t = complex(sigma) - self.center
        return sum(c * t ** (self.lo + j) for j, c in enumerate(self.coeffs))

    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coeffs) or not self.coeffs


def laurent(center: complex, lo: int, coeffs, exact: bool = False) -> LaurentExpansion:
    """Build a canonical expansion: leading (and, if exact, trailing) zeros trimmed."""
    c = [complex(v) for v in coeffs]
    scale = max((abs(v) for v in c), default=0.0)
    tol = 1e-14 * scale
    while c and abs(c[0]) <= tol:
        c.pop(0)
        lo += 1
    if exact:
        while c and abs(c[-1]) <= tol:
            c.pop()
    if not c:
        return LaurentExpansion(complex(center), 0, (0.0 + 0.0j,), exact)
    return LaurentExpansion(complex(center), lo, tuple(c), exact)


def _check_centers(a: LaurentExpansion, b: LaurentExpansion) -> None:
    if abs(a.center - b.center) > CENTER_TOL * (1.0 + abs(a.center)):
        raise CenterMismatch(f"centers {a.center} and {b.center} differ")


def laurent_add(a: LaurentExpansion, b: LaurentExpansion) -> LaurentExpansion:
    _check_centers(a, b)
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    lo = min(a.lo, b.lo)
    if a.exact and b.exact:
        hi = max(a.hi, b.hi)
        exact = True
    elif a.exact:
        hi = b.hi
        exact = False
    elif b.exact:
        hi = a.hi
        exact = False
    else:
        hi = min(a.hi, b.hi)
        exact = False
    out = np.zeros(hi - lo + 1, dtype=complex)
    for src in (a, b):
        j0 = src.lo - lo
        for j, v in enumerate(src.coeffs):
            if 0 <= j0 + j < len(out):
                out[j0 + j] += v
    return laurent(a.center, lo, out, exact)


def laurent_mul(a: LaurentExpansion, b: LaurentExpansion) -> LaurentExpansion:
    _check_centers(a, b)
    if a.is_zero() or b.is_zero():
        return laurent(a.center, 0, [0.0], a.exact and b.exact)
    conv = np.convolve(np.asarray(a.coeffs), np.asarray(b.coeffs))
    lo = a.lo + b.lo
    if a.exact and b.exact:
        return laurent(a.center, lo, conv, True)
    # reliable degrees of a truncated product
    hi_a = math.inf if a.exact else a.hi
    hi_b = math.inf if b.exact else b.hi
    hi = min(hi_a + b.lo, hi_b + a.lo)
    keep = int(hi - lo) + 1
    return laurent(a.center, lo, conv[:keep], False)


def singular_part(a: LaurentExpansion) -> LaurentExpansion:
    """Degrees < 0 only (exact: they are fully known whenever hi >= -1)."""
    if a.lo >= 0:
        return laurent(a.center, 0, [0.0], True)
    upto = min(a.hi, -1)
    return laurent(a.center, a.lo, a.coeffs[: upto - a.lo + 1], True)


def shift_argument(a: LaurentExpansion, k: int) -> LaurentExpansion:
    """Series of sigma' = sigma + i k: same coefficients at center - i k."""
    return LaurentExpansion(a.center - 1j * k, a.lo, a.coeffs, a.exact)


def shift_poly(coeffs, center: complex) -> np.ndarray:
    """Taylor coefficients of p(center + t) from ascending coeffs of p(sigma).

    Horner-style synthetic division; exact in floating arithmetic.
    """
    work = list(np.asarray(coeffs, dtype=complex))
    n = len(work)
    out = np.zeros(n, dtype=complex)
    for j in range(n):
        acc = 0.0 + 0.0j
        for c in reversed(work):
            acc = acc * center + c
        out[j] = acc
        # divide synthetic: work <- dp/dsigma / (j+1) via repeated Horner
        new = [work[i] * i for i in range(1, len(work))]
        work = [v / (j + 1) for v in new]
        if not work:
            break
    return out


def poly_at_center(coeffs, center: complex, exact: bool = True) -> LaurentExpansion:
    """A polynomial re-expanded at ``center`` as an exact Laurent polynomial."""
    return laurent(center, 0, shift_poly(coeffs, center), exact)


def laurent_inverse_of_polynomial(P, center: complex, hi: int,
                                  mult_tol: float = 1e-10) -> LaurentExpansion:
    """Truncated expansion of 1/P(sigma) at ``center`` through degree ``hi``.

    The pole order equals the root multiplicity of ``center`` in P, decided
    by the same clustering tolerance used for indicial roots.
    """
    coeffs = P.coef if isinstance(P, Polynomial) else np.asarray(P, dtype=complex)
    if not np.any(coeffs):
        raise ZeroPolynomial("cannot invert the zero polynomial")
    q = shift_poly(coeffs, center)
    scale = np.max(np.abs(q))
    mu = 0
    while mu < len(q) and abs(q[mu]) <= mult_tol * scale:
        mu += 1
    if mu >= len(q):
        raise ZeroPolynomial("polynomial vanishes identically at this center")
    unit = q[mu:]
    n = hi + mu + 1  # number of series coefficients needed
    inv = np.zeros(max(n, 1), dtype=complex)
    inv[0] = 1.0 / unit[0]
    for j in range(1, len(inv)):
        acc = 0.0 + 0.0j
        for i in range(1, min(j, len(unit) - 1) + 1):
            acc += unit[i] * inv[j - i]
        inv[j] = -acc / unit[0]
    return laurent(center, -mu, inv, False)


def mellin_cutoff(sigma0: complex, k: int) -> LaurentExpansion:
    """Singular part of the Mellin transform of 1_{[0,1]} x^{i sigma0} log^k x.

    Exactly k! (-1)^k i^{k+1} (sigma - sigma0)^{-(k+1)}; the indicator cut-off
    makes the transform this pure pole with no holomorphic remainder.
    """
    if k < 0:
        raise ValueError("log power k must be >= 0")
    val = math.factorial(k) * (-1.0) ** k * (1j) ** (k + 1)
    coeffs = [0.0] * (k + 1)
    coeffs[0] = val
    return laurent(complex(sigma0), -(k + 1), coeffs, exact=True)


def mellin_cutoff_logpoly(sigma0: complex, coeffs) -> LaurentExpansion:
    """Mellin transform of 1_{[0,1]} x^{i sigma0} sum_k c_k log^k x (exact)."""
    out = laurent(complex(sigma0), 0, [0.0], True)
    for k, c in enumerate(coeffs):
        if c == 0:
            continue
        term = mellin_cutoff(sigma0, k)
        out = laurent_add(out, laurent(term.center, term.lo,
                                       [c * v for v in term.coeffs], True))
    return out


def log_coeffs_from_singular(sing: LaurentExpansion) -> np.ndarray:
    """Invert the transform: coefficients c_k of the log-power function whose
    cut-off Mellin transform equals ``sing`` (pure singular part).

    c_k = s_{k+1} / (k! (-1)^k i^{k+1}) with s_j the degree -j coefficient.
    """
    p = sing.pole_order
    out = np.zeros(p, dtype=complex)
    for k in range(p):
        s = sing.coefficient(-(k + 1))
        out[k] = s / (math.factorial(k) * (-1.0) ** k * (1j) ** (k + 1))
    return out
