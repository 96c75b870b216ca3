"""Cone operators on (0, 1] and their exact action on log-power functions.

An operator of order m is stored through the truncated Taylor table of its
coefficients,

    A = x^{-m} sum_{k=0}^{m} a_k(x) (xD_x)^k,      a_k(x) = sum_nu a[k][nu] x^nu,

with D_x = -i d/dx, so that (xD_x) x^{i sigma} = sigma x^{i sigma}.  All
symbolic computations below are exact in the coefficients: the coefficient
functions are genuine polynomials, not approximations of smooth functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (
    BadShape,
    DegenerateLeadingCoefficient,
    OutOfRange,
    TruncationExceeded,
)

# Tolerance used when merging exponents produced by root finding.
EXPONENT_MERGE_TOL = 1e-9
# Relative threshold below which a trailing log coefficient is trimmed.
TRIM_REL_TOL = 1e-14


# ---------------------------------------------------------------------------
# log-power functions
# ---------------------------------------------------------------------------

def _trim_coeffs(coeffs: Sequence[complex]) -> tuple[complex, ...]:
    c = [complex(v) for v in coeffs]
    scale = max((abs(v) for v in c), default=0.0)
    if scale == 0.0:
        return ()
    while c and abs(c[-1]) <= TRIM_REL_TOL * scale:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class LogPowerFunction:
    """Finite sum  sum_{sigma0} x^{i sigma0} sum_k c_{sigma0,k} log^k x.

    ``terms`` maps each exponent parameter sigma0 to the coefficient vector
    (c_0, ..., c_K) of the log powers.  Exponents are pairwise distinct and
    trailing coefficients are nonzero (canonical trimming).
    """

    terms: tuple[tuple[complex, tuple[complex, ...]], ...] = ()

    @staticmethod
    def zero() -> "LogPowerFunction":
        return LogPowerFunction(())

    @staticmethod
    def from_term(sigma0: complex, coeffs: Sequence[complex]) -> "LogPowerFunction":
        trimmed = _trim_coeffs(coeffs)
        if not trimmed:
            return LogPowerFunction(())
        return LogPowerFunction(((complex(sigma0), trimmed),))

    @staticmethod
    def monomial(sigma0: complex, log_power: int = 0) -> "LogPowerFunction":
        """x^{i sigma0} log^{log_power} x."""
        return LogPowerFunction.from_term(sigma0, (0,) * log_power + (1,))

    # -- structure --------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def exponents(self) -> list[complex]:
        return [s for s, _ in self.terms]

    def coeffs_at(self, sigma0: complex, tol: float = EXPONENT_MERGE_TOL) -> tuple[complex, ...]:
        for s, c in self.terms:
            if abs(s - sigma0) <= tol * (1.0 + abs(sigma0)):
                return c
        return ()

    def max_log_power(self) -> int:
        return max((len(c) - 1 for _, c in self.terms), default=-1)

    def single_exponent(self) -> complex:
        """The unique sigma0 of a one-exponent function (raises otherwise)."""
        if len(self.terms) != 1:
            raise ValueError("function is not supported on a single exponent")
        return self.terms[0][0]

    # -- algebra ----------------------------------------------------------

    @staticmethod
    def from_pairs(pairs: Iterable[tuple[complex, Sequence[complex]]]) -> "LogPowerFunction":
        """Collect (sigma0, coeffs) pairs, merging nearby exponents."""
        groups: list[tuple[complex, list[complex]]] = []
        for sigma0, coeffs in pairs:
            sigma0 = complex(sigma0)
            for i, (s, acc) in enumerate(groups):
                if abs(s - sigma0) <= EXPONENT_MERGE_TOL * (1.0 + abs(s)):
                    if len(acc) < len(coeffs):
                        acc.extend([0.0] * (len(coeffs) - len(acc)))
                    for k, v in enumerate(coeffs):
                        acc[k] += complex(v)
                    break
            else:
                groups.append((sigma0, [complex(v) for v in coeffs]))
        out = []
        for s, acc in groups:
            trimmed = _trim_coeffs(acc)
            if trimmed:
                out.append((s, trimmed))
        out.sort(key=lambda t: (t[0].imag, t[0].real))
        return LogPowerFunction(tuple(out))

    def __add__(self, other: "LogPowerFunction") -> "LogPowerFunction":
        return LogPowerFunction.from_pairs(list(self.terms) + list(other.terms))

    def __sub__(self, other: "LogPowerFunction") -> "LogPowerFunction":
        return self + (-1.0) * other

    def __rmul__(self, scalar: complex) -> "LogPowerFunction":
        scalar = complex(scalar)
        if scalar == 0:
            return LogPowerFunction.zero()
        return LogPowerFunction(
            tuple((s, tuple(scalar * v for v in c)) for s, c in self.terms)
        )

    def shift_exponent(self, delta_x_power: float) -> "LogPowerFunction":
        """Multiply by x^{delta}: sigma0 -> sigma0 - i*delta."""
        return LogPowerFunction(
            tuple((s - 1j * delta_x_power, c) for s, c in self.terms)
        )

    def conjugate(self) -> "LogPowerFunction":
        """Complex conjugate as a function of real x > 0."""
        return LogPowerFunction.from_pairs(
            (-np.conj(s), [np.conj(v) for v in c]) for s, c in self.terms
        )

    def multiply(self, other: "LogPowerFunction") -> "LogPowerFunction":
        """Pointwise product (still a log-power function)."""
        pairs = []
        for s1, c1 in self.terms:
            for s2, c2 in other.terms:
                conv = np.convolve(np.asarray(c1), np.asarray(c2))
                pairs.append((s1 + s2, conv.tolist()))
        return LogPowerFunction.from_pairs(pairs)

    def derivative(self) -> "LogPowerFunction":
        """d/dx; each term x^p log^k -> p x^{p-1} log^k + k x^{p-1} log^{k-1}."""
        pairs = []
        for s, c in self.terms:
            p = 1j * s  # x-power
            out = [0.0] * len(c)
            for k, v in enumerate(c):
                out[k] += p * v
                if k >= 1:
                    out[k - 1] += k * v
            # x^{p-1}: sigma0 -> sigma0 + i
            pairs.append((s + 1j, out))
        return LogPowerFunction.from_pairs(pairs)

    def evaluate(self, x):
        """Evaluate at x > 0 (scalar or ndarray), complex result."""
        x = np.asarray(x, dtype=float)
        lx = np.log(x)
        total = np.zeros(x.shape, dtype=complex)
        for s, c in self.terms:
            p = 1j * s
            logpoly = np.zeros(x.shape, dtype=complex)
            for v in reversed(c):
                logpoly = logpoly * lx + v
            total = total + np.exp(p * np.log(x)) * logpoly
        return total if total.shape else complex(total)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrozenOperator:
    """x-independent part  sum_k b_k (xD_x)^k  of order m."""

    m: int
    coeff0: tuple[complex, ...]

    def __post_init__(self):
        if len(self.coeff0) != self.m + 1:
            raise BadShape("coeff0 must have length m + 1")

    def symbol(self) -> Polynomial:
        return Polynomial(np.asarray(self.coeff0, dtype=complex))

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.coeff0)


@dataclass(frozen=True, eq=False)
class ConeOperator:
    """x^{-m} sum_k a_k(x) (xD_x)^k with polynomial coefficients.

    coeff[k, nu] is the coefficient of x^nu in a_k(x); the table has shape
    (m + 1, depth + 1).  The reference Hilbert space is x^{-m/2} L^2_b, i.e.
    L^2((0,1], x^{m-1} dx); ``weight`` records the fixed power -m/2.
    """

    m: int
    depth: int
    coeff: np.ndarray
    right_bc: object = "dirichlet"
    weight: Fraction = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.weight is None:
            object.__setattr__(self, "weight", Fraction(-self.m, 2))
        arr = np.asarray(self.coeff, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "coeff", arr)

    def __eq__(self, other):
        if not isinstance(other, ConeOperator):
            return NotImplemented
        return (
            self.m == other.m
            and self.coeff.shape == other.coeff.shape
            and np.array_equal(self.coeff, other.coeff)
            and _bc_equal(self.right_bc, other.right_bc)
        )

    def leading_coefficient(self) -> Polynomial:
        return Polynomial(self.coeff[self.m])

    def with_depth(self, depth: int) -> "ConeOperator":
        """Zero-pad the table (same polynomial operator, deeper bookkeeping)."""
        if depth <= self.depth:
            return self
        table = np.zeros((self.m + 1, depth + 1), dtype=complex)
        table[:, : self.depth + 1] = self.coeff
        return ConeOperator(self.m, depth, table, self.right_bc)


def _bc_equal(a, b) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    return np.array_equal(np.asarray(a), np.asarray(b))


def build_operator(m: int, coeff, right_bc: object = "dirichlet") -> ConeOperator:
    """Validate a coefficient table and assemble the operator.

    ``coeff`` is indexed [k][nu]; each entry may be a number or an
    (re, im) pair.  The table is zero-padded so depth >= m, which keeps
    every tail step up to theta = m computable.
    """
    if m < 1:
        raise BadShape("operator order m must be >= 1")
    rows = list(coeff)
    if len(rows) != m + 1:
        raise BadShape(f"coefficient table must have m + 1 = {m + 1} rows, got {len(rows)}")
    parsed = []
    for row in rows:
        try:
            entries = [_as_complex(v) for v in row]
        except TypeError as exc:
            raise BadShape(f"coefficient row is not a sequence: {row!r}") from exc
        parsed.append(entries)
    width = max((len(row) for row in parsed), default=0)
    if width == 0:
        raise BadShape("empty coefficient table")
    depth = max(width - 1, m)
    table = np.zeros((m + 1, depth + 1), dtype=complex)
    for k, row in enumerate(parsed):  # shorter rows are zero-padded
        table[k, : len(row)] = row

    if table[m, 0] == 0:
        raise DegenerateLeadingCoefficient("a_m(0) = 0: operator not c-elliptic at the tip")
    grid = np.linspace(0.0, 1.0, 201)
    lead = np.polynomial.polynomial.polyval(grid, table[m])
    if np.any(np.abs(lead) < 1e-13 * max(1.0, np.max(np.abs(table[m])))):
        raise DegenerateLeadingCoefficient("a_m vanishes at a grid point of [0, 1]")

    _validate_bc(m, right_bc)
    return ConeOperator(m=m, depth=depth, coeff=table, right_bc=right_bc)


def _as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise BadShape("coefficient entries must be numbers or [re, im] pairs")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def _validate_bc(m: int, right_bc) -> None:
    if isinstance(right_bc, str):
        if right_bc != "dirichlet":
            raise BadShape(f"unknown boundary condition preset {right_bc!r}")
        if m % 2 != 0:
            raise BadShape("default Dirichlet condition needs even order m")
        return
    B = np.asarray(right_bc, dtype=complex)
    if B.ndim != 2 or B.shape[1] != m or not 1 <= B.shape[0] <= m - 1:
        raise BadShape("boundary matrix must be q x m with 1 <= q <= m - 1")
    if np.linalg.matrix_rank(B) < B.shape[0]:
        raise BadShape("boundary functionals are linearly dependent")


def bc_matrix(A: ConeOperator) -> np.ndarray:
    """Boundary-condition rows acting on the jet (u, u', ..., u^{(m-1)}) at x=1."""
    if isinstance(A.right_bc, str):
        q = A.m // 2
        B = np.zeros((q, A.m), dtype=complex)
        B[np.arange(q), np.arange(q)] = 1.0
        return B
    return np.asarray(A.right_bc, dtype=complex)


def taylor_component(A: ConeOperator, nu: int) -> FrozenOperator:
    """The operator P_nu of the Taylor expansion A ~ x^{-m} sum P_nu x^nu."""
    if not 0 <= nu <= A.depth:
        raise OutOfRange(f"Taylor index {nu} outside 0..{A.depth}")
    return FrozenOperator(A.m, tuple(A.coeff[:, nu]))


def conormal_symbol(A: ConeOperator, nu: int) -> Polynomial:
    """Polynomial sum_k a[k][nu] sigma^k (indicial family at depth nu)."""
    if not 0 <= nu <= A.depth:
        raise OutOfRange(f"Taylor index {nu} outside 0..{A.depth}")
    return Polynomial(A.coeff[:, nu])


def model_operator(A: ConeOperator) -> ConeOperator:
    """Coefficients frozen at x = 0 (the tip model of A)."""
    table = np.zeros_like(np.asarray(A.coeff))
    table[:, 0] = A.coeff[:, 0]
    return ConeOperator(A.m, A.depth, table, A.right_bc)


def has_x_independent_coefficients(A: ConeOperator) -> bool:
    return bool(np.all(A.coeff[:, 1:] == 0))


# ---------------------------------------------------------------------------
# symbolic action
# ---------------------------------------------------------------------------

def _apply_symbol_to_logvector(poly_coeffs: np.ndarray, sigma0: complex,
                               coeffs: Sequence[complex]) -> np.ndarray:
    """Apply P(xD_x) to x^{i sigma0} * (log polynomial with given coeffs).

    Uses (xD_x)(x^{i s} log^j) = s x^{i s} log^j - i j x^{i s} log^{j-1}:
    on coefficient vectors, xD_x acts as c_j -> sigma0 c_j - i (j+1) c_{j+1}.
    Evaluation is Horner in that operator.
    """
    c = np.asarray(coeffs, dtype=complex)
    out = np.zeros_like(c)
    for a in poly_coeffs[::-1]:
        shifted = np.zeros_like(out)
        shifted[:-1] = -1j * np.arange(1, len(out)) * out[1:]
        out = sigma0 * out + shifted + a * c
    return out


def apply_symbolic(P, f: LogPowerFunction, trunc: int | None = None) -> LogPowerFunction:
    """Exact action of a FrozenOperator or ConeOperator on a log-power function.

    For a ConeOperator the result is x^{-m} sum_{nu <= trunc} x^nu P_nu f,
    exact because the coefficients are polynomials; trunc defaults to the
    stored depth and may not exceed it.
    """
    if isinstance(P, FrozenOperator):
        pairs = []
        poly = np.asarray(P.coeff0, dtype=complex)
        for s, c in f.terms:
            pairs.append((s, _apply_symbol_to_logvector(poly, s, c).tolist()))
        return LogPowerFunction.from_pairs(pairs)

    if not isinstance(P, ConeOperator):
        raise TypeError("P must be a ConeOperator or FrozenOperator")
    if trunc is None:
        trunc = P.depth
    if trunc > P.depth:
        raise TruncationExceeded(
            f"requested truncation {trunc} exceeds stored depth {P.depth}; "
            "zero-pad with with_depth() first"
        )
    pairs = []
    for nu in range(trunc + 1):
        poly = P.coeff[:, nu]
        if not np.any(poly):
            continue
        for s, c in f.terms:
            out = _apply_symbol_to_logvector(poly, s, c)
            # x^{nu - m} shift: sigma -> sigma - i(nu - m)
            pairs.append((s - 1j * (nu - P.m), out.tolist()))
    return LogPowerFunction.from_pairs(pairs)


# ---------------------------------------------------------------------------
# parameter ellipticity
# ---------------------------------------------------------------------------

def _angle_dist(a: float, b: float) -> float:
    d = (a - b) % (2 * np.pi)
    return min(d, 2 * np.pi - d)


def check_parameter_ellipticity(A: ConeOperator, sector: tuple[float, float]) -> bool:
    """True iff the symbol rays {a_m(x) xi^m t : t > 0} avoid the closed sector.

    sector = (theta0, halfwidth), angles in radians.  The scalar condition is
    a_m(x) xi^m - lambda != 0 for all unit xi and lambda in the sector.
    """
    theta0, halfwidth = float(sector[0]), float(sector[1])
    grid = np.linspace(0.0, 1.0, 101)
    lead = np.polynomial.polynomial.polyval(grid, A.coeff[A.m])
    if np.any(np.abs(lead) < 1e-13 * max(1.0, np.max(np.abs(A.coeff[A.m])))):
        return False
    signs = (1.0,) if A.m % 2 == 0 else (1.0, -1.0)
    for s in signs:
        angles = np.angle(s ** A.m * lead) if s < 0 else np.angle(lead)
        for ang in np.atleast_1d(angles):
            if _angle_dist(float(ang), theta0) <= halfwidth + 1e-12:
                return False
    return True


# ---------------------------------------------------------------------------
# closed-form integrals used by quadratic-form probes and tip corrections
# ---------------------------------------------------------------------------

def integrate_power_log(p: complex, k: int, upper: float) -> complex:
    """int_0^upper x^p log^k x dx, valid for Re p > -1.

    By k-fold differentiation of int x^p = upper^{p+1}/(p+1) with respect
    to p:  int_0^u x^p log^k x dx = u^{p+1} sum_{j=0}^k (-1)^{k-j}
    (k!/j!) log^j(u) / (p+1)^{k-j+1}.
    """
    if np.real(p) <= -1:
        raise ValueError("integral diverges for Re p <= -1")
    lu = np.log(upper)
    total = 0.0 + 0.0j
    fact = 1.0
    for j in range(k, -1, -1):
        # term j: (-1)^{k-j} k!/j! log^j(u) / (p+1)^{k-j+1}
        total += ((-1.0) ** (k - j)) * fact * lu ** j / (p + 1.0) ** (k - j + 1)
        fact *= j  # k!/j! built up as j decreases
    return upper ** (p + 1.0) * total


def inner_product(f: LogPowerFunction, g: LogPowerFunction, m: int) -> complex:
    """<f, g> = int_0^1 f(x) conj(g(x)) x^{m-1} dx, exact term-by-term."""
    prod = f.multiply(g.conjugate())
    total = 0.0 + 0.0j
    for s, c in prod.terms:
        p = 1j * s + (m - 1)
        for k, v in enumerate(c):
            total += v * integrate_power_log(p, k, 1.0)
    return total
