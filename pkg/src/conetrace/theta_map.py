"""Inductive tail maps attaching lower-order corrections to singular functions.

For a kernel element psi = x^{i sigma0} (log polynomial) of the tip model,
the step at depth theta produces the unique log-power function at exponent
sigma0 - i theta whose cut-off Mellin transform cancels the singular part of

    P0(sigma)^{-1} sum_{k=1}^{theta} Pk(sigma) s_c[(omega e_{theta-k})^](sigma + i k)

at sigma = sigma0 - i theta, where Pk is the conormal symbol of the k-th
Taylor component in the convention that differentiation acts before the
multiplication by x^k (as a polynomial this is the coefficient-table symbol
evaluated at sigma + i k).  Summing the steps gives the correspondence
between quotient-domain representatives for the full operator and for its
tip model; with x-independent coefficients every step vanishes and the
correspondence is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def _horner(coeffs, z: complex) -> complex:
    acc = 0.0 + 0.0j
    for c in reversed(coeffs):
        acc = acc * z + c
    return acc

from .errors import ResonanceAmbiguity, ResonanceOverflow, VerificationFailed
from .mellin_laurent import (
    laurent,
    laurent_add,
    laurent_inverse_of_polynomial,
    laurent_mul,
    log_coeffs_from_singular,
    mellin_cutoff_logpoly,
    shift_argument,
    shift_poly,
    singular_part,
)
from .operator_core import (
    ConeOperator,
    LogPowerFunction,
    apply_symbolic,
    model_operator,
)

DEFAULT_LOG_CAP = 16


@dataclass(frozen=True)
class ThetaTail:
    """A singular function plus its attached lower-order tail.

    steps holds (theta, e_theta(psi)); total = psi + sum of steps.
    """

    source: LogPowerFunction
    steps: tuple[tuple[int, LogPowerFunction], ...]
    total: LogPowerFunction

    def to_dict(self) -> dict:
        def lp(f: LogPowerFunction):
            return [
                {"sigma0": [s.real, s.imag], "coeffs": [[v.real, v.imag] for v in c]}
                for s, c in f.terms
            ]
        return {
            "source": lp(self.source),
            "steps": [{"theta": t, "term": lp(e)} for t, e in self.steps],
            "total": lp(self.total),
        }


def recursion_step(table: Callable[[int], np.ndarray], center: complex,
                   history: Sequence[np.ndarray], log_cap: int = DEFAULT_LOG_CAP,
                   active: Sequence[int] | None = None) -> np.ndarray:
    """One inhomogeneous step of the Mellin recursion, shared with the
    Frobenius engine.

    table(k) returns the ascending sigma-coefficients of the depth-k symbol
    (zeros beyond the stored depth); history[j] is the log-coefficient vector
    of the already-known term at exponent center + i (len(history) - j)...
    precisely, at downward distance j from the seed, so the new term sits at
    distance nu = len(history).  Returns the log-coefficient vector at
    ``center`` (possibly empty when the forcing vanishes).
    """
    nu = len(history)
    ks = [k for k in range(1, nu + 1) if active is None or k in active]
    p0 = table(0)
    # scalar fast path: log-free history and nonresonant center reduce the
    # Mellin cancellation to the classical one-term recursion
    if all(g is None or len(g) <= 1 for g in history):
        p0c = complex(_horner(p0, center))
        scale = float(np.max(np.abs(p0))) * max(1.0, abs(center)) ** (len(p0) - 1)
        if abs(p0c) > 1e-8 * max(scale, 1.0):
            acc = 0.0 + 0.0j
            for k in ks:
                g = history[nu - k]
                if g is None or len(g) == 0 or g[0] == 0:
                    continue
                tab = table(k)
                acc += _horner(tab, center + 1j * k) * complex(g[0])
            if acc == 0:
                return np.zeros(0, dtype=complex)
            return np.array([-acc / p0c], dtype=complex)
    forcing = laurent(center, 0, [0.0], exact=True)
    for k in ks:
        g = history[nu - k]
        if g is None or not np.any(g):
            continue
        tab = table(k)
        if not np.any(tab):
            continue
        src_center = center + 1j * k
        transform = mellin_cutoff_logpoly(src_center, g)
        shifted = shift_argument(singular_part(transform), k)
        # table symbol evaluated at sigma + i k, as a series in (sigma - center)
        poly = laurent(center, 0, shift_poly(tab, src_center), exact=True)
        forcing = laurent_add(forcing, laurent_mul(poly, shifted))
    sing_forcing = singular_part(forcing)
    if sing_forcing.is_zero():
        return np.zeros(0, dtype=complex)
    q = sing_forcing.pole_order
    p0inv = laurent_inverse_of_polynomial(table(0), center, hi=q + 2)
    total = laurent_mul(p0inv, forcing)
    sing = singular_part(total)
    if sing.pole_order > log_cap:
        raise ResonanceOverflow(
            f"log depth {sing.pole_order} exceeds cap {log_cap} at center {center}"
        )
    coeffs = -log_coeffs_from_singular(sing)
    # consistency: the produced function must reproduce exactly this singular part
    check = mellin_cutoff_logpoly(center, coeffs)
    mismatch = laurent_add(check, sing)
    if not singular_part(mismatch).is_zero():
        resid = max(abs(v) for v in singular_part(mismatch).coeffs)
        scale = max(abs(v) for v in sing.coeffs)
        if resid > 1e-9 * max(scale, 1.0):
            raise ResonanceAmbiguity(
                f"singular-part cancellation failed at {center} (residual {resid:.2e})"
            )
    return coeffs


def _table_fn(A: ConeOperator) -> Callable[[int], np.ndarray]:
    zeros = np.zeros(A.m + 1, dtype=complex)
    def table(k: int) -> np.ndarray:
        if 0 <= k <= A.depth:
            return np.asarray(A.coeff[:, k])
        return zeros
    return table


def _single_exponent_coeffs(f: LogPowerFunction, expected: complex) -> np.ndarray:
    if f.is_zero():
        return np.zeros(0, dtype=complex)
    s = f.single_exponent()
    if abs(s - expected) > 1e-9 * (1.0 + abs(expected)):
        raise ValueError(f"term at exponent {s}, expected {expected}")
    return np.asarray(f.terms[0][1], dtype=complex)


def e_step(A: ConeOperator, sigma0: complex, theta: int, psi: LogPowerFunction,
           prior: Sequence[LogPowerFunction], log_cap: int = DEFAULT_LOG_CAP,
           ) -> LogPowerFunction:
    """The tail step e_{sigma0, theta}(psi) given all lower steps.

    ``prior`` lists e_{sigma0, 0}(psi), ..., e_{sigma0, theta-1}(psi); the
    step at theta = 0 is the identity and is never computed here.
    """
    if theta < 1:
        raise ValueError("theta must be >= 1 (theta = 0 is the identity step)")
    if len(prior) != theta:
        raise ValueError(f"need {theta} prior steps, got {len(prior)}")
    center = complex(sigma0) - 1j * theta
    history = [
        _single_exponent_coeffs(prior[j], complex(sigma0) - 1j * j)
        for j in range(theta)
    ]
    coeffs = recursion_step(_table_fn(A), center, history, log_cap)
    return LogPowerFunction.from_term(center, coeffs)


def _verify_kernel_element(A: ConeOperator, psi: LogPowerFunction) -> None:
    residual = apply_symbolic(model_operator(A), psi, trunc=0)
    size = max((max(abs(v) for v in c) for _, c in residual.terms), default=0.0)
    scale = float(np.max(np.abs(A.coeff[:, 0]))) or 1.0
    psi_scale = max((max(abs(v) for v in c) for _, c in psi.terms), default=1.0)
    if size > 1e-8 * scale * psi_scale * (1 + abs(psi.terms[0][0])) ** A.m:
        raise VerificationFailed("psi is not annihilated by the tip model")


def tail_span(A: ConeOperator, sigma0: complex, ell: int) -> int:
    """Largest step index in J_{sigma0, ell} = {k >= 1 : Im sigma0 - k >= -m/2 - ell}."""
    bound = complex(sigma0).imag + A.m / 2.0 + ell
    return max(0, int(np.floor(bound + 1e-12)))


def theta_inverse(A: ConeOperator, psi: LogPowerFunction, ell: int = 0,
                  log_cap: int = DEFAULT_LOG_CAP) -> ThetaTail:
    """psi plus its tail steps over J_{sigma0, ell}.

    With ell = 0 this reproduces the quotient-domain representative of psi
    (steps below the reference weight are invisible modulo the minimal
    domain and are omitted).
    """
    if psi.is_zero():
        return ThetaTail(psi, (), psi)
    sigma0 = psi.single_exponent()
    _verify_kernel_element(A, psi)
    kmax = tail_span(A, sigma0, ell)
    prior = [psi]
    steps = []
    total = psi
    for theta in range(1, kmax + 1):
        e = e_step(A, sigma0, theta, psi, prior, log_cap)
        prior.append(e)
        if not e.is_zero():
            steps.append((theta, e))
            total = total + e
    return ThetaTail(psi, tuple(steps), total)


@dataclass(frozen=True)
class ThetaStructure:
    """Basis correspondence between the two quotient domains.

    In the canonical singular basis the map is the identity matrix; the
    inverse direction attaches the recorded tails to each basis function.
    """

    basis_keys: tuple[tuple[complex, int], ...]
    tails: tuple[ThetaTail, ...]
    matrix: np.ndarray

    def to_dict(self) -> dict:
        return {
            "basis": [
                {"sigma0": [s.real, s.imag], "log_power": k} for s, k in self.basis_keys
            ],
            "tails": [t.to_dict() for t in self.tails],
            "dimension": len(self.basis_keys),
        }


def theta_matrix(A: ConeOperator, ell: int = 0,
                 log_cap: int = DEFAULT_LOG_CAP) -> ThetaStructure:
    """Identity correspondence plus tails for every canonical basis function."""
    from .indicial import strip_sigma  # local import to avoid cycle at import time

    keys: list[tuple[complex, int]] = []
    tails: list[ThetaTail] = []
    for root in strip_sigma(A):
        for k in range(root.multiplicity):
            keys.append((root.sigma0, k))
            psi = LogPowerFunction.monomial(root.sigma0, k)
            tails.append(theta_inverse(A, psi, ell=ell, log_cap=log_cap))
    d = len(keys)
    return ThetaStructure(tuple(keys), tuple(tails), np.eye(d, dtype=complex))


def tail_residual(A: ConeOperator, tail: ThetaTail, upto: int) -> dict[int, float]:
    """Max |coefficient| of A(tail.total) at the exponents killed by each step.

    The recursion guarantees the coefficient of x^{i(sigma0 - i theta) - m}
    log^k vanishes for 1 <= theta <= (number of computed steps); this check
    is the step-by-step residual used in tests.
    """
    sigma0 = tail.source.single_exponent()
    A_deep = A.with_depth(max(A.depth, upto + A.m))
    image = apply_symbolic(A_deep, tail.total)
    out = {}
    for theta in range(1, upto + 1):
        target = sigma0 - 1j * theta + 1j * A.m
        coeffs = image.coeffs_at(target)
        out[theta] = max((abs(v) for v in coeffs), default=0.0)
    return out
