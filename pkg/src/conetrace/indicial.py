"""Boundary spectrum, the critical strip, and wedge singular functions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import RootFindingFailed, VerificationFailed
from .operator_core import (
    ConeOperator,
    LogPowerFunction,
    apply_symbolic,
    conormal_symbol,
    model_operator,
)

CLUSTER_TOL = 1e-10
STRIP_WARN_TOL = 1e-6
STRIP_ABORT_TOL = 1e-8


class BoundaryProximityWarning(UserWarning):
    """An indicial root lies close to the strip boundary Im(sigma) = +-m/2."""


@dataclass(frozen=True)
class IndicialRoot:
    sigma0: complex
    multiplicity: int


@dataclass(frozen=True)
class SingularBasis:
    sigma0: complex
    basis: tuple[LogPowerFunction, ...]


def _newton_refine(coeffs: np.ndarray, z: complex, steps: int = 4) -> complex:
    dcoeffs = coeffs[1:] * np.arange(1, len(coeffs))
    for _ in range(steps):
        p = np.polynomial.polynomial.polyval(z, coeffs)
        dp = np.polynomial.polynomial.polyval(z, dcoeffs)
        if abs(dp) < 1e-14 * max(1.0, abs(p)):
            break  # multiple root; cluster averaging handles it
        z = z - p / dp
    return z


def boundary_spectrum(A: ConeOperator) -> list[IndicialRoot]:
    """All roots of the indicial polynomial with multiplicities.

    Roots closer than the clustering tolerance are merged into a multiple
    root; the multiplicity drives the log-power structure downstream, so it
    is decided discretely here rather than left to the caller.
    """
    poly = conormal_symbol(A, 0)
    coeffs = np.asarray(poly.coef, dtype=complex)
    deg = len(coeffs) - 1
    while deg > 0 and coeffs[deg] == 0:
        deg -= 1
    coeffs = coeffs[: deg + 1]
    if deg == 0:
        return []
    raw = np.polynomial.polynomial.polyroots(coeffs)
    scale = max(1.0, float(np.max(np.abs(raw))) if len(raw) else 1.0)
    refined = [_newton_refine(coeffs, z) for z in raw]

    clusters: list[list[complex]] = []
    for z in sorted(refined, key=lambda w: (w.real, w.imag)):
        for cl in clusters:
            if abs(z - np.mean(cl)) <= 1e3 * CLUSTER_TOL * scale + CLUSTER_TOL:
                cl.append(z)
                break
        else:
            clusters.append([z])

    roots = []
    coeff_scale = float(np.max(np.abs(coeffs)))
    for cl in clusters:
        center = complex(np.mean(cl))
        mu = len(cl)
        residual = abs(np.polynomial.polynomial.polyval(center, coeffs))
        # a multiple root evaluated at the cluster mean only vanishes to
        # the power mu of the cluster radius
        tol = coeff_scale * max(1e-8, (1e-7 * scale) ** mu)
        if residual > tol * max(1.0, scale ** deg):
            raise RootFindingFailed(
                f"residual {residual:.3e} at candidate root {center} exceeds tolerance"
            )
        roots.append(IndicialRoot(center, mu))
    roots.sort(key=lambda r: (r.sigma0.imag, r.sigma0.real))
    return roots


def strip_sigma(A: ConeOperator) -> list[IndicialRoot]:
    """Roots strictly inside the open strip -m/2 < Im(sigma) < m/2.

    The strip is open, so a root resolved onto a boundary line (within the
    exact-tie tolerance) is excluded, with a BoundaryProximityWarning; a root
    strictly inside but within the warn tolerance of a line is kept, also
    with a warning, since its membership rests on the root residual.
    """
    half = A.m / 2.0
    out = []
    for r in boundary_spectrum(A):
        dist = half - abs(r.sigma0.imag)
        if abs(dist) <= STRIP_ABORT_TOL:
            warnings.warn(
                f"root {r.sigma0} resolved onto Im(sigma) = +-{half}: excluded "
                "(the strip is open)",
                BoundaryProximityWarning,
            )
            continue
        if abs(dist) < STRIP_WARN_TOL:
            warnings.warn(
                f"root {r.sigma0} within {STRIP_WARN_TOL} of the strip boundary",
                BoundaryProximityWarning,
            )
        if dist > 0:
            out.append(r)
    return out


def wedge_singular_basis(A: ConeOperator, root: IndicialRoot) -> SingularBasis:
    """Basis {x^{i sigma0} log^k x : k < multiplicity} of ker of the tip model.

    Scalar case only: the indicial polynomial annihilates exactly the log
    powers below the root multiplicity.  Each element is verified by exact
    symbolic application of the model operator.
    """
    spec = boundary_spectrum(A)
    match = [r for r in spec if abs(r.sigma0 - root.sigma0) <= 1e-8 * (1 + abs(root.sigma0))]
    if not match or match[0].multiplicity < root.multiplicity:
        raise VerificationFailed(f"{root.sigma0} is not a boundary-spectrum point of this operator")
    model = model_operator(A)
    basis = []
    scale = float(np.max(np.abs(A.coeff[:, 0]))) * max(1.0, abs(root.sigma0)) ** A.m
    for k in range(root.multiplicity):
        psi = LogPowerFunction.monomial(root.sigma0, k)
        residual = apply_symbolic(model, psi, trunc=0)
        res_size = max((max(abs(v) for v in c) for _, c in residual.terms), default=0.0)
        if res_size > 1e-8 * max(scale, 1.0):
            raise VerificationFailed(
                f"model operator does not annihilate x^(i{root.sigma0}) log^{k} x "
                f"(residual {res_size:.3e})"
            )
        basis.append(psi)
    return SingularBasis(root.sigma0, tuple(basis))


def max_domain_dimension(A: ConeOperator) -> int:
    """d = dim(D_max / D_min) = total strip multiplicity."""
    return sum(r.multiplicity for r in strip_sigma(A))
