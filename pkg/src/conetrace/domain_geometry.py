"""Domains as subspaces of the singular-function space, and the scaling action.

The canonical basis of E_max orders the strip singular functions by exponent
(ascending imaginary part of sigma0, then real part, then log power).  The
scaling group rho -> kappa_rho, (kappa_rho f)(x) = rho^{m/2} f(rho x), acts
block-triangularly on this basis; a domain is stationary exactly when its
coordinate subspace is invariant under the infinitesimal generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import (
    ContinuumOfInvariantSubspaces,
    NotSemibounded,
    NotSymmetric,
    RankIndeterminate,
    SelectionAmbiguous,
)
from .indicial import IndicialRoot, strip_sigma
from .operator_core import (
    ConeOperator,
    LogPowerFunction,
    apply_symbolic,
    inner_product,
)

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class DomainSpec:
    """Subspace W of E_max by a coefficient matrix (columns span D / D_min)."""

    basis_order: tuple[tuple[complex, int], ...]
    W: np.ndarray
    label: str = ""

    def __post_init__(self):
        W = np.asarray(self.W, dtype=complex)
        d = len(self.basis_order)
        if W.size == 0:
            W = W.reshape(d, 0)
        if W.ndim != 2 or W.shape[0] != d:
            raise ValueError(f"W must be {d} x d'' for this operator")
        if W.shape[1] > 0 and np.linalg.matrix_rank(W) < W.shape[1]:
            raise ValueError("columns of W are linearly dependent")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def codim_basis(self) -> int:
        return self.W.shape[1]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "basis": [
                {"sigma0": [s.real, s.imag], "log_power": k} for s, k in self.basis_order
            ],
            "columns": [
                [[v.real, v.imag] for v in self.W[:, j]] for j in range(self.W.shape[1])
            ],
        }


@dataclass(frozen=True)
class KappaData:
    T: np.ndarray
    kappa: Callable[[float], np.ndarray]


def canonical_basis(A: ConeOperator) -> tuple[tuple[complex, int], ...]:
    keys = []
    for root in strip_sigma(A):
        for k in range(root.multiplicity):
            keys.append((root.sigma0, k))
    return tuple(keys)


def basis_functions(A: ConeOperator) -> list[LogPowerFunction]:
    return [LogPowerFunction.monomial(s, k) for s, k in canonical_basis(A)]


def kappa_apply(f: LogPowerFunction, rho: float, m: int) -> LogPowerFunction:
    """(kappa_rho f)(x) = rho^{m/2} f(rho x) on log-power functions."""
    lr = np.log(rho)
    pairs = []
    for s, c in f.terms:
        weight = rho ** (m / 2.0 + 1j * s)
        out = [0.0 + 0.0j] * len(c)
        for k, v in enumerate(c):
            for j in range(k + 1):
                out[j] += weight * v * comb(k, j) * lr ** (k - j)
        pairs.append((s, out))
    return LogPowerFunction.from_pairs(pairs)


def kappa_matrix(A: ConeOperator, rho: float) -> np.ndarray:
    """Matrix of the scaling action on the canonical basis.

    kappa_rho(x^{i s0} log^k x) = rho^{m/2 + i s0} sum_{j <= k} C(k, j)
    (log rho)^{k-j} x^{i s0} log^j x.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    keys = canonical_basis(A)
    d = len(keys)
    M = np.zeros((d, d), dtype=complex)
    lr = np.log(rho)
    index = {key: i for i, key in enumerate(keys)}
    for col, (s, k) in enumerate(keys):
        weight = rho ** (A.m / 2.0 + 1j * s)
        for j in range(k + 1):
            M[index[(s, j)], col] = weight * comb(k, j) * lr ** (k - j)
    return M


def generator(A: ConeOperator) -> KappaData:
    """Infinitesimal generator T = d/d rho kappa_rho at rho = 1.

    Diagonal entries m/2 + i sigma0 per root block; the log shift contributes
    the nilpotent superdiagonal with entries k.
    """
    keys = canonical_basis(A)
    d = len(keys)
    T = np.zeros((d, d), dtype=complex)
    index = {key: i for i, key in enumerate(keys)}
    for col, (s, k) in enumerate(keys):
        T[col, col] = A.m / 2.0 + 1j * s
        if k >= 1:
            T[index[(s, k - 1)], col] = k
    return KappaData(T, lambda rho: kappa_matrix(A, rho))


def _numerical_rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    smax = sv[0] if len(sv) else 0.0
    if smax == 0.0:
        return 0
    cut = tol * smax
    straddle = np.sum((sv > cut / 10) & (sv < cut * 10) & (sv != smax))
    if straddle:
        raise RankIndeterminate(
            f"singular values {sv.tolist()} straddle tolerance {cut:.3e}"
        )
    return int(np.sum(sv > cut))


def is_stationary(A: ConeOperator, W: DomainSpec, tol: float = DEFAULT_RANK_TOL) -> bool:
    """T-invariance of span(W), cross-checked against the group action.

    rank([W | T W]) = rank(W) decides invariance under the one-parameter
    group; sampling kappa_rho for rho in {2, e, 10} guards the rank test.
    """
    Wm = np.asarray(W.W)
    dpp = Wm.shape[1]
    d = Wm.shape[0]
    if dpp == 0 or dpp == d:
        return True
    kd = generator(A)
    verdict = _numerical_rank(np.hstack([Wm, kd.T @ Wm]), tol) == dpp
    for rho in (2.0, np.e, 10.0):
        k_verdict = _numerical_rank(np.hstack([Wm, kappa_matrix(A, rho) @ Wm]), tol) == dpp
        if k_verdict != verdict:
            raise RankIndeterminate(
                f"generator test ({verdict}) disagrees with kappa_{rho} test"
            )
    return verdict


def _invariant_selections(blocks: list[tuple[complex, int]], dpp: int) -> list[tuple[int, ...]]:
    """All ways to draw dpp dimensions from chain subspaces of the blocks.

    blocks: (generator eigenvalue, block size) per root.  A single block has
    exactly one invariant subspace per dimension (the lowest log powers);
    distinct eigenvalues make every invariant subspace a direct sum of those.
    Coinciding eigenvalues across blocks admit continuous families as soon
    as a group is partially filled.
    """
    groups: list[list[int]] = []
    eigs: list[complex] = []
    for ev, size in blocks:
        for i, known in enumerate(eigs):
            if abs(ev - known) < 1e-9 * (1.0 + abs(known)):
                groups[i].append(size)
                break
        else:
            eigs.append(ev)
            groups.append([size])

    selections: list[tuple[int, ...]] = [()]
    for group in groups:
        gdim = sum(group)
        extended = []
        for sel in selections:
            used = sum(sel)
            for q in range(0, min(gdim, dpp - used) + 1):
                if len(group) > 1 and 0 < q < gdim:
                    raise ContinuumOfInvariantSubspaces(
                        "equal scaling weights across distinct exponents make "
                        "the invariant family infinite"
                    )
                if len(group) == 1:
                    extended.append(sel + (q,))
                else:
                    # q is 0 or the full group: split as all-or-nothing per block
                    extended.append(sel + tuple(0 if q == 0 else s for s in group))
        selections = extended
    return [s for s in selections if sum(s) == dpp]


def stationary_domains(A: ConeOperator, dpp: int) -> list[DomainSpec]:
    """All T-invariant dpp-dimensional subspaces, when finitely many."""
    keys = canonical_basis(A)
    d = len(keys)
    if not 0 < dpp < d:
        raise ValueError(f"need 0 < d'' < d = {d}")
    roots = strip_sigma(A)
    blocks = [(A.m / 2.0 + 1j * r.sigma0, r.multiplicity) for r in roots]
    out = []
    for sel in _invariant_selections(blocks, dpp):
        cols = []
        for root, q in zip(roots, sel):
            for k in range(q):  # lowest log powers span the invariant chain
                e = np.zeros(d, dtype=complex)
                e[keys.index((root.sigma0, k))] = 1.0
                cols.append(e)
        W = np.column_stack(cols) if cols else np.zeros((d, 0), dtype=complex)
        label = "span{" + ", ".join(
            _monomial_label(root.sigma0, k)
            for root, q in zip(roots, sel) for k in range(q)
        ) + "}"
        spec = DomainSpec(keys, W, label)
        assert is_stationary(A, spec)
        out.append(spec)
    return out


def _monomial_label(sigma0: complex, k: int) -> str:
    a = 1j * sigma0
    if abs(a.imag) < 1e-12:
        power = f"x^{a.real:g}" if abs(a.real) > 1e-12 else "1"
    else:
        power = f"x^({a.real:g}{a.imag:+g}i)"
    if k == 0:
        return power
    suffix = "log(x)" if k == 1 else f"log^{k}(x)"
    return suffix if power == "1" else f"{power} {suffix}"


def domain_max(A: ConeOperator) -> DomainSpec:
    keys = canonical_basis(A)
    return DomainSpec(keys, np.eye(len(keys), dtype=complex), "max")


def domain_min(A: ConeOperator) -> DomainSpec:
    keys = canonical_basis(A)
    return DomainSpec(keys, np.zeros((len(keys), 0), dtype=complex), "min")


def domain_from_columns(A: ConeOperator, columns, label: str = "custom") -> DomainSpec:
    keys = canonical_basis(A)
    W = np.asarray(columns, dtype=complex)
    if W.ndim == 1:
        W = W.reshape(-1, 1)
    return DomainSpec(keys, W, label)


# ---------------------------------------------------------------------------
# formal symmetry, semiboundedness, Friedrichs selection
# ---------------------------------------------------------------------------

def is_formally_symmetric(A: ConeOperator, tol: float = 1e-10) -> bool:
    """Symbolic adjoint identity in x^{-m/2} L^2_b.

    Conjugating by the weight, symmetry holds iff for every depth nu

        sum_k a[k][nu] (sigma + i m/2)^k
            == sum_k conj(a[k][nu]) (sigma + i m/2 - i nu)^k

    as polynomials in sigma.
    """
    m = A.m
    scale = float(np.max(np.abs(A.coeff))) or 1.0
    for nu in range(A.depth + 1):
        col = A.coeff[:, nu]
        left = _shifted_symbol(col, 1j * m / 2.0)
        right = _shifted_symbol(np.conj(col), 1j * m / 2.0 - 1j * nu)
        n = max(len(left), len(right))
        l = np.zeros(n, dtype=complex); l[: len(left)] = left
        r = np.zeros(n, dtype=complex); r[: len(right)] = right
        if np.max(np.abs(l - r)) > tol * scale:
            return False
    return True


def _shifted_symbol(col: np.ndarray, shift: complex) -> np.ndarray:
    """Ascending coefficients of sum_k col[k] (sigma + shift)^k."""
    n = len(col)
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        if col[k] == 0:
            continue
        # (sigma + shift)^k
        for j in range(k + 1):
            out[j] += col[k] * comb(k, j) * shift ** (k - j)
    return out


def _rayleigh_probe(A: ConeOperator) -> float:
    """Minimum Rayleigh quotient over a fixed family of tip-adapted test functions.

    Test functions x^s (1-x)^2 p(x) are log-power functions, so the quotient
    <A u, u> / <u, u> in L^2(x^{m-1} dx) is computed in closed form.
    """
    m = A.m
    best = np.inf
    factors = [
        (1.0,), (1.0, -1.0), (1.0, -3.0, 1.0), (1.0, 2.0), (1.0, 0.0, -2.0),
    ]
    powers = [m / 2 + 0.25, m / 2 + 0.6, m / 2 + 1.0, m + 0.5, m + 2.0]
    for s in powers:
        for poly in factors:
            # u = x^s (1 - x)^(ceil(m/2)+1) * poly(x)
            u = LogPowerFunction.from_term(-1j * s, (1.0,))
            edge = LogPowerFunction.from_pairs(
                [(0.0, (1.0,)), (-1j, (-1.0,))]
            )
            for _ in range(m // 2 + 1):
                u = u.multiply(edge)
            u = u.multiply(LogPowerFunction.from_pairs(
                [(-1j * k, (c,)) for k, c in enumerate(poly)]
            ))
            Au = apply_symbolic(A, u)
            num = inner_product(Au, u, m)
            den = inner_product(u, u, m)
            q = (num / den).real
            best = min(best, q)
    return best


def friedrichs_domain(A: ConeOperator, semibound_floor: float = -1e8) -> DomainSpec:
    """The distinguished selfadjoint extension of a semibounded symmetric operator.

    Selection rule (validated against the classical half-line oracles and the
    stationarity postcondition): keep every strip basis function with real
    x-exponent a = Re(i sigma0) > 0, and at a = 0 the lower half of the log
    chain (the no-log representative for a double root).  Critical-line
    blocks with odd or oversized multiplicity are refused as ambiguous.
    """
    if not is_formally_symmetric(A):
        raise NotSymmetric("operator is not formally symmetric in x^{-m/2} L^2_b")
    q = _rayleigh_probe(A)
    if q < semibound_floor:
        raise NotSemibounded(f"Rayleigh probe reached {q:.3e}")
    keys = canonical_basis(A)
    d = len(keys)
    cols = []
    labels = []
    for root in strip_sigma(A):
        a = (1j * root.sigma0).real
        if a > 1e-9:
            take = root.multiplicity
        elif abs(a) <= 1e-9:
            if root.multiplicity > 2 or root.multiplicity % 2 == 1:
                raise SelectionAmbiguous(
                    f"critical-line root {root.sigma0} with multiplicity "
                    f"{root.multiplicity}"
                )
            take = root.multiplicity // 2
        else:
            take = 0
        for k in range(take):
            e = np.zeros(d, dtype=complex)
            e[keys.index((root.sigma0, k))] = 1.0
            cols.append(e)
            labels.append(_monomial_label(root.sigma0, k))
    W = np.column_stack(cols) if cols else np.zeros((d, 0), dtype=complex)
    spec = DomainSpec(keys, W, "friedrichs")
    if W.shape[1] not in (0, d) and not is_stationary(A, spec):
        raise SelectionAmbiguous("selected Friedrichs candidate is not stationary")
    return spec
