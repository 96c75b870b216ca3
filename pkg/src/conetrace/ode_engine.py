"""Numerical realization of closed extensions of a cone operator.

Per spectral parameter the machinery is: an exact Frobenius basis at the
regular-singular tip (the same Mellin recursion used for domain tails, with
the spectral parameter absorbed as a depth-m coefficient perturbation), jet
propagation on [x_match, 1] by an adaptive integrator on the companion
system, a characteristic determinant built from the boundary condition at
x = 1 restricted to the solutions whose tip behavior lies in the chosen
domain, and Green-kernel quadrature for traces of resolvent powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from .errors import (
    ContourThroughZero,
    NearEigenvalue,
    QuadratureNotConverged,
    SeriesDivergence,
    StepSizeUnderflow,
    TailDominates,
)
from .domain_geometry import DomainSpec, canonical_basis
from .indicial import boundary_spectrum, strip_sigma
from .operator_core import ConeOperator, bc_matrix
from .theta_map import recursion_step

_LEGGAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _LEGGAUSS_CACHE:
        _LEGGAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _LEGGAUSS_CACHE[n]


@dataclass
class Numerics:
    """Tuning knobs of the ODE/quadrature engine (defaults documented in --help)."""

    x_match: float = 0.1
    series_order: int = 40
    rel_tol: float = 1e-10
    x_cut: float = 1e-6
    quad_panels: int = 24
    gl_nodes: int = 16
    gl_check_nodes: int = 12
    log_cap: int = 16
    near_eig_tol: float = 1e-6
    x_match_floor: float = 1e-4
    scan_steps_per_wavelength: float = 30.0
    rank_tol: float = 1e-8


@dataclass(frozen=True)
class TraceSample:
    lam: complex
    ell: int
    value: complex
    method: str
    error_estimate: float


# ---------------------------------------------------------------------------
# Frobenius series
# ---------------------------------------------------------------------------

@dataclass
class FrobeniusSolution:
    """Series solution u = x^{i sigma0} sum_nu x^nu (log polynomial) of (A - lam)u = 0."""

    sigma0: complex
    log_depth: int
    series: tuple[np.ndarray, ...]
    radius: float
    lam: complex
    m: int
    _jet_flats: list = field(default_factory=list, repr=False)

    def _flat_terms(self) -> list[tuple[complex, np.ndarray]]:
        return [
            (1j * self.sigma0 + nu, c)
            for nu, c in enumerate(self.series)
            if c.size and np.any(c)
        ]

    def _flats(self, order: int) -> list[list[tuple[complex, np.ndarray]]]:
        while len(self._jet_flats) <= order:
            if not self._jet_flats:
                self._jet_flats.append(self._flat_terms())
            else:
                self._jet_flats.append(_differentiate_flat(self._jet_flats[-1]))
        return self._jet_flats[: order + 1]

    def jets(self, x, order: int | None = None) -> np.ndarray:
        """Jet (u, u', ..., u^{(order)}) at x (array), shape (order+1, n)."""
        if order is None:
            order = self.m - 1
        flats = self._flats(order)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((order + 1, len(x)), dtype=complex)
        lx = np.log(x)
        for j, flat in enumerate(flats):
            acc = np.zeros(len(x), dtype=complex)
            for p, c in flat:
                logpoly = np.zeros(len(x), dtype=complex)
                for v in c[::-1]:
                    logpoly = logpoly * lx + v
                acc += np.exp(p * lx) * logpoly
            out[j] = acc
        return out

    def evaluate(self, x):
        return self.jets(x, order=0)[0]


def _differentiate_flat(flat):
    out = []
    for p, c in flat:
        nc = p * c
        if len(c) > 1:
            nc = nc.copy()
            nc[:-1] += np.arange(1, len(c)) * c[1:]
        out.append((p - 1, nc))
    return out


def _lam_table_fn(A: ConeOperator, lam: complex) -> Callable[[int], np.ndarray]:
    zeros = np.zeros(A.m + 1, dtype=complex)
    lam_col = None

    def table(k: int) -> np.ndarray:
        nonlocal lam_col
        if k == A.m:
            if lam_col is None:
                lam_col = np.array(A.coeff[:, A.m]) if A.m <= A.depth else zeros.copy()
                lam_col = lam_col.copy()
                lam_col[0] -= lam
            return lam_col
        if 0 <= k <= A.depth:
            return np.asarray(A.coeff[:, k])
        return zeros

    return table


def _series_tail_ok(sols: Sequence[FrobeniusSolution], x: float, rel_tol: float) -> bool:
    for s in sols:
        mags = np.array([
            (np.max(np.abs(c)) if c.size else 0.0) * x ** nu
            for nu, c in enumerate(s.series)
        ])
        logfac = max(1.0, abs(math.log(x))) ** max(s.log_depth, 1)
        lead = np.max(mags) * logfac
        if lead == 0.0:
            continue
        tail = np.max(mags[-4:]) * logfac
        if tail > rel_tol * lead:
            return False
    return True


def frobenius_basis(A: ConeOperator, lam: complex, x_match: float | None = None,
                    series_order: int | None = None,
                    numerics: Numerics | None = None) -> list[FrobeniusSolution]:
    """All m series solutions of (A - lam)u = 0 at the tip.

    Seeds run over the boundary-spectrum roots with their log multiplicities;
    resonances between roots raise the log depth through the shared recursion.
    The match radius is halved until the series tail clears rel_tol.
    """
    num = numerics or Numerics()
    order = series_order or num.series_order
    x0 = x_match if x_match is not None else num.x_match
    # keep rho * x_match small: beyond that all solutions share the growing
    # mode and matching a jet to the series basis loses digits like e^{2 rho x}
    lead = np.abs(npoly.polyval(np.linspace(0, 1, 33), A.coeff[A.m]))
    rho = (abs(lam) / max(float(np.min(lead)), 1e-12)) ** (1.0 / A.m)
    while rho * x0 > 5.0 and x0 > num.x_match_floor:
        x0 *= 0.5
    table = _lam_table_fn(A, lam)
    active = {k for k in range(1, A.depth + 1) if np.any(A.coeff[:, k])} | {A.m}
    sols: list[FrobeniusSolution] = []
    for root in boundary_spectrum(A):
        for k0 in range(root.multiplicity):
            seed = np.zeros(k0 + 1, dtype=complex)
            seed[k0] = 1.0
            history: list[np.ndarray] = [seed]
            for _ in range(1, order + 1):
                center = root.sigma0 - 1j * len(history)
                history.append(recursion_step(table, center, history, num.log_cap,
                                              active=active))
            depth = max(len(c) - 1 for c in history if c.size)
            sols.append(FrobeniusSolution(
                sigma0=root.sigma0, log_depth=depth,
                series=tuple(history), radius=x0, lam=lam, m=A.m,
            ))
    x = x0
    while not _series_tail_ok(sols, x, num.rel_tol):
        x *= 0.5
        if x < num.x_match_floor:
            raise SeriesDivergence(
                f"series tail above {num.rel_tol} for every radius >= {num.x_match_floor}"
            )
    for s in sols:
        s.radius = x
    return sols


# ---------------------------------------------------------------------------
# companion system and propagation
# ---------------------------------------------------------------------------

def _stirling2(m: int) -> np.ndarray:
    S = np.zeros((m + 1, m + 1))
    S[0, 0] = 1.0
    for k in range(1, m + 1):
        for j in range(1, k + 1):
            S[k, j] = j * S[k - 1, j] + S[k - 1, j - 1]
    return S


def _classical_polys(A: ConeOperator) -> np.ndarray:
    """Ascending coefficient rows p_j with c_j(x) = x^{j-m} p_j(x).

    From (x d/dx)^k = sum_j S(k,j) x^j d^j and b_k = (-i)^k a_k.
    """
    m = A.m
    S = _stirling2(m)
    polys = np.zeros((m + 1, A.depth + 1), dtype=complex)
    for j in range(m + 1):
        for k in range(j, m + 1):
            polys[j] += ((-1j) ** k) * S[k, j] * A.coeff[k]
    return polys


class _Companion:
    def __init__(self, A: ConeOperator):
        self.m = A.m
        self.polys = _classical_polys(A)
        # rows as descending-coefficient tuples for cheap scalar Horner
        self._rows = [tuple(row[::-1]) for row in self.polys]

    def coeffs_at(self, x: float) -> np.ndarray:
        """c_j(x) = x^{j-m} p_j(x), j = 0..m."""
        m = self.m
        out = np.empty(m + 1, dtype=complex)
        xp = x ** (-m)
        for j in range(m + 1):
            acc = 0.0 + 0.0j
            for c in self._rows[j]:
                acc = acc * x + c
            out[j] = acc * xp
            xp *= x
        return out

    def rhs(self, lam: complex):
        m = self.m
        rows = self._rows

        def fun(x, y):
            Y = y.reshape(m, -1)
            out = np.empty_like(Y)
            out[:-1] = Y[1:]
            xp = x ** (-m)
            acc = lam * Y[0]
            for j in range(m):
                cj = 0.0 + 0.0j
                for c in rows[j]:
                    cj = cj * x + c
                if cj != 0:
                    acc = acc - (cj * xp) * Y[j]
                xp *= x
            cm = 0.0 + 0.0j
            for c in rows[m]:
                cm = cm * x + c
            out[-1] = acc / cm
            return out.reshape(y.shape)

        return fun


@dataclass(frozen=True)
class PropagationResult:
    jet: np.ndarray
    error_estimate: float


def propagate(A: ConeOperator, lam: complex, jet: np.ndarray, x0: float, x1: float,
              rel_tol: float = 1e-10) -> PropagationResult:
    """Advance a solution jet of (A - lam)u = 0 from x0 to x1 (either direction)."""
    jet = np.asarray(jet, dtype=complex).reshape(A.m)
    if x0 == x1 or not np.any(jet):
        return PropagationResult(jet.copy(), 0.0)
    comp = _Companion(A)
    scale = float(np.max(np.abs(jet)))
    sol = solve_ivp(
        comp.rhs(lam), (x0, x1), jet, method="DOP853",
        rtol=rel_tol, atol=rel_tol * scale * 1e-3 + 1e-300,
    )
    if not sol.success:
        raise StepSizeUnderflow(f"integrator failed: {sol.message}")
    out = sol.y[:, -1]
    return PropagationResult(out, 10.0 * rel_tol * float(np.max(np.abs(out))))


# ---------------------------------------------------------------------------
# propagated families with per-panel renormalization
# ---------------------------------------------------------------------------

class _FamilyEval:
    """Solution family on (0, 1]: series columns below the match radius,
    dense ODE segments above, with per-column log scales per segment."""

    def __init__(self, m: int):
        self.m = m
        self.segments: list[tuple[float, float, object, np.ndarray]] = []
        self.series_eval: Callable | None = None  # x_array -> (jets, logs)
        self.x_match = 0.0

    def eval(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (jets (m, p, n), logs (p, n)) at sorted positive x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = self.segments[0][3].shape[0] if self.segments else self._series_p
        jets = np.zeros((self.m, p, len(x)), dtype=complex)
        logs = np.zeros((p, len(x)))
        below = x <= self.x_match * (1 + 1e-12)
        if np.any(below):
            j, lg = self.series_eval(x[below])
            jets[:, :, below] = j
            logs[:, below] = lg
        for a, b, dense, lam_scales in self.segments:
            lo, hi = min(a, b), max(a, b)
            mask = (~below) & (x >= lo * (1 - 1e-12)) & (x <= hi * (1 + 1e-12))
            if not np.any(mask):
                continue
            vals = dense(x[mask])  # (m*p, n)
            jets[:, :, mask] = vals.reshape(self.m, p, -1)
            logs[:, mask] = lam_scales[:, None]
        return jets, logs


def _integrate_family(comp: _Companion, lam: complex, Y0: np.ndarray, x_start: float,
                      edges: Sequence[float], rel_tol: float,
                      dense: bool = True) -> tuple[_FamilyEval, np.ndarray, np.ndarray]:
    """Integrate the m x p jet matrix Y0 from x_start through the given segment
    edges (monotone, starting at x_start), renormalizing columns per segment.

    Returns (family, endpoint jets (m, p), endpoint log scales (p,)).
    """
    m, p = Y0.shape
    fam = _FamilyEval(m)
    fam._series_p = p
    Y = Y0.astype(complex).copy()
    logs = np.zeros(p)
    fun = comp.rhs(lam)
    x_prev = x_start
    for edge in edges:
        # renormalize columns entering the segment
        norms = np.max(np.abs(Y), axis=0)
        norms[norms == 0] = 1.0
        Y = Y / norms
        logs = logs + np.log(norms)
        sol = solve_ivp(
            fun, (x_prev, edge), Y.reshape(-1), method="DOP853",
            rtol=rel_tol, atol=rel_tol * 1e-3 + 1e-300, dense_output=dense,
        )
        if not sol.success:
            raise StepSizeUnderflow(f"integrator failed on [{x_prev}, {edge}]: {sol.message}")
        if dense:
            fam.segments.append((x_prev, edge, sol.sol, logs.copy()))
        Y = sol.y[:, -1].reshape(m, p)
        x_prev = edge
    return fam, Y, logs


# ---------------------------------------------------------------------------
# the spectral problem
# ---------------------------------------------------------------------------

class SpectralProblem:
    """A cone operator with a chosen domain, boundary condition, and numerics.

    Precomputes the seed bookkeeping (strip basis order, minimal roots,
    boundary rows) and caches per-lambda Frobenius sets and the
    lambda-independent determinant normalization.
    """

    def __init__(self, A: ConeOperator, domain: DomainSpec,
                 numerics: Numerics | None = None):
        self.A = A
        self.domain = domain
        self.num = numerics or Numerics()
        keys = canonical_basis(A)
        if tuple(domain.basis_order) != tuple(keys):
            raise ValueError("domain was built for a different operator/basis order")
        self.W = np.asarray(domain.W, dtype=complex)
        self.comp = _Companion(A)
        self.B = bc_matrix(A)
        self.roots = boundary_spectrum(A)
        strip = {(r.sigma0, k) for r in strip_sigma(A) for k in range(r.multiplicity)}
        half = A.m / 2.0
        # seed order must mirror frobenius_basis: roots sorted by (Im, Re), log asc
        self.seed_keys: list[tuple[complex, int]] = []
        for r in self.roots:
            for k in range(r.multiplicity):
                self.seed_keys.append((r.sigma0, k))
        self.strip_idx = [i for i, key in enumerate(self.seed_keys) if key in strip]
        self.minimal_idx = [
            i for i, (s, _) in enumerate(self.seed_keys)
            if s.imag < -half and i not in self.strip_idx
        ]
        # strip seeds must follow the canonical basis order exactly
        assert [self.seed_keys[i] for i in self.strip_idx] == list(keys)
        self.p = self.W.shape[1] + len(self.minimal_idx)
        self.q = self.B.shape[0]
        if self.p != self.q:
            raise ValueError(
                f"tip-admissible family has dimension {self.p} but the boundary "
                f"condition imposes {self.q} conditions; the extension is not "
                "a well-posed eigenvalue problem"
            )
        self._fro_cache: dict[complex, list[FrobeniusSolution]] = {}
        self._det_ref: float | None = None  # log of |det| at the reference point
        grid = np.linspace(0.0, 1.0, 65)
        self._lead_min = float(np.min(np.abs(
            npoly.polyval(grid, A.coeff[A.m]))))

    def _rho(self, lam: complex) -> float:
        """Characteristic wavenumber |lam / a_m|^{1/m} of the solutions."""
        return (abs(lam) / max(self._lead_min, 1e-12)) ** (1.0 / self.A.m)

    # -- series ----------------------------------------------------------

    def frobenius(self, lam: complex) -> list[FrobeniusSolution]:
        key = complex(lam)
        if key not in self._fro_cache:
            if len(self._fro_cache) > 16:
                self._fro_cache.clear()
            self._fro_cache[key] = frobenius_basis(self.A, lam, numerics=self.num)
        return self._fro_cache[key]

    def _seed_jets(self, sols: Sequence[FrobeniusSolution], x: np.ndarray,
                   order: int | None = None) -> np.ndarray:
        """(order+1, n_seeds, len(x)) jet array of all seed solutions."""
        order = self.A.m - 1 if order is None else order
        mats = [s.jets(x, order) for s in sols]
        return np.stack(mats, axis=1)

    def _left_combo(self) -> np.ndarray:
        """(n_seeds, p) combination matrix for the tip-admissible family."""
        n = len(self.seed_keys)
        C = np.zeros((n, self.p), dtype=complex)
        for col in range(self.W.shape[1]):
            for row_local, row_global in enumerate(self.strip_idx):
                C[row_global, col] = self.W[row_local, col]
        for j, idx in enumerate(self.minimal_idx):
            C[idx, self.W.shape[1] + j] = 1.0
        return C

    # -- determinant -----------------------------------------------------

    def _det_raw(self, lam: complex) -> tuple[complex, float]:
        """Boundary determinant of the admissible family: (mantissa, log scale)."""
        sols = self.frobenius(lam)
        x_m = sols[0].radius
        jets0 = self._seed_jets(sols, np.array([x_m]))[:, :, 0]
        Y0 = jets0 @ self._left_combo()
        edges = self._ode_edges(x_m, lam)
        _, Y1, logs = _integrate_family(self.comp, lam, Y0, x_m, edges,
                                        self.num.rel_tol, dense=False)
        Mat = self.B @ Y1
        det = np.linalg.det(Mat)
        return det, float(np.sum(logs))

    def _reference_log(self) -> float:
        if self._det_ref is None:
            for lam_ref in (1.2 + 3.4j, -2.3 + 7.9j, 17.0 + 11.0j):
                det, lg = self._det_raw(lam_ref)
                if det != 0 and np.isfinite(det):
                    self._det_ref = math.log(abs(det)) + lg
                    break
            else:
                raise NearEigenvalue("could not normalize determinant at any reference point")
        return self._det_ref

    def char_det(self, lam: complex) -> complex:
        """Characteristic determinant, normalized by a lambda-independent scale."""
        ref = self._reference_log()
        det, lg = self._det_raw(lam)
        if det == 0:
            return 0.0 + 0.0j
        return det * math.exp(min(lg - ref, 700.0))

    def _ode_edges(self, x_m: float, lam: complex) -> list[float]:
        """Renormalization segments: keep the per-segment growth under e^500."""
        span = 1.0 - x_m
        n_seg = max(1, int(math.ceil(self._rho(lam) * span / 500.0)))
        return list(x_m + span * np.arange(1, n_seg + 1) / n_seg)

    def _quad_edges(self, x_m: float, lam: complex) -> np.ndarray:
        """Geometric panels on [x_cut, 1], graded into the boundary layer at 1.

        On rays of minimal growth the kernel diagonal has layers of width
        ~1/rho at both ends; the geometric grid already resolves the tip, and
        the extra dyadic edges resolve the regular endpoint.
        """
        num = self.num
        base = np.geomspace(num.x_cut, 1.0, num.quad_panels + 1)
        pieces = [base, np.array([x_m])]
        rho = self._rho(lam)
        if rho > 8.0:
            d = 0.5 / rho
            tops = []
            while d < 0.3:
                tops.append(1.0 - d)
                d *= 2.0
            pieces.append(np.array(tops))
        edges = np.unique(np.concatenate(pieces))
        keep = [edges[0]]
        for e in edges[1:]:
            if e - keep[-1] > 1e-9 * max(1.0, e):
                keep.append(float(e))
        if keep[-1] < 1.0:
            keep.append(1.0)
        return np.asarray(keep)

    # -- eigenvalues -----------------------------------------------------

    def _batch_dets(self, lams: np.ndarray) -> np.ndarray:
        """Fixed-step RK4 determinant scan (sign-accurate, vectorized in lambda)."""
        m, num = self.A.m, self.num
        lams = np.asarray(lams, dtype=complex)
        all_sols = [frobenius_basis(self.A, l, numerics=num) for l in lams]
        x_m = min(s[0].radius for s in all_sols)
        combo = self._left_combo()
        Y = np.stack([
            self._seed_jets(sols, np.array([x_m]))[:, :, 0] @ combo
            for sols in all_sols
        ])  # (nl, m, p)
        amax = float(np.max(np.abs(lams))) if len(lams) else 1.0
        lead = self.comp.coeffs_at(1.0)[m]
        freq = (amax / max(abs(lead), 1e-12)) ** (1.0 / m)
        nsteps = max(200, int(num.scan_steps_per_wavelength * freq * (1 - x_m) / (2 * np.pi)))
        xs = np.linspace(x_m, 1.0, nsteps + 1)
        h = xs[1] - xs[0]
        lamv = lams[:, None, None]

        def f(x, Yv):
            out = np.empty_like(Yv)
            out[:, :-1] = Yv[:, 1:]
            c = self.comp.coeffs_at(float(x))
            acc = lamv[:, 0] * Yv[:, 0]
            for j in range(m):
                if c[j] != 0:
                    acc = acc - c[j] * Yv[:, j]
            out[:, -1] = acc / c[m]
            return out

        for i in range(nsteps):
            x = xs[i]
            k1 = f(x, Y)
            k2 = f(x + h / 2, Y + h / 2 * k1)
            k3 = f(x + h / 2, Y + h / 2 * k2)
            k4 = f(x + h, Y + h * k3)
            Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            norms = np.max(np.abs(Y), axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            Y = Y / norms
        mats = np.einsum("qk,nkp->nqp", self.B, Y)
        return np.linalg.det(mats)

    def eigenvalues_interval(self, lo: float, hi: float, max_count: int = 64) -> list[complex]:
        """Real eigenvalues in [lo, hi]: sign scan, batched bisection rounds
        narrowing every bracket at once, then per-root secant polish."""
        grid = self._scan_grid(lo, hi)
        dets = self._batch_dets(grid.astype(complex)).real
        brackets = []
        for i in range(len(grid) - 1):
            if dets[i] == 0.0:
                brackets.append((grid[i], grid[i], 0.0, 0.0))
            elif np.sign(dets[i]) * np.sign(dets[i + 1]) < 0:
                brackets.append((grid[i], grid[i + 1], dets[i], dets[i + 1]))
            if len(brackets) >= max_count:
                break
        live = [b for b in brackets if b[0] != b[1]]
        narrowed = list(live)
        for _ in range(4):
            if not narrowed:
                break
            mids = np.array([0.5 * (a + b) for a, b, _, _ in narrowed], dtype=complex)
            fm = self._batch_dets(mids).real
            narrowed = [
                (a, m, fa, f) if np.sign(f) != np.sign(fa) else (m, b, f, fb)
                for (a, b, fa, fb), m, f in zip(narrowed, mids.real, fm)
            ]
        out = []
        for (a, b, _, _), (a0, b0, _, _) in zip(narrowed, live):
            # the scan-accuracy bisection can misplace a tight bracket; verify
            # with the accurate determinant and fall back to the scan bracket
            root = self._refine_real(a, b)
            if root is None:
                root = self._refine_real(a0, b0)
            if root is not None:
                out.append(complex(root))
        out += [complex(b[0]) for b in brackets if b[0] == b[1]]
        out.sort(key=lambda z: z.real)
        return out[:max_count]

    def _scan_grid(self, lo: float, hi: float) -> np.ndarray:
        m = self.A.m
        pieces = []
        if lo < 1.0:
            pieces.append(np.linspace(lo, min(hi, 1.0), 41))
        if hi > 1.0:
            lead = abs(self.comp.coeffs_at(1.0)[m])
            s_lo, s_hi = max(lo, 1.0) ** (1 / m), hi ** (1 / m)
            n = max(8, int((s_hi - s_lo) / (np.pi / 8 * lead ** (1 / m))) + 1)
            pieces.append(np.linspace(s_lo, s_hi, n + 1) ** m)
        grid = np.unique(np.concatenate(pieces))
        return grid

    def _refine_real(self, a: float, b: float, max_iter: int = 80) -> float | None:
        fa = self.char_det(a).real
        fb = self.char_det(b).real
        if fa == 0:
            return a
        if fb == 0:
            return b
        if np.sign(fa) == np.sign(fb):
            return None
        x0, x1, f0, f1 = a, b, fa, fb
        for _ in range(max_iter):
            if f1 == f0:
                x2 = 0.5 * (a + b)
            else:
                x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
                if not (a < x2 < b):
                    x2 = 0.5 * (a + b)
            f2 = self.char_det(x2).real
            if f2 == 0 or abs(b - a) <= 1e-13 * max(1.0, abs(x2)):
                return x2
            if np.sign(f2) == np.sign(fa):
                a, fa = x2, f2
            else:
                b, fb = x2, f2
            x0, f0, x1, f1 = x1, f1, x2, f2
            if abs(x1 - x0) <= 1e-14 * max(1.0, abs(x1)):
                return x1
        return 0.5 * (a + b)

    def eigenvalues_region(self, rect: tuple[float, float, float, float],
                           max_count: int = 64) -> list[complex]:
        """Complex eigenvalues in a rectangle via the argument principle."""
        found: list[complex] = []
        self._subdivide(rect, found, max_count, depth=0)
        found.sort(key=lambda z: (abs(z), z.real, z.imag))
        return found[:max_count]

    def _winding(self, rect) -> int:
        re0, re1, im0, im1 = rect
        per_side = 24
        pts = np.concatenate([
            re0 + np.linspace(0, 1, per_side, endpoint=False) * (re1 - re0) + 1j * im0,
            re1 + 1j * (im0 + np.linspace(0, 1, per_side, endpoint=False) * (im1 - im0)),
            re1 - np.linspace(0, 1, per_side, endpoint=False) * (re1 - re0) + 1j * im1,
            re0 + 1j * (im1 - np.linspace(0, 1, per_side, endpoint=False) * (im1 - im0)),
        ])
        vals = np.array([self.char_det(z) for z in pts])
        mags = np.abs(vals)
        if np.min(mags) < 1e-9 * max(np.median(mags), 1e-30):
            raise ContourThroughZero("contour passes too close to an eigenvalue")
        phases = np.angle(vals)
        dphi = np.diff(np.concatenate([phases, phases[:1]]))
        dphi = (dphi + np.pi) % (2 * np.pi) - np.pi
        if np.max(np.abs(dphi)) > 2.5:
            raise ContourThroughZero("phase steps too large; refine the contour")
        return int(round(float(np.sum(dphi)) / (2 * np.pi)))

    def _subdivide(self, rect, found: list, max_count: int, depth: int) -> None:
        if len(found) >= max_count:
            return
        w = self._winding(rect)
        if w == 0:
            return
        re0, re1, im0, im1 = rect
        small = max(re1 - re0, im1 - im0) < 1e-6 * (1 + abs(re0) + abs(im0))
        if w == 1 or small or depth >= 24:
            z = self._refine_complex(complex((re0 + re1) / 2, (im0 + im1) / 2))
            found.append(z)
            return
        rm, imid = (re0 + re1) / 2, (im0 + im1) / 2
        eps_r = 1e-7 * (1 + abs(rm))
        for sub in (
            (re0, rm + eps_r, im0, imid + eps_r),
            (rm + eps_r, re1, im0, imid + eps_r),
            (re0, rm + eps_r, imid + eps_r, im1),
            (rm + eps_r, re1, imid + eps_r, im1),
        ):
            self._subdivide(sub, found, max_count, depth + 1)

    def _refine_complex(self, z0: complex, max_iter: int = 60) -> complex:
        z1 = z0 * (1 + 1e-4) + 1e-4
        f0, f1 = self.char_det(z0), self.char_det(z1)
        for _ in range(max_iter):
            if f1 == f0:
                break
            z2 = z1 - f1 * (z1 - z0) / (f1 - f0)
            z0, f0, z1 = z1, f1, z2
            f1 = self.char_det(z1)
            if abs(z1 - z0) <= 1e-13 * max(1.0, abs(z1)):
                break
        return z1

    # -- Green kernel traces ---------------------------------------------

    def _green_assembly(self, lam: complex, x_m_override: float | None = None,
                        edges_override: np.ndarray | None = None) -> dict:
        """Solution families and panel structure shared by the trace quadratures."""
        num = self.num
        sols = self.frobenius(lam)
        x_m = x_m_override if x_m_override is not None else sols[0].radius
        edges_all = edges_override if edges_override is not None \
            else self._quad_edges(x_m, lam)
        panels = [(float(edges_all[i]), float(edges_all[i + 1]))
                  for i in range(len(edges_all) - 1)]

        combo = self._left_combo()
        jets0 = self._seed_jets(sols, np.array([x_m]))[:, :, 0]
        up_edges = self._ode_edges(x_m, lam)
        left_fam, left1, left_logs1 = _integrate_family(
            self.comp, lam, jets0 @ combo, x_m, up_edges, num.rel_tol)
        left_fam.x_match = x_m

        def left_series(x):
            jets = np.einsum("jkn,kp->jpn", self._seed_jets(sols, x), combo)
            return jets, np.zeros((self.p, len(np.atleast_1d(x))))

        left_fam.series_eval = left_series

        # right family: kernel of the boundary rows, integrated downward
        kern = null_space(self.B)  # (m, m-q)
        down_edges = [e for e in reversed(up_edges[:-1])] + [x_m]
        right_fam, rightm, right_logs = _integrate_family(
            self.comp, lam, kern, 1.0, down_edges, num.rel_tol)
        right_fam.x_match = x_m

        # match the right family to the series basis below x_m
        gamma = np.linalg.solve(jets0, rightm)

        def right_series(x):
            jets = np.einsum("jkn,kp->jpn", self._seed_jets(sols, x), gamma)
            n = len(np.atleast_1d(x))
            return jets, np.tile(right_logs[:, None], (1, n))

        right_fam.series_eval = right_series

        # near-eigenvalue gate via the normalized boundary determinant
        det = np.linalg.det(self.B @ left1)
        ref = self._reference_log()
        det_norm = det * math.exp(min(float(np.sum(left_logs1)) - ref, 700.0))
        if abs(det_norm) < num.near_eig_tol:
            raise NearEigenvalue(
                f"|char det| = {abs(det_norm):.3e} below gate {num.near_eig_tol}"
            )
        return {
            "sols": sols, "x_m": x_m, "panels": panels,
            "left": left_fam, "right": right_fam, "lam": lam,
        }

    def _diag_green(self, asm: dict, x: np.ndarray) -> np.ndarray:
        """G(x, x) of the classical kernel; invariant under the column scales."""
        m = self.A.m
        jl, _ = asm["left"].eval(x)
        jr, _ = asm["right"].eval(x)
        n = len(x)
        M = np.empty((n, m, m), dtype=complex)
        M[:, :, : self.p] = -np.moveaxis(jl, 2, 0)
        M[:, :, self.p:] = np.moveaxis(jr, 2, 0)
        rhs = np.zeros((n, m, 1), dtype=complex)
        cm = npoly.polyval(x, self.comp.polys[m])
        rhs[:, m - 1, 0] = 1.0 / cm
        sol = np.linalg.solve(M, rhs)[:, :, 0]
        alpha = sol[:, : self.p]
        u0 = np.moveaxis(jl[0], 1, 0)  # (n, p)
        return np.einsum("np,np->n", u0, alpha)

    def green_kernel(self, lam: complex, xs, ys) -> np.ndarray:
        """Classical Green kernel G(x, y) of (A_D - lam)^{-1} on a point grid.

        The resolvent kernel with respect to the reference measure
        x^{m-1} dx is G(x, y) / y^{m-1}.
        """
        asm = self._green_assembly(lam)
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        m = self.A.m
        jl, lL = asm["left"].eval(xs)
        jr, lR = asm["right"].eval(xs)
        jly, lLy = asm["left"].eval(ys)
        jry, lRy = asm["right"].eval(ys)
        n = len(ys)
        M = np.empty((n, m, m), dtype=complex)
        M[:, :, : self.p] = -np.moveaxis(jly, 2, 0)
        M[:, :, self.p:] = np.moveaxis(jry, 2, 0)
        rhs = np.zeros((n, m, 1), dtype=complex)
        cm = npoly.polyval(ys, self.comp.polys[m])
        rhs[:, m - 1, 0] = 1.0 / cm
        sol = np.linalg.solve(M, rhs)[:, :, 0]
        alpha, beta = sol[:, : self.p], sol[:, self.p:]
        G = np.empty((len(xs), n), dtype=complex)
        for j in range(n):
            KL = np.einsum("pi,p->i", jl[0] * _safe_exp_arr(lL - lLy[:, j][:, None]),
                           alpha[j])
            KR = np.einsum("pi,p->i", jr[0] * _safe_exp_arr(lR - lRy[:, j][:, None]),
                           beta[j])
            G[:, j] = np.where(xs <= ys[j], KL, KR)
        return G

    def green_trace(self, lam: complex, ell: int, phi: Sequence[float] = (1.0,)) -> TraceSample:
        """Tr(phi (A_D - lam)^{-ell}) by Green-kernel quadrature."""
        if self.A.m * ell <= 1:
            raise ValueError("need m * ell > 1 for a trace-class power")
        phi = np.asarray(phi, dtype=complex)
        asm = self._green_assembly(lam)
        if ell == 1:
            value, err = self._trace_one(asm, phi)
        elif ell == 2 and self.A.m == 2:
            value, err = self._trace_two(asm, asm, phi)
        else:
            value, err = self._trace_nystrom(asm, phi, ell)
        return TraceSample(lam, ell, value, "green", err)

    def trace_pair(self, lam1: complex, lam2: complex,
                   phi: Sequence[float] = (1.0,)) -> TraceSample:
        """Tr(phi (A_D - lam1)^{-1} (A_D - lam2)^{-1}) for the resolvent identity."""
        phi = np.asarray(phi, dtype=complex)
        x_m = min(self.frobenius(lam1)[0].radius, self.frobenius(lam2)[0].radius)
        edges = self._quad_edges(x_m, max(lam1, lam2, key=abs))
        asm1 = self._green_assembly(lam1, x_m, edges)
        asm2 = self._green_assembly(lam2, x_m, edges)
        value, err = self._trace_two(asm1, asm2, phi)
        return TraceSample(lam1, 2, value, "green", err)

    def _panel_quad(self, panels, n_nodes: int):
        """Panel-mapped Gauss nodes/weights: arrays shaped (P, n_nodes)."""
        t, w = _leggauss(n_nodes)
        a = np.array([p[0] for p in panels])
        b = np.array([p[1] for p in panels])
        xs = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * t[None, :]
        ws = 0.5 * (b - a)[:, None] * np.broadcast_to(w, xs.shape)
        return xs, ws

    def _trace_one(self, asm: dict, phi: np.ndarray) -> tuple[complex, float]:
        num = self.num
        panels = asm["panels"]
        totals = []
        for n_nodes in (num.gl_nodes, num.gl_check_nodes):
            xs, ws = self._panel_quad(panels, n_nodes)
            g = self._diag_green(asm, xs.ravel())
            totals.append(np.sum(ws.ravel() * npoly.polyval(xs.ravel(), phi) * g))
        total_main, total_check = totals
        # leading-power tip correction on (0, x_cut]
        xc = num.x_cut
        probes = np.array([xc / 4, xc / 2, xc])
        gp = self._diag_green(asm, probes) * npoly.polyval(probes, phi)
        tip = 0.0 + 0.0j
        tip_err = float(np.max(np.abs(gp))) * xc
        if abs(gp[-1]) > 0 and abs(gp[0]) > 0:
            p_est = math.log(abs(gp[-1]) / abs(gp[0])) / math.log(4.0)
            if p_est > -0.5:
                tip = gp[-1] * xc / (p_est + 1.0)
                tip_err = abs(tip) * 0.5
        value = total_main + tip
        err = abs(total_main - total_check) + tip_err + num.rel_tol * abs(value) * 10
        return value, float(err)

    def _scaled_factors(self, asm: dict, x: np.ndarray) -> dict:
        """Scaled m = 2 kernel ingredients at x, with per-point log scales."""
        m = self.A.m
        jl, ll = asm["left"].eval(x)
        jr, lr = asm["right"].eval(x)
        uL, uLp = jl[0, 0], jl[1, 0]
        uR, uRp = jr[0, 0], jr[1, 0]
        cm = npoly.polyval(x, self.comp.polys[m])
        cw = cm * (uL * uRp - uLp * uR)
        return {"uL": uL, "uR": uR, "cw": cw, "lL": ll[0], "lR": lr[0]}

    def _trace_two(self, asm1: dict, asm2: dict, phi: np.ndarray) -> tuple[complex, float]:
        value_main = self._trace_two_rule(asm1, asm2, phi, inner_nodes=10)
        value_check = self._trace_two_rule(asm1, asm2, phi, inner_nodes=7)
        err = abs(value_main - value_check) + self.num.rel_tol * abs(value_main) * 20
        return value_main, float(err)

    def _pair_factors(self, asm1: dict, asm2: dict, x: np.ndarray) -> dict:
        """Separable ingredients of K1(x,z) K2(z,x) in scaled frames.

        For z < x the product is [uL1 uL2 / cw1](z) [uR1 uR2 / cw2](x); the
        z-factor gL carries the frame exponent E_L = log-scale(L2) -
        log-scale(R1), and the matching outer factor carries exactly -E_L, so
        only nonpositive exponent differences are ever exponentiated.
        """
        f1 = self._scaled_factors(asm1, x)
        f2 = self._scaled_factors(asm2, x)
        return {
            "gL": f1["uL"] * f2["uL"] / f1["cw"], "eL": f2["lL"] - f1["lR"],
            "hlt": f1["uR"] * f2["uR"] / f2["cw"],
            "gR": f1["uR"] * f2["uR"] / f1["cw"], "eR": f2["lR"] - f1["lL"],
            "hgt": f1["uL"] * f2["uL"] / f2["cw"],
        }

    def _trace_two_rule(self, asm1: dict, asm2: dict, phi: np.ndarray,
                        inner_nodes: int) -> complex:
        panels = asm1["panels"]
        P = len(panels)
        G = self.num.gl_nodes
        xs, ws = self._panel_quad(panels, G)
        F = {k: v.reshape(P, G) for k, v in
             self._pair_factors(asm1, asm2, xs.ravel()).items()}
        phi_v = npoly.polyval(xs, phi)
        ti, wi = _leggauss(inner_nodes)

        a = np.array([p[0] for p in panels])
        b = np.array([p[1] for p in panels])

        def cumulative(g, e, from_left: bool):
            """acc[p, i] = sum over z on the accumulated side of x[p, i] of
            w g(z) exp(e(z) - e[p, i]), panels-then-partial."""
            frame = np.max(e, axis=1)  # (P,)
            S = np.sum(ws * g * _safe_exp_arr(e - frame[:, None]), axis=1)
            acc = np.zeros((P, G), dtype=complex)
            for p in range(P):
                if from_left and p > 0:
                    acc[p] = np.sum(
                        S[:p][None, :] * _safe_exp_arr(frame[:p][None, :] - e[p][:, None]),
                        axis=1)
                if (not from_left) and p < P - 1:
                    acc[p] = np.sum(
                        S[p + 1:][None, :] * _safe_exp_arr(frame[p + 1:][None, :] - e[p][:, None]),
                        axis=1)
            # partial panel [a_p, x] (from left) or [x, b_p] (from right)
            if from_left:
                lo = np.broadcast_to(a[:, None], (P, G))
                hi = xs
            else:
                lo = xs
                hi = np.broadcast_to(b[:, None], (P, G))
            zs = 0.5 * (lo + hi)[..., None] + 0.5 * (hi - lo)[..., None] * ti
            zw = 0.5 * (hi - lo)[..., None] * wi
            fz = self._pair_factors(asm1, asm2, zs.ravel())
            gz = (fz["gL"] if from_left else fz["gR"]).reshape(P, G, inner_nodes)
            ez = (fz["eL"] if from_left else fz["eR"]).reshape(P, G, inner_nodes)
            acc += np.sum(zw * gz * _safe_exp_arr(ez - e[..., None]), axis=2)
            return acc

        accL = cumulative(F["gL"], F["eL"], from_left=True)
        accR = cumulative(F["gR"], F["eR"], from_left=False)
        total = np.sum(ws * phi_v * (F["hlt"] * accL + F["hgt"] * accR))
        return complex(total)

    def _trace_nystrom(self, asm: dict, phi: np.ndarray, ell: int) -> tuple[complex, float]:
        """Matrix composition fallback for higher resolvent powers.

        The diagonal kink of the kernel limits the accuracy of composed
        panels; the error estimate is widened accordingly.
        """
        panels = asm["panels"]
        xs, ws_2d = self._panel_quad(panels, self.num.gl_nodes)
        xs = xs.ravel()
        ws = ws_2d.ravel()
        n = len(xs)
        m = self.A.m
        jl, lL = asm["left"].eval(xs)
        jr, lR = asm["right"].eval(xs)
        M = np.empty((n, m, m), dtype=complex)
        M[:, :, : self.p] = -np.moveaxis(jl, 2, 0)
        M[:, :, self.p:] = np.moveaxis(jr, 2, 0)
        rhs = np.zeros((n, m, 1), dtype=complex)
        cm = npoly.polyval(xs, self.comp.polys[m])
        rhs[:, m - 1, 0] = 1.0 / cm
        sol = np.linalg.solve(M, rhs)[:, :, 0]  # scaled alpha/beta at each y node
        alpha, beta = sol[:, : self.p], sol[:, self.p:]
        uL, uR = jl[0], jr[0]  # (p, n) scaled, logs lL / lR
        K = np.empty((n, n), dtype=complex)
        for j in range(n):
            below = np.arange(n) <= j
            KL = np.einsum("pi,p->i", uL * _safe_exp_arr(lL - lL[:, j][:, None]), alpha[j])
            KR = np.einsum("pi,p->i", uR * _safe_exp_arr(lR - lR[:, j][:, None]), beta[j])
            K[:, j] = np.where(below, KL, KR)
        Kw = K * ws[None, :]
        Pmat = Kw.copy()
        for _ in range(ell - 1):
            Pmat = Pmat @ Kw
        diag = np.diagonal(Pmat) / ws
        value = np.sum(ws * npoly.polyval(xs, phi) * diag)
        err = abs(value) * 1e-3 + self.num.rel_tol * abs(value) * 100
        return complex(value), float(err)


def _safe_exp(e: float) -> float:
    return math.exp(min(e, 700.0)) if e > -745.0 else 0.0


def _safe_exp_arr(e: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(e, -745.0, 700.0))


# ---------------------------------------------------------------------------
# module-level operation wrappers
# ---------------------------------------------------------------------------

def characteristic_det(A: ConeOperator, lam: complex, W: DomainSpec,
                       numerics: Numerics | None = None) -> complex:
    """Normalized boundary determinant; zero exactly at eigenvalues of A_D."""
    return SpectralProblem(A, W, numerics).char_det(lam)


def eigenvalues(A: ConeOperator, W: DomainSpec, region, max_count: int = 64,
                numerics: Numerics | None = None) -> list[complex]:
    """Eigenvalues in a real interval (lo, hi) or rectangle (re0, re1, im0, im1)."""
    prob = SpectralProblem(A, W, numerics)
    region = tuple(region)
    if len(region) == 2:
        return prob.eigenvalues_interval(float(region[0]), float(region[1]), max_count)
    if len(region) == 4:
        return prob.eigenvalues_region(region, max_count)
    raise ValueError("region must be (lo, hi) or (re0, re1, im0, im1)")


def green_trace(A: ConeOperator, lam: complex, W: DomainSpec, ell: int,
                phi: Sequence[float] = (1.0,),
                numerics: Numerics | None = None) -> TraceSample:
    return SpectralProblem(A, W, numerics).green_trace(lam, ell, phi)


def eigen_trace(eigs: Sequence[float], lam: complex, ell: int,
                weyl_exponent: float = 2.0, rtol: float = 1e-4) -> TraceSample:
    """Sum over computed eigenvalues plus a fitted-growth tail estimate.

    The tail model mu_k ~ (a k + b)^e + c is fitted on the top half of the
    supplied (complete, ascending) eigenvalue list; the residual of that fit
    bounds the tail uncertainty.
    """
    mus = np.asarray(sorted(np.real(eigs)), dtype=float)
    K = len(mus)
    if K < 8:
        raise ValueError("need at least 8 eigenvalues for a tail model")
    direct = np.sum((mus - lam) ** (-float(ell)))
    a, b, c, resid = _weyl_fit(mus, weyl_exponent)
    nbig = 50000
    ks = np.arange(K + 1, K + nbig + 1, dtype=float)
    model = (a * ks + b) ** weyl_exponent + c
    tail = np.sum((model - lam) ** (-float(ell)))
    T = a * (K + nbig + 0.5) + b
    e_ell = weyl_exponent * ell
    remainder = T ** (1.0 - e_ell) / (a * (e_ell - 1.0))
    tail += remainder
    # uncertainty: model misfit moved through the derivative of the summand
    sens = np.sum(np.abs(model - lam) ** (-float(ell) - 1.0)) * ell
    err = float(resid * sens + abs(remainder) * 0.05)
    value = complex(direct + tail)
    if err > rtol * abs(value):
        raise TailDominates(
            f"tail uncertainty {err:.3e} exceeds {rtol:.1e} x |value|"
        )
    return TraceSample(lam, ell, value, "eigen", err + 1e-14 * abs(value))


def _weyl_fit(mus: np.ndarray, e: float) -> tuple[float, float, float, float]:
    K = len(mus)
    ks = np.arange(1, K + 1, dtype=float)
    top = slice(K // 2, K)
    roots = mus[top] ** (1.0 / e)
    coef = np.polyfit(ks[top], roots, 1)
    a, b = float(coef[0]), float(coef[1])
    c = float(np.mean(mus[top] - (a * ks[top] + b) ** e))
    resid = float(np.max(np.abs(mus[top] - ((a * ks[top] + b) ** e + c))))
    return a, b, c, resid
