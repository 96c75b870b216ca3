"""Ray sampling of resolvent traces and log-polyhomogeneous expansion fits.

Traces are sampled on a geometric radius grid along a fixed ray and fitted
in the basis {r^{(n-j)/m - ell} log^k r} with n = 1.  The log-basis design
is ill-conditioned over wide windows, so the fit peels dominant terms on
high-r windows first and reports per-coefficient drift across sliding
windows; drift is the practical detector for domains without a complete
expansion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc, gammaln, zeta as hurwitz_zeta

from .errors import (
    IllConditioned,
    Inconclusive,
    SectorNotAdmissible,
    TailDominates,
)
from .domain_geometry import DomainSpec
from .ode_engine import Numerics, SpectralProblem, TraceSample, _weyl_fit
from .operator_core import ConeOperator, check_parameter_ellipticity


@dataclass(frozen=True)
class RaySamples:
    theta0: float
    ell: int
    phi: tuple[float, ...]
    domain_label: str
    samples: tuple[TraceSample, ...]
    failures: tuple[tuple[float, str], ...] = ()

    @property
    def r(self) -> np.ndarray:
        return np.array([abs(s.lam) for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])

    @property
    def errors(self) -> np.ndarray:
        return np.array([s.error_estimate for s in self.samples])


@dataclass(frozen=True)
class FitResult:
    terms: tuple[tuple[int, int, complex], ...]   # (j, k, alpha_jk)
    m_caps: tuple[int, ...]
    residual_norm: float
    condition: float
    window_drift: dict

    def coefficient(self, j: int, k: int = 0) -> complex:
        for jj, kk, a in self.terms:
            if jj == j and kk == k:
                return a
        return 0.0 + 0.0j

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"j": j, "k": k, "alpha": [a.real, a.imag]} for j, k, a in self.terms
            ],
            "m_caps": list(self.m_caps),
            "residual_norm": self.residual_norm,
            "condition": self.condition,
            "window_drift": {key: val for key, val in self.window_drift.items()},
        }


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_ray(A: ConeOperator, W: DomainSpec, ell: int, phi: Sequence[float],
               theta0: float, r_min: float, r_max: float, count: int,
               numerics: Numerics | None = None,
               sector_halfwidth: float = 1e-3) -> RaySamples:
    """green_trace on a geometric |lambda| grid along the ray exp(i theta0).

    Individual failures are recorded, not fatal; an inadmissible ray is.
    """
    if A.m * ell <= 1:
        raise ValueError("need m * ell > 1")
    if not check_parameter_ellipticity(A, (theta0, sector_halfwidth)):
        raise SectorNotAdmissible(
            f"ray at angle {theta0} meets the symbol rays of the operator"
        )
    prob = SpectralProblem(A, W, numerics)
    rs = np.geomspace(r_min, r_max, count)
    direction = np.exp(1j * theta0)
    samples = []
    failures = []
    for r in rs:
        lam = r * direction
        if abs(theta0 - np.pi) < 1e-12:
            lam = complex(-r)  # keep the negative axis exactly real
        try:
            samples.append(prob.green_trace(lam, ell, phi))
        except Exception as exc:  # recorded per sample
            failures.append((float(r), f"{type(exc).__name__}: {exc}"))
    return RaySamples(theta0, ell, tuple(float(c) for c in phi), W.label,
                      tuple(samples), tuple(failures))


def write_samples_csv(path, ray: RaySamples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "re_value", "im_value", "error_estimate", "method"])
        for s in ray.samples:
            w.writerow([f"{abs(s.lam):.15g}", f"{s.value.real:.15g}",
                        f"{s.value.imag:.15g}", f"{s.error_estimate:.15g}", s.method])


def read_samples_csv(path, theta0: float, ell: int, phi=(1.0,),
                     domain_label: str = "") -> RaySamples:
    samples = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = float(row["r"])
            val = complex(float(row["re_value"]), float(row["im_value"]))
            samples.append(TraceSample(r * np.exp(1j * theta0), ell, val,
                                       row["method"], float(row["error_estimate"])))
    return RaySamples(theta0, ell, tuple(phi), domain_label, tuple(samples))


# ---------------------------------------------------------------------------
# expansion fitting
# ---------------------------------------------------------------------------

def _design(r: np.ndarray, m: int, ell: int, caps: Sequence[int],
            shift: float = 0.0, n_dim: int = 1, terms=None):
    """Columns r^{(n-j)/m - ell + shift} log^k r; ``terms`` overrides the caps
    grid with an explicit (j, k) list (used for partial models)."""
    cols = []
    labels = []
    lr = np.log(r)
    if terms is None:
        terms = [(j, k) for j, cap in enumerate(caps) for k in range(cap + 1)]
    for j, k in terms:
        expo = (n_dim - j) / m - ell + shift
        cols.append(r ** expo * lr ** k)
        labels.append((j, k))
    return np.column_stack(cols), labels


def _weighted_lstsq(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    Xw = X * w[:, None]
    yw = y * w
    scales = np.linalg.norm(Xw, axis=0)
    scales[scales == 0] = 1.0
    Xs = Xw / scales
    coef, _, _, sv = np.linalg.lstsq(Xs, yw, rcond=None)
    coef = coef / scales
    resid = np.linalg.norm(Xw @ coef - yw) / max(np.linalg.norm(yw), 1e-300)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return coef, resid, cond


def _fit_once(r, vals, m, ell, caps, shift=0.0, peel=True, n_dim=1,
              terms=None):
    """One fit of the expansion model.

    peel=True runs the joint weighted fit on nested high-r windows and keeps
    the window with the smallest relative residual: windows still reached by
    corrections below the model floor (exponentially small terms, partial
    expansions) fit badly and are discarded, so they cannot contaminate the
    leading coefficients.  peel=False fits the full range once.
    """
    w = 1.0 / np.maximum(np.abs(vals), 1e-300)
    y = vals.astype(complex)
    X, labels = _design(r, m, ell, caps, shift, n_dim, terms)
    n_terms = X.shape[1]
    full = np.ones(len(r), dtype=bool)
    if not peel:
        coef, resid, cond = _weighted_lstsq(X, y, w)
        return coef, labels, resid, cond, full
    lr = np.log(r)
    span = lr.max() - lr.min() + 1e-300

    # stage 1: drop low-r windows until the joint fit reaches its noise
    # floor; corrections below the model floor (exponentially small terms,
    # partial expansions) are excluded this way
    fits = []
    for frac in (0.0, 0.15, 0.3, 0.45, 0.6):
        mask = lr >= lr.min() + frac * span
        if np.sum(mask) < max(2 * n_terms, n_terms + 4):
            break
        fits.append(_weighted_lstsq(X[mask], y[mask], w[mask]) + (mask,))
    if not fits:
        fits.append(_weighted_lstsq(X, y, w) + (full,))
    floor = min(f[1] for f in fits)
    coef, resid, cond, mask = next(f for f in fits if f[1] <= 3.0 * floor + 1e-300)

    # stage 2: cascade peeling inside the clean subrange; each order group
    # is re-estimated with one look-ahead group on a window sliding toward
    # low r (where its column still carries signal), then subtracted
    groups: list[list[int]] = []
    seen: dict[int, list[int]] = {}
    for idx, (j, _k) in enumerate(labels):
        seen.setdefault(j, []).append(idx)
    groups = [seen[j] for j in sorted(seen)]
    if len(groups) >= 2 and np.sum(mask) >= n_terms + 6:
        rc, wc = r[mask], w[mask]
        Xc = X[mask]
        lrc = np.log(rc)
        spanc = lrc.max() - lrc.min() + 1e-300
        out = np.zeros(n_terms, dtype=complex)
        G = len(groups)
        width = 0.6
        windows = []
        for gi, cols in enumerate(groups):
            top = 1.0 - (1.0 - width) * (gi / max(G - 1, 1))
            sel = (lrc >= lrc.min() + (top - width) * spanc - 1e-12) \
                & (lrc <= lrc.min() + top * spanc + 1e-12)
            look = cols + (groups[gi + 1] if gi + 1 < G else [])
            if np.sum(sel) < len(look) + 2:
                sel = np.ones(len(rc), dtype=bool)
            windows.append((cols, look, sel))
        work = y[mask] - Xc @ out
        for _sweep in range(4):  # Gauss-Seidel over groups tightens the cascade
            for cols, look, sel in windows:
                work = work + Xc[:, cols] @ out[cols]
                cg, _, _ = _weighted_lstsq(Xc[np.ix_(sel, look)], work[sel], wc[sel])
                out[cols] = cg[: len(cols)]
                work = work - Xc[:, cols] @ out[cols]
        coef = out
        resid = float(np.linalg.norm(work * wc) / max(np.linalg.norm(y[mask] * w[mask]), 1e-300))
    return coef, labels, resid, cond, mask


def fit_expansion(samples: RaySamples, J: int, m_caps: Sequence[int] | None = None,
                  m: int = 2, n_dim: int = 1, exponent_shift: float = 0.0,
                  peel: bool = True, n_windows: int = 5,
                  cond_threshold: float = 1e12,
                  terms: Sequence[tuple[int, int]] | None = None) -> FitResult:
    """Weighted least squares in the expansion basis up to order J.

    m_caps[j] is the highest log power fitted at order j; the default is the
    generic stationary pattern (no logs below order n, a single possible log
    at order n, none beyond).  ``terms`` selects an explicit (j, k) model
    instead, e.g. the guaranteed partial model of a nonstationary domain.
    Per-coefficient drift across sliding windows is reported alongside.
    """
    if m_caps is None:
        m_caps = [0] * (J + 1)
        if J >= n_dim:
            m_caps[n_dim] = 1
    caps = list(m_caps)
    r = samples.r
    vals = samples.values
    n_terms = len(terms) if terms is not None else sum(c + 1 for c in caps)
    if len(r) < 2 * n_terms:
        raise ValueError(f"need at least {2 * n_terms} samples for {n_terms} terms")
    coef, labels, resid, cond, used = _fit_once(r, vals, m, samples.ell, caps,
                                                exponent_shift, peel, n_dim, terms)
    if cond > cond_threshold:
        raise IllConditioned(f"design condition {cond:.3e} above {cond_threshold:.1e}")

    # sliding windows over the stability-selected subrange: plain joint fits
    # expose coefficient drift, the practical signature of a merely partial
    # expansion (complete expansions refit to the same constants everywhere)
    drift: dict = {}
    r_d, vals_d = r[used], vals[used]
    if n_windows >= 2 and len(r_d) >= n_terms + 6:
        lr = np.log(r_d)
        span = lr.max() - lr.min()
        width = 0.6 * span
        starts = np.linspace(lr.min(), lr.max() - width, n_windows)
        per_label = {lab: [] for lab in labels}
        for s0 in starts:
            mask = (lr >= s0 - 1e-12) & (lr <= s0 + width + 1e-12)
            if np.sum(mask) < n_terms + 2:
                continue
            c_w, _, _, _, _ = _fit_once(r_d[mask], vals_d[mask], m, samples.ell, caps,
                                        exponent_shift, False, n_dim, terms)
            for lab, v in zip(labels, c_w):
                per_label[lab].append(v)
        for lab, vs in per_label.items():
            if len(vs) >= 2:
                vs = np.asarray(vs)
                drift[f"{lab[0]},{lab[1]}"] = float(
                    np.max(np.abs(vs - np.mean(vs))) * 2
                )
    out_terms = tuple((j, k, complex(c)) for (j, k), c in zip(labels, coef))
    return FitResult(out_terms, tuple(caps), float(resid), float(cond), drift)


def detect_logs(samples: RaySamples, j: int, threshold: float = 10.0,
                m: int = 2, n_dim: int = 1, k_max: int = 2,
                J_buffer: int = 1) -> int:
    """Smallest log power at order j whose inclusion improves the fit by
    the threshold factor (0 when none does).

    The log-free model first selects its stability window (peeling the
    low-r region reached by off-model corrections); nested joint fits on
    that window then compare residuals.  A residual ratio inside
    [threshold^(1/2), threshold) is refused as inconclusive rather than
    rounded either way.
    """
    J = j + J_buffer
    base_caps = [0] * (J + 1)
    if n_dim <= J and n_dim != j:
        base_caps[n_dim] = 1
    _, _, _, _, mask = _fit_once(samples.r, samples.values, m, samples.ell,
                                 base_caps, peel=True)
    r, vals = samples.r[mask], samples.values[mask]

    def resid_for(k_at_j: int) -> float:
        caps = list(base_caps)
        caps[j] = k_at_j
        _, _, resid, _, _ = _fit_once(r, vals, m, samples.ell, caps, peel=False)
        return max(resid, 1e-300)

    prev = resid_for(0)
    for k in range(1, k_max + 1):
        cur = resid_for(k)
        ratio = prev / cur
        if ratio >= threshold:
            return k
        if threshold ** 0.5 <= ratio < threshold:
            raise Inconclusive(
                f"residual reduction {ratio:.2f} straddles threshold {threshold}"
            )
        prev = min(prev, cur)
    return 0


def compare_domains(fit_A: FitResult, fit_B: FitResult, n_dim: int = 1) -> dict:
    """Coefficient deltas split into theorem-constrained and free families.

    Orders j < n and the (n, 1) log coefficient must agree across domains;
    the rest may differ.
    """
    must_agree = []
    may_differ = []
    keys = {(j, k) for j, k, _ in fit_A.terms} | {(j, k) for j, k, _ in fit_B.terms}
    for j, k in sorted(keys):
        a, b = fit_A.coefficient(j, k), fit_B.coefficient(j, k)
        entry = {
            "j": j, "k": k,
            "alpha_A": [a.real, a.imag], "alpha_B": [b.real, b.imag],
            "delta": abs(a - b),
        }
        if j < n_dim or (j == n_dim and k == 1):
            must_agree.append(entry)
        else:
            may_differ.append(entry)
    return {
        "must_agree": must_agree,
        "may_differ": may_differ,
        "max_constrained_delta": max((e["delta"] for e in must_agree), default=0.0),
    }


# ---------------------------------------------------------------------------
# heat trace and zeta function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatSamples:
    t: np.ndarray
    values: np.ndarray
    errors: np.ndarray


def heat_trace(eigs: Sequence[float], t_grid: Sequence[float],
               weyl_exponent: float = 2.0, rtol: float = 1e-8) -> HeatSamples:
    """sum_k exp(-t mu_k) over computed eigenvalues plus a Weyl-tail estimate.

    The tail uses the fitted growth model with a midpoint Euler-Maclaurin
    integral; TailDominates flags t too small for the computed spectrum.
    """
    mus = np.asarray(sorted(np.real(eigs)), dtype=float)
    K = len(mus)
    a, b, c, resid = _weyl_fit(mus, weyl_exponent)
    t = np.asarray(t_grid, dtype=float)
    vals = np.zeros(len(t))
    errs = np.zeros(len(t))
    for i, ti in enumerate(t):
        direct = float(np.sum(np.exp(-ti * mus)))
        if weyl_exponent == 2.0:
            # int_{K+1/2}^inf exp(-t((a k + b)^2 + c)) dk in closed form
            edge = a * (K + 0.5) + b
            tail = math.exp(-ti * c) * math.sqrt(math.pi) / (2 * a * math.sqrt(ti)) \
                * float(erfc(math.sqrt(ti) * edge))
            # midpoint rule correction is O(f''(K+1/2) / 24)
            f_edge = math.exp(-ti * (edge ** 2 + c))
            corr_err = abs(f_edge) * (ti * edge * a) ** 2 / 24 + abs(f_edge) * ti * a * a / 24
        else:
            ks = np.arange(K + 1, K + 20001, dtype=float)
            tail = float(np.sum(np.exp(-ti * ((a * ks + b) ** weyl_exponent + c))))
            corr_err = math.exp(-ti * ((a * (K + 20000) + b) ** weyl_exponent + c))
        err = resid * ti * tail + corr_err + 1e-16 * direct
        val = direct + tail
        if tail > 0.5 * val or err > rtol * max(val, 1e-300):
            if ti * mus[-1] < 5:
                raise TailDominates(
                    f"t = {ti:g}: computed spectrum decays only to "
                    f"exp(-{ti * mus[-1]:.2f})"
                )
        vals[i] = val
        errs[i] = err
    return HeatSamples(t, vals, errs)


def fit_heat(samples: HeatSamples, J: int = 4, m: int = 2, n_dim: int = 1,
             log_caps: Sequence[int] | None = None) -> FitResult:
    """Least squares in {t^{(j-n)/m}} (plus optional t^{j/m} log^k t columns).

    Term (j, 0) carries exponent (j - n)/m; log columns are indexed by k >= 1
    at exponent j/m when enabled.  Per-coefficient drift across half-windows
    of the t-range flags coefficients that merely absorb off-model tails.
    """
    t = samples.t
    vals = samples.values.astype(complex)

    def build(ts):
        cols = [ts ** ((j - n_dim) / m) for j in range(J + 1)]
        labels = [(j, 0) for j in range(J + 1)]
        if log_caps:
            lt = np.log(ts)
            for j, cap in enumerate(log_caps):
                for k in range(1, cap + 1):
                    cols.append(ts ** (j / m) * lt ** k)
                    labels.append((j, k))
        return np.column_stack(cols), labels

    X, labels = build(t)
    w = 1.0 / np.maximum(np.abs(vals), 1e-300)
    coef, resid, cond = _weighted_lstsq(X, vals, w)
    drift: dict = {}
    lt = np.log(t)
    width = 0.7 * (lt.max() - lt.min())
    per_label = {lab: [] for lab in labels}
    for s0 in np.linspace(lt.min(), lt.max() - width, 3):
        mask = (lt >= s0 - 1e-12) & (lt <= s0 + width + 1e-12)
        if np.sum(mask) < len(labels) + 2:
            continue
        Xw, _ = build(t[mask])
        cw, _, _ = _weighted_lstsq(Xw, vals[mask], w[mask])
        for lab, v in zip(labels, cw):
            per_label[lab].append(v)
    for lab, vs in per_label.items():
        if len(vs) >= 2:
            vs = np.asarray(vs)
            drift[f"{lab[0]},{lab[1]}"] = float(np.max(np.abs(vs - np.mean(vs))) * 2)
    terms = tuple((j, k, complex(cf)) for (j, k), cf in zip(labels, coef))
    return FitResult(terms, tuple(log_caps or [0] * (J + 1)), float(resid),
                     float(cond), drift)


def zeta_report(eigs: Sequence[float], heat_fit: FitResult,
                s_grid: Sequence[float] | None = None,
                weyl_exponent: float = 2.0, m: int = 2, n_dim: int = 1,
                residue_tol: float = 1e-3) -> dict:
    """Spectral zeta values and the pole table implied by the heat expansion.

    zeta(s) = sum mu_k^{-s} converges for Re s > n/m and is evaluated there
    directly with a Hurwitz-zeta tail; on the closed half-plane the
    meromorphic data comes from the fitted heat coefficients: the term
    a_j t^{(j-n)/m} contributes a candidate pole at s = (n-j)/m with residue
    a_j / Gamma(s), suppressed at nonpositive integers by the Gamma factor.
    """
    mus = np.asarray(sorted(np.real(eigs)), dtype=float)
    if np.any(mus <= 0):
        raise ValueError("zeta summary needs a positive spectrum")
    K = len(mus)
    a, b, c, resid = _weyl_fit(mus, weyl_exponent)

    def zeta_direct(s: float) -> tuple[float, float]:
        direct = float(np.sum(mus ** (-s)))
        # tail sum_{k>K} ((a k + b)^e + c)^{-s}, expanded in c
        q = K + 1 + b / a
        e = weyl_exponent
        tail = a ** (-e * s) * float(hurwitz_zeta(e * s, q))
        tail += -s * c * a ** (-e * s - e) * float(hurwitz_zeta(e * s + e, q))
        tail += (s * (s + 1) / 2) * c * c * a ** (-e * s - 2 * e) \
            * float(hurwitz_zeta(e * s + 2 * e, q))
        err = abs(c) ** 3 * a ** (-e * s - 3 * e) * float(hurwitz_zeta(e * s + 3 * e, q))
        err += resid * s * float(np.sum(mus[K // 2:] ** (-s - 1))) / max(K // 2, 1)
        err += 1e-10 * s * direct  # eigenvalue accuracy floor
        return direct + tail, err + 1e-15 * abs(direct)

    poles = []
    unresolved = []
    for j, k, alpha in heat_fit.terms:
        if k != 0:
            continue
        s_j = (n_dim - j) / m
        a_j = alpha.real
        uncertainty = heat_fit.window_drift.get(f"{j},0", 0.0) \
            + heat_fit.residual_norm * max(1.0, abs(a_j))
        if s_j <= 0 and abs(s_j - round(s_j)) < 1e-12:
            continue  # Gamma pole kills the zeta pole
        if abs(a_j) <= max(residue_tol * 0.1, uncertainty):
            if abs(a_j) > residue_tol * 0.1:
                unresolved.append({"s": s_j, "coefficient": a_j,
                                   "uncertainty": uncertainty})
            continue
        residue = a_j / math.exp(gammaln(s_j)) if s_j > 0 else \
            a_j * _reciprocal_gamma(s_j)
        poles.append({
            "s": s_j, "residue": residue,
            "residue_uncertainty": 3 * uncertainty,
            "double": False,
        })
    log_terms = [(j, k, al) for j, k, al in heat_fit.terms
                 if k >= 1 and abs(al) > residue_tol]
    for j, k, al in log_terms:
        poles.append({"s": -j / m, "residue": al.real, "double": True,
                      "residue_uncertainty": heat_fit.residual_norm})

    values = []
    if s_grid is not None:
        for s in s_grid:
            s = float(s)
            if s > n_dim / m + 1e-9:
                v, e = zeta_direct(s)
                values.append({"s": s, "zeta": v, "error": e, "method": "direct"})
            else:
                values.append({"s": s, "zeta": None, "error": None,
                               "method": "continuation-pole-data-only"})
    return {
        "poles": sorted(poles, key=lambda p: -p["s"]),
        "unresolved": unresolved,
        "values": values,
        "lattice": [(n_dim - kk) / m for kk in range(0, 2 * m + 3)],
        "weyl_model": {"a": a, "b": b, "c": c, "fit_residual": resid},
    }


def _reciprocal_gamma(s: float) -> float:
    from scipy.special import rgamma
    return float(rgamma(s))
