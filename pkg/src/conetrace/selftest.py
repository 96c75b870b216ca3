"""Built-in acceptance suite.

Reference operator: the half-line family x^{-2}((xD_x)^2 + nu^2) on (0, 1]
with Dirichlet at x = 1, acting in L^2(x dx); it is unitarily equivalent to
-d^2/dx^2 + (nu^2 - 1/4)/x^2 on L^2(dx), so eigenvalues, traces, heat sums
and zeta values all have classical closed forms to check against.  Each
criterion prints one pass/fail line; `conetrace selftest` exits nonzero when
any fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import (
    RaySamples,
    detect_logs,
    fit_expansion,
    fit_heat,
    heat_trace,
    sample_ray,
    zeta_report,
)
from .domain_geometry import (
    domain_from_columns,
    friedrichs_domain,
    generator,
    is_stationary,
    kappa_matrix,
    stationary_domains,
)
from .ode_engine import SpectralProblem, TraceSample, eigen_trace
from .operator_core import LogPowerFunction, apply_symbolic, build_operator
from .theta_map import e_step, tail_residual, theta_inverse


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    runtime: float
    details: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} criterion {self.index} ({self.name}) [{self.runtime:.1f}s]"


_cache: dict = {}


def _bessel(nu: float):
    key = ("op", nu)
    if key not in _cache:
        _cache[key] = build_operator(2, [[nu * nu], [0.0], [1.0]])
    return _cache[key]


def _problem(which: str):
    key = ("prob", which)
    if key not in _cache:
        A = _bessel(0.5)
        if which == "friedrichs":
            W = friedrichs_domain(A)
        elif which == "neumann":
            W = domain_from_columns(A, [0, 1], "span{x^-1/2}")
        elif which == "mixed":
            W = domain_from_columns(A, [1, 1], "span{x^-1/2 + x^1/2}")
        else:
            raise KeyError(which)
        _cache[key] = SpectralProblem(A, W)
    return _cache[key]


def _eigs40() -> list[float]:
    if "eigs40" not in _cache:
        prob = _problem("friedrichs")
        hi = (40.6 * np.pi) ** 2
        _cache["eigs40"] = [e.real for e in prob.eigenvalues_interval(0.0, hi, 45)]
    return _cache["eigs40"]


def _ray(which: str) -> RaySamples:
    key = ("ray", which)
    if key not in _cache:
        prob = _problem(which)
        _cache[key] = sample_ray(prob.A, prob.domain, 1, [1.0], np.pi,
                                 10.0, 1e5, 40, prob.num)
    return _cache[key]


def _check(details: list[str], ok: bool, msg: str) -> bool:
    details.append(("ok  " if ok else "BAD ") + msg)
    return ok


# ---------------------------------------------------------------------------

def criterion_1() -> CriterionResult:
    """Bessel eigenvalues: Dirichlet-type (k pi)^2, Neumann-type ((k-1/2) pi)^2."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    prob = _problem("friedrichs")
    eigs = prob.eigenvalues_interval(0.0, (10.6 * np.pi) ** 2, 10)
    exact = [(k * np.pi) ** 2 for k in range(1, 11)]
    rel = max(abs(e.real - x) / x for e, x in zip(eigs, exact)) if len(eigs) == 10 else np.inf
    ok &= _check(details, len(eigs) == 10 and rel <= 1e-8,
                 f"Dirichlet-type: 10 eigenvalues, max rel err {rel:.2e} <= 1e-8")
    probn = _problem("neumann")
    eigsn = probn.eigenvalues_interval(0.0, (10.1 * np.pi) ** 2, 10)
    exactn = [((k - 0.5) * np.pi) ** 2 for k in range(1, 11)]
    reln = max(abs(e.real - x) / x for e, x in zip(eigsn, exactn)) if len(eigsn) == 10 else np.inf
    ok &= _check(details, len(eigsn) == 10 and reln <= 1e-8,
                 f"Neumann-type: 10 eigenvalues, max rel err {reln:.2e} <= 1e-8")
    dt = time.perf_counter() - t0
    ok &= _check(details, dt < 10.0, f"runtime {dt:.1f}s < 10s")
    return CriterionResult(1, "eigenvalues", bool(ok), dt, details)


def criterion_2() -> CriterionResult:
    """Point traces at lambda = -1 against cotangent/tangent identities."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    targets = [
        ("friedrichs", 1, (1.0 / np.tanh(1.0) - 1.0) / 2.0, 0.1565176),
        ("neumann", 1, np.tanh(1.0) / 2.0, 0.3807970),
    ]
    budget_ok = True
    for which, ell, oracle, stated in targets:
        t1 = time.perf_counter()
        s = _problem(which).green_trace(-1.0, ell)
        dt1 = time.perf_counter() - t1
        budget_ok &= dt1 < 5.0
        ok &= _check(details, abs(s.value - oracle) <= 1e-6 and abs(oracle - stated) < 1e-6,
                     f"{which} ell={ell}: {s.value.real:.9f} vs {oracle:.9f} (+-1e-6)")
    # ell = 2: -S'(1)/2 for S(a) = (a coth a - 1)/(2 a^2), by partial fractions
    oracle2 = sum(1.0 / (k * k * np.pi * np.pi + 1.0) ** 2 for k in range(1, 400000))
    t1 = time.perf_counter()
    s2 = _problem("friedrichs").green_trace(-1.0, 2)
    budget_ok &= (time.perf_counter() - t1) < 5.0
    ok &= _check(details, abs(s2.value - oracle2) <= 1e-6 and abs(oracle2 - 0.0092743) < 1e-6,
                 f"friedrichs ell=2: {s2.value.real:.9f} vs {oracle2:.9f} (+-1e-6)")
    dt = time.perf_counter() - t0
    ok &= _check(details, budget_ok, "each point under 5s")
    return CriterionResult(2, "point traces", bool(ok), dt, details)


def criterion_3() -> CriterionResult:
    """Ray expansion along theta0 = pi and domain independence of alpha_00."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    t1 = time.perf_counter()
    ray_f = _ray("friedrichs")
    dt_ray = time.perf_counter() - t1
    fit_f = fit_expansion(ray_f, J=4)
    a00, a10, a11 = fit_f.coefficient(0, 0), fit_f.coefficient(1, 0), fit_f.coefficient(1, 1)
    ok &= _check(details, abs(a00 - 0.5) <= 1e-3, f"alpha_00 = {a00.real:.6f} (0.5 +- 1e-3)")
    ok &= _check(details, abs(a10 + 0.5) <= 1e-2, f"alpha_10 = {a10.real:.6f} (-0.5 +- 1e-2)")
    ok &= _check(details, abs(a11) <= 1e-3, f"alpha_11 = {a11.real:.2e} (0 +- 1e-3)")
    high = max(abs(fit_f.coefficient(j, 0)) for j in (2, 3, 4))
    ok &= _check(details, high < 1e-3, f"max |alpha_j0|, j>=2: {high:.2e} < 1e-3")
    ray_n = _ray("neumann")
    fit_n = fit_expansion(ray_n, J=4)
    b00, b10 = fit_n.coefficient(0, 0), fit_n.coefficient(1, 0)
    ok &= _check(details, abs(b00 - 0.5) <= 1e-3, f"neumann alpha_00 = {b00.real:.6f}")
    ok &= _check(details, abs(b10) <= 1e-2, f"neumann alpha_10 = {b10.real:.2e} (0 +- 1e-2)")
    delta = abs(a00 - b00)
    ok &= _check(details, delta < 2e-3, f"domain independence |delta alpha_00| = {delta:.2e} < 2e-3")
    dt = time.perf_counter() - t0
    ok &= _check(details, dt_ray < 120.0, f"40-sample ray in {dt_ray:.1f}s < 120s")
    return CriterionResult(3, "ray expansion", bool(ok), dt, details)


def criterion_4() -> CriterionResult:
    """Log placement: no logs for the x-independent operator, injected log found."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    ray = _ray("friedrichs")
    m0 = detect_logs(ray, 0)
    ok &= _check(details, m0 == 0, f"m_0 = {m0} (expected 0: no logs below order n)")
    for j in (1, 2, 3, 4):
        mj = detect_logs(ray, j)
        ok &= _check(details, mj == 0, f"m_{j} = {mj} (x-independent coefficients)")
    injected = tuple(
        TraceSample(s.lam, s.ell, s.value + 0.1 * np.log(abs(s.lam)) / abs(s.lam),
                    s.method, s.error_estimate)
        for s in ray.samples
    )
    ray_inj = RaySamples(ray.theta0, ray.ell, ray.phi, "injected", injected)
    k = detect_logs(ray_inj, 1)
    ok &= _check(details, k == 1, f"injected 0.1 r^-1 log r detected with k = {k}")
    dt = time.perf_counter() - t0
    return CriterionResult(4, "log placement", bool(ok), dt, details)


def criterion_5() -> CriterionResult:
    """Tail recursion: vanishing for x-independent coefficients, the Frobenius
    oracle value for the x-perturbed operator, and the residual-gain check."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    A = _bessel(0.5)
    for sigma0 in (-0.5j, 0.5j):
        psi = LogPowerFunction.monomial(sigma0)
        tail = theta_inverse(A, psi, ell=3)
        ok &= _check(details, len(tail.steps) == 0,
                     f"x-independent: tail of x^{{i({sigma0})}} empty")
    c = 1.0
    Ap = build_operator(2, [[0.25, c], [0.0], [1.0]])
    psi = LogPowerFunction.monomial(-0.5j)  # x^{1/2}, nu = 1/2
    e1 = e_step(Ap, -0.5j, 1, psi, [psi])
    coeff = e1.coeffs_at(-1.5j)
    gamma = c / (2 * 0.5 + 1)  # independent recursion: (P0 + c x)(x^nu + g x^{nu+1}) = O(x^{nu+2})
    err = abs(coeff[0] - gamma) if coeff else np.inf
    ok &= _check(details, err <= 1e-12,
                 f"e_step(x^1/2) = {coeff[0].real if coeff else np.nan:.12f} x^3/2 vs {gamma} (err {err:.1e})")
    for sigma0, label in ((-0.5j, "x^1/2"), (0.5j, "x^-1/2")):
        tail = theta_inverse(Ap, LogPowerFunction.monomial(sigma0), ell=3)
        upto = min(3, len(tail.steps)) if tail.steps else 0
        resid = tail_residual(Ap, tail, max(1, max(t for t, _ in tail.steps))) \
            if tail.steps else {}
        worst = max(resid.values(), default=0.0)
        ok &= _check(details, worst <= 1e-10,
                     f"residual gain for {label}: max step residual {worst:.2e}")
    dt = time.perf_counter() - t0
    return CriterionResult(5, "tail recursion", bool(ok), dt, details)


def criterion_6() -> CriterionResult:
    """Scaling geometry: stationary lines, Friedrichs stationarity, group laws."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    A = _bessel(0.5)
    lines = stationary_domains(A, 1)
    ok &= _check(details, len(lines) == 2,
                 f"nu=1/2: {len(lines)} stationary lines (expected 2)")
    A0 = build_operator(2, [[0.0], [0.0], [1.0]])
    lines0 = stationary_domains(A0, 1)
    ok &= _check(details, len(lines0) == 1,
                 f"nu=0: {len(lines0)} stationary line (expected 1)")
    for op in (A, A0):
        fd = friedrichs_domain(op)
        ok &= _check(details, is_stationary(op, fd),
                     f"friedrichs domain of depth-{op.depth} operator is stationary")
    rng = np.random.default_rng(7)
    worst_group = 0.0
    for _ in range(6):
        r1, r2 = np.exp(rng.uniform(np.log(0.1), np.log(10), size=2))
        delta = kappa_matrix(A, r1) @ kappa_matrix(A, r2) - kappa_matrix(A, r1 * r2)
        worst_group = max(worst_group, float(np.max(np.abs(delta))))
    ok &= _check(details, worst_group <= 1e-10, f"group law residual {worst_group:.2e} <= 1e-10")
    from scipy.linalg import expm
    kd = generator(A)
    worst_exp = max(
        float(np.max(np.abs(expm(np.log(rho) * kd.T) - kappa_matrix(A, rho))))
        for rho in (2.0, np.e)
    )
    ok &= _check(details, worst_exp <= 1e-8, f"exp(log rho T) residual {worst_exp:.2e} <= 1e-8")
    dt = time.perf_counter() - t0
    ok &= _check(details, dt < 1.0, f"runtime {dt:.2f}s < 1s")
    return CriterionResult(6, "stationarity geometry", bool(ok), dt, details)


def criterion_7() -> CriterionResult:
    """Nonstationary domain: leading coefficient, partial-model residual decay,
    and the drift signature of a forced full fit."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    ray_m = _ray("mixed")
    partial = fit_expansion(ray_m, J=1, terms=[(0, 0), (1, 1)])
    a00 = partial.coefficient(0, 0)
    ok &= _check(details, abs(a00 - 0.5) <= 2e-3, f"alpha_00 = {a00.real:.6f} (0.5 +- 2e-3)")
    r = ray_m.r
    model = sum(a * r ** ((1 - j) / 2.0 - 1) * np.log(r) ** k
                for j, k, a in partial.terms)
    resid = np.abs(ray_m.values - model)
    bound = 1.5 * resid[0] * r[0]
    ok &= _check(details, bool(np.all(resid * r <= bound + 1e-12)),
                 f"partial-model residual bounded by {bound:.3f} / r on the range")
    forced_m = fit_expansion(ray_m, J=1)
    forced_f = fit_expansion(_ray("friedrichs"), J=1)
    dm = forced_m.window_drift.get("1,0", np.inf)
    df = forced_f.window_drift.get("1,0", np.inf)
    ratio = dm / max(df, 1e-300)
    ok &= _check(details, ratio >= 10.0,
                 f"forced alpha_10 drift ratio {ratio:.1f} >= 10 (mixed {dm:.2e} vs friedrichs {df:.2e})")
    dt = time.perf_counter() - t0
    return CriterionResult(7, "nonstationary signature", bool(ok), dt, details)


def criterion_8() -> CriterionResult:
    """Heat trace and zeta summary from the computed spectrum."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    eigs = _eigs40()
    hs = heat_trace(eigs, [0.01])
    # theta-function value: 1/(2 sqrt(pi t)) - 1/2 + O(exp(-1/t))
    ok &= _check(details, abs(hs.values[0] - 2.3209482) <= 1e-6,
                 f"heat(0.01) = {hs.values[0]:.8f} (2.3209482 +- 1e-6)")
    t_grid = np.geomspace(5e-3, 0.08, 25)
    hf = fit_heat(heat_trace(eigs, t_grid), J=4)
    a0 = hf.coefficient(0, 0).real
    ok &= _check(details, abs(a0 - 0.2820948) <= 1e-4,
                 f"fitted a_0 = {a0:.7f} (1/(2 sqrt(pi)) +- 1e-4)")
    zr = zeta_report(eigs, hf, s_grid=[1.0])
    z1 = zr["values"][0]["zeta"]
    ok &= _check(details, abs(z1 - 1.0 / 6.0) <= 1e-8,
                 f"zeta(1) = {z1:.12f} (1/6 +- 1e-8)")
    in_band = [p for p in zr["poles"] if 0 < p["s"] <= 1]
    ok &= _check(details, len(in_band) == 1 and abs(in_band[0]["s"] - 0.5) < 1e-12,
                 f"single pole in (0,1] at s = {in_band[0]['s'] if in_band else None}")
    res = in_band[0]["residue"] if in_band else np.inf
    ok &= _check(details, abs(res - 1 / (2 * np.pi)) <= 0.02 * (1 / (2 * np.pi)),
                 f"residue {res:.6f} (1/(2 pi) +- 2%)")
    lattice = {round(2 * s) for s in (np.arange(0, 8) * (-0.5) + 0.5)}
    off = [p for p in zr["poles"] if round(2 * p["s"]) not in lattice]
    ok &= _check(details, not off, "no poles off the half-integer lattice")
    spurious = [p for p in zr["poles"] if p["s"] not in (0.5,)]
    ok &= _check(details, not spurious,
                 "no spurious confident poles at s = 0, -1/2, ... beyond tolerance")
    dt = time.perf_counter() - t0
    ok &= _check(details, dt < 60.0, f"runtime {dt:.1f}s < 60s")
    return CriterionResult(8, "heat trace and zeta", bool(ok), dt, details)


def criterion_9() -> CriterionResult:
    """Cross-method agreement and resolvent-calculus identities."""
    t0 = time.perf_counter()
    details: list[str] = []
    ok = True
    prob = _problem("friedrichs")
    eigs = _eigs40()
    worst = 0.0
    for r in np.geomspace(1.0, 300.0, 10):
        g = prob.green_trace(-r, 1)
        e = eigen_trace(eigs, -r, 1, rtol=1e-3)
        gap = abs(g.value - e.value)
        budget = g.error_estimate + e.error_estimate
        worst = max(worst, gap / max(budget, 1e-300))
        if gap > budget:
            ok = _check(details, False,
                        f"lambda=-{r:.1f}: |green - eigen| = {gap:.2e} > {budget:.2e}") and ok
    ok &= _check(details, worst <= 1.0,
                 f"green vs eigen within combined error on 10 ray points (worst ratio {worst:.2f})")
    t1m = prob.green_trace(-1.0, 1)
    t2m = prob.green_trace(-2.0, 1)
    pair = prob.trace_pair(-1.0, -2.0)
    resid = abs(t1m.value - t2m.value - (-1.0 - -2.0) * pair.value)
    quad_tol = 10 * (t1m.error_estimate + t2m.error_estimate + pair.error_estimate) + 1e-12
    ok &= _check(details, resid <= quad_tol,
                 f"resolvent identity at (-1,-2): residual {resid:.2e} <= {quad_tol:.2e}")
    h = 1e-4
    fd = (prob.green_trace(-1.0 + h, 1).value - prob.green_trace(-1.0 - h, 1).value) / (2 * h)
    ell2 = prob.green_trace(-1.0, 2).value
    rel = abs(fd - ell2) / abs(ell2)
    ok &= _check(details, rel <= 1e-4,
                 f"d/dlambda trace vs ell=2 trace: rel diff {rel:.2e} <= 1e-4")
    dt = time.perf_counter() - t0
    return CriterionResult(9, "cross-method invariants", bool(ok), dt, details)


ALL_CRITERIA = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9,
]


def run_all(verbose: bool = True) -> list[CriterionResult]:
    results = []
    for fn in ALL_CRITERIA:
        res = fn()
        results.append(res)
        if verbose:
            print(res.line())
            for d in res.details:
                print("   ", d)
    if verbose:
        n_pass = sum(r.passed for r in results)
        print(f"{n_pass}/{len(results)} acceptance criteria passed")
    return results
