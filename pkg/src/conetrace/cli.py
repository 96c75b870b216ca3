"""Command-line front end: config parsing, subcommands, reports.

Subcommands (all driven by a JSON config; defaults are printed by --help):

    conetrace analyze    --config cfg.json     boundary spectrum, singular
                                               functions, tails, quotient dim
    conetrace domains    --config cfg.json     scaling generator, stationarity
                                               verdicts, Friedrichs resolution
    conetrace trace-ray  --config cfg.json     resolvent traces along a ray
                                               (CSV + report)
    conetrace fit        --config cfg.json     expansion fit of a sample CSV
    conetrace zeta       --config cfg.json     eigenvalues, heat trace, zeta
                                               pole table
    conetrace selftest                         run the acceptance criteria

Exit codes: 0 success, 1 numerical/acceptance failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConetraceError, ConfigError
from .domain_geometry import (
    DomainSpec,
    canonical_basis,
    domain_from_columns,
    domain_max,
    domain_min,
    friedrichs_domain,
    generator,
    is_stationary,
    stationary_domains,
)
from .indicial import boundary_spectrum, max_domain_dimension, strip_sigma
from .ode_engine import Numerics, SpectralProblem
from .operator_core import ConeOperator, build_operator, has_x_independent_coefficients
from .theta_map import theta_matrix
from .asymptotics import (
    fit_expansion,
    fit_heat,
    heat_trace,
    read_samples_csv,
    sample_ray,
    write_samples_csv,
    zeta_report,
)

_CONFIG_BLOCKS = {"operator", "domain", "sector", "ray", "numerics", "spectral", "output"}

_DEFAULTS = {
    "domain": {"preset": "friedrichs", "columns": None, "label": None},
    "sector": {"theta0_deg": 180.0, "halfwidth_deg": 5.0},
    "ray": {"r_min": 10.0, "r_max": 1e4, "points": 40, "ell": 1, "phi": [1.0],
            "fit_max_order": 4, "fit_log_caps": None, "samples_csv": None},
    "numerics": {"x_match": 0.1, "series_order": 40, "rel_tol": 1e-10,
                 "quad_panels": 24, "rank_tol": 1e-8},
    "spectral": {"eigen_count": 40, "t_min": 5e-3, "t_max": 0.08, "t_points": 25,
                 "s_grid": [1.0]},
    "output": {"dir": ".", "samples_csv": "samples.csv",
               "report_json": "report.json", "plot": False},
}


@dataclass
class AnalysisConfig:
    operator: dict
    domain: dict = field(default_factory=lambda: dict(_DEFAULTS["domain"]))
    sector: dict = field(default_factory=lambda: dict(_DEFAULTS["sector"]))
    ray: dict = field(default_factory=lambda: dict(_DEFAULTS["ray"]))
    numerics: dict = field(default_factory=lambda: dict(_DEFAULTS["numerics"]))
    spectral: dict = field(default_factory=lambda: dict(_DEFAULTS["spectral"]))
    output: dict = field(default_factory=lambda: dict(_DEFAULTS["output"]))
    config_hash: str = ""


def _merge_block(name: str, given: dict) -> dict:
    base = dict(_DEFAULTS[name])
    for key, val in given.items():
        if key not in base:
            raise ConfigError(f"unknown key {key!r} in config block {name!r}")
        base[key] = val
    return base


def load_config(path) -> AnalysisConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _CONFIG_BLOCKS
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
    if "operator" not in raw:
        raise ConfigError("config must contain an 'operator' block")
    op = raw["operator"]
    for key in op:
        if key not in {"m", "depth", "coeff", "right_bc"}:
            raise ConfigError(f"unknown key {key!r} in config block 'operator'")
    if "m" not in op or "coeff" not in op:
        raise ConfigError("operator block needs 'm' and 'coeff'")
    cfg = AnalysisConfig(
        operator=dict(op),
        domain=_merge_block("domain", raw.get("domain", {})),
        sector=_merge_block("sector", raw.get("sector", {})),
        ray=_merge_block("ray", raw.get("ray", {})),
        numerics=_merge_block("numerics", raw.get("numerics", {})),
        spectral=_merge_block("spectral", raw.get("spectral", {})),
        output=_merge_block("output", raw.get("output", {})),
    )
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    cfg.config_hash = hashlib.sha256(canon.encode()).hexdigest()[:16]
    return cfg


def resolve_operator(cfg: AnalysisConfig) -> ConeOperator:
    op = cfg.operator
    right_bc = op.get("right_bc", "dirichlet")
    if isinstance(right_bc, list):
        right_bc = np.array([[_entry(v) for v in row] for row in right_bc])
    try:
        A = build_operator(int(op["m"]), op["coeff"], right_bc)
    except ConetraceError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad operator block: {exc}") from exc
    depth = op.get("depth")
    if depth is not None:
        A = A.with_depth(int(depth))
    return A


def _entry(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def resolve_domain(cfg: AnalysisConfig, A: ConeOperator) -> DomainSpec:
    block = cfg.domain
    preset = block.get("preset")
    label = block.get("label")
    if block.get("columns") is not None:
        cols = np.array([[_entry(v) for v in col] for col in block["columns"]]).T
        return domain_from_columns(A, cols, label or "custom")
    if preset == "min":
        return domain_min(A)
    if preset == "max":
        return domain_max(A)
    if preset in (None, "friedrichs"):
        return friedrichs_domain(A)
    raise ConfigError(f"unknown domain preset {preset!r}")


def resolve_numerics(cfg: AnalysisConfig) -> Numerics:
    n = cfg.numerics
    return Numerics(
        x_match=float(n["x_match"]), series_order=int(n["series_order"]),
        rel_tol=float(n["rel_tol"]), quad_panels=int(n["quad_panels"]),
        rank_tol=float(n["rank_tol"]),
    )


# ---------------------------------------------------------------------------
# report helpers
# ---------------------------------------------------------------------------

def _fmt(obj):
    """15-significant-digit floats, complex as [re, im]; deterministic output."""
    if isinstance(obj, dict):
        return {k: _fmt(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.15g}")
    if isinstance(obj, (np.complexfloating, complex)):
        return [float(f"{obj.real:.15g}"), float(f"{obj.imag:.15g}")]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    return obj


def write_report(cfg: AnalysisConfig, payload: dict, out_path: Path) -> dict:
    report = {
        "config_hash": cfg.config_hash,
        "version": __version__,
        **payload,
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(_fmt(report), sort_keys=True, indent=1) + "\n")
    return report


def _root_entry(r) -> dict:
    return {"sigma0": [r.sigma0.real, r.sigma0.imag], "multiplicity": r.multiplicity}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_analyze(cfg: AnalysisConfig, out_dir: Path) -> dict:
    A = resolve_operator(cfg)
    theta = theta_matrix(A)
    payload = {
        "command": "analyze",
        "order": A.m,
        "depth": A.depth,
        "spec_b": [_root_entry(r) for r in boundary_spectrum(A)],
        "strip": [_root_entry(r) for r in strip_sigma(A)],
        "quotient_dimension": max_domain_dimension(A),
        "x_independent_coefficients": has_x_independent_coefficients(A),
        "singular_basis": [
            {"sigma0": [s.real, s.imag], "log_power": k}
            for s, k in theta.basis_keys
        ],
        "theta_tails": [t.to_dict() for t in theta.tails],
    }
    if max_domain_dimension(A) == 0:
        payload["note"] = "D_min = D_max: the closed extension is unique"
    return write_report(cfg, payload, out_dir / cfg.output["report_json"])


def cmd_domains(cfg: AnalysisConfig, out_dir: Path) -> dict:
    A = resolve_operator(cfg)
    kd = generator(A)
    d = kd.T.shape[0]
    verdicts = []
    W = resolve_domain(cfg, A)
    if 0 < W.codim_basis < d:
        verdicts.append({"label": W.label, "stationary": is_stationary(A, W)})
    else:
        verdicts.append({"label": W.label, "stationary": True})
    lines = []
    if d > 1:
        try:
            for spec in stationary_domains(A, d - 1):
                lines.append(spec.to_dict())
        except ConetraceError as exc:
            lines = f"not finite: {exc}"
    friedrichs_block = None
    try:
        fd = friedrichs_domain(A)
        friedrichs_block = {**fd.to_dict(), "stationary": is_stationary(A, fd)
                            if 0 < fd.codim_basis < d else True}
    except ConetraceError as exc:
        friedrichs_block = {"error": f"{type(exc).__name__}: {exc}"}
    payload = {
        "command": "domains",
        "generator_matrix": [[ [v.real, v.imag] for v in row] for row in kd.T],
        "configured_domain": verdicts,
        "stationary_lines": lines,
        "friedrichs": friedrichs_block,
    }
    return write_report(cfg, payload, out_dir / cfg.output["report_json"])


def cmd_trace_ray(cfg: AnalysisConfig, out_dir: Path, threads: int = 1) -> dict:
    A = resolve_operator(cfg)
    W = resolve_domain(cfg, A)
    num = resolve_numerics(cfg)
    ray_cfg = cfg.ray
    theta0 = float(cfg.sector["theta0_deg"]) * np.pi / 180.0
    halfwidth = float(cfg.sector["halfwidth_deg"]) * np.pi / 180.0
    phi = [float(np.real(_entry(v))) for v in ray_cfg["phi"]]
    if threads > 1:
        ray = _sample_ray_parallel(cfg, A, W, num, theta0, halfwidth, phi, threads)
    else:
        ray = sample_ray(A, W, int(ray_cfg["ell"]), phi, theta0,
                         float(ray_cfg["r_min"]), float(ray_cfg["r_max"]),
                         int(ray_cfg["points"]), num, halfwidth)
    csv_path = out_dir / cfg.output["samples_csv"]
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_samples_csv(csv_path, ray)
    payload = {
        "command": "trace-ray",
        "domain": W.label,
        "theta0_deg": cfg.sector["theta0_deg"],
        "ell": ray.ell,
        "phi": list(ray.phi),
        "samples_csv": str(csv_path),
        "n_samples": len(ray.samples),
        "failures": [{"r": r, "error": msg} for r, msg in ray.failures],
    }
    if cfg.output.get("plot"):
        payload["plot_svg"] = _plot_ray(ray, out_dir, None)
    return write_report(cfg, payload, out_dir / cfg.output["report_json"])


def _ray_worker(args):
    (op_block, dom_cols, basis, num_kwargs, lam, ell, phi) = args
    A = build_operator(op_block["m"], op_block["coeff"], op_block.get("right_bc", "dirichlet"))
    W = DomainSpec(tuple(basis), np.array(dom_cols), "worker")
    prob = SpectralProblem(A, W, Numerics(**num_kwargs))
    try:
        s = prob.green_trace(lam, ell, phi)
        return (abs(lam), s.value, s.error_estimate, None)
    except Exception as exc:
        return (abs(lam), None, None, f"{type(exc).__name__}: {exc}")


def _sample_ray_parallel(cfg, A, W, num, theta0, halfwidth, phi, threads):
    from concurrent.futures import ProcessPoolExecutor
    from .operator_core import check_parameter_ellipticity
    from .errors import SectorNotAdmissible
    from .ode_engine import TraceSample
    from .asymptotics import RaySamples

    if not check_parameter_ellipticity(A, (theta0, min(halfwidth, 1e-3))):
        raise SectorNotAdmissible("ray meets the symbol rays of the operator")
    ray_cfg = cfg.ray
    rs = np.geomspace(float(ray_cfg["r_min"]), float(ray_cfg["r_max"]),
                      int(ray_cfg["points"]))
    lams = [complex(-r) if abs(theta0 - np.pi) < 1e-12 else r * np.exp(1j * theta0)
            for r in rs]
    op_block = {"m": A.m, "coeff": [[complex(v) for v in row] for row in A.coeff],
                "right_bc": A.right_bc}
    num_kwargs = {k: getattr(num, k) for k in (
        "x_match", "series_order", "rel_tol", "quad_panels", "rank_tol")}
    jobs = [(op_block, W.W.tolist(), list(W.basis_order), num_kwargs,
             lam, int(ray_cfg["ell"]), phi) for lam in lams]
    samples, failures = [], []
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for (r, val, err, msg), lam in zip(pool.map(_ray_worker, jobs), lams):
            if msg is None:
                samples.append(TraceSample(lam, int(ray_cfg["ell"]), val, "green", err))
            else:
                failures.append((r, msg))
    return RaySamples(theta0, int(ray_cfg["ell"]), tuple(phi), W.label,
                      tuple(samples), tuple(failures))


def _plot_ray(ray, out_dir: Path, fit) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(ray.r, np.abs(ray.values), "o", ms=4, label="|trace|")
    if fit is not None:
        rr = np.geomspace(ray.r.min(), ray.r.max(), 200)
        model = np.zeros_like(rr, dtype=complex)
        for j, k, a in fit.terms:
            model += a * rr ** ((1 - j) / 2.0 - ray.ell) * np.log(rr) ** k
        ax.loglog(rr, np.abs(model), "-", lw=1, label="fit")
    ax.set_xlabel("r = |lambda|")
    ax.set_ylabel("|Tr|")
    ax.legend()
    path = out_dir / "trace_ray.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    return str(path)


def cmd_fit(cfg: AnalysisConfig, out_dir: Path) -> dict:
    A = resolve_operator(cfg)
    ray_cfg = cfg.ray
    theta0 = float(cfg.sector["theta0_deg"]) * np.pi / 180.0
    csv_path = ray_cfg.get("samples_csv") or (out_dir / cfg.output["samples_csv"])
    phi = [float(np.real(_entry(v))) for v in ray_cfg["phi"]]
    ray = read_samples_csv(csv_path, theta0, int(ray_cfg["ell"]), phi)
    caps = ray_cfg.get("fit_log_caps")
    fit = fit_expansion(ray, int(ray_cfg["fit_max_order"]),
                        caps, m=A.m)
    payload = {"command": "fit", "samples_csv": str(csv_path), **fit.to_dict()}
    if cfg.output.get("plot"):
        payload["plot_svg"] = _plot_ray(ray, out_dir, fit)
    return write_report(cfg, payload, out_dir / cfg.output["report_json"])


def cmd_zeta(cfg: AnalysisConfig, out_dir: Path) -> dict:
    A = resolve_operator(cfg)
    W = resolve_domain(cfg, A)
    num = resolve_numerics(cfg)
    sp = cfg.spectral
    prob = SpectralProblem(A, W, num)
    count = int(sp["eigen_count"])
    # Weyl-style upper bound for the scan window
    s_hi = (count + 1.5) * np.pi / max(1e-6, _wavenumber_integral(A))
    eigs = [e.real for e in prob.eigenvalues_interval(0.0, s_hi ** A.m, count)]
    if len(eigs) < max(8, count // 2):
        raise ConetraceError(f"found only {len(eigs)} eigenvalues in the scan window")
    t_grid = np.geomspace(float(sp["t_min"]), float(sp["t_max"]), int(sp["t_points"]))
    hs = heat_trace(eigs, t_grid, weyl_exponent=float(A.m))
    hf = fit_heat(hs, J=4, m=A.m)
    zr = zeta_report(eigs, hf, s_grid=sp["s_grid"], weyl_exponent=float(A.m), m=A.m)
    payload = {
        "command": "zeta",
        "domain": W.label,
        "eigenvalues": eigs,
        "heat_fit": hf.to_dict(),
        "zeta": zr,
    }
    return write_report(cfg, payload, out_dir / cfg.output["report_json"])


def _wavenumber_integral(A: ConeOperator) -> float:
    grid = np.linspace(0.0, 1.0, 101)
    lead = np.abs(np.polynomial.polynomial.polyval(grid, A.coeff[A.m]))
    return float(np.trapezoid(lead ** (-1.0 / A.m), grid))


def cmd_selftest() -> int:
    from .selftest import run_all
    results = run_all()
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conetrace",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Config defaults:\n" + json.dumps(_DEFAULTS, indent=1),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analyze", "domains", "trace-ray", "fit", "zeta"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--plot", action="store_true", help="emit SVG plots")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for lambda sampling")
    sub.add_parser("selftest")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output["dir"] = args.out
        if args.plot:
            cfg.output["plot"] = True
        out_dir = Path(cfg.output["dir"])
        if args.command == "analyze":
            cmd_analyze(cfg, out_dir)
        elif args.command == "domains":
            cmd_domains(cfg, out_dir)
        elif args.command == "trace-ray":
            cmd_trace_ray(cfg, out_dir, threads=args.threads)
        elif args.command == "fit":
            cmd_fit(cfg, out_dir)
        elif args.command == "zeta":
            cmd_zeta(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConetraceError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
