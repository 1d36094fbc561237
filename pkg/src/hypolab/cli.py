"""Command-line driver: assemble, certify, bound, evolve, simulate and report.

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, apply_overrides, config_from_mapping, load_config, parse_alpha_grid
from .errors import NumericalError, ValidationError

OUTPUT_ROOT_ENV = "HYPOLAB_OUTPUT_ROOT"
ARTIFACT_KINDS = ("assemble", "check-hypo", "rate-bound", "evolve", "sde", "sweep-alpha")


# serialization ---------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def write_csv(path: Path, rows: list[dict]) -> Path:
    """Rows of scalars to CSV with 17 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if rows:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([_cell(v) for v in r.values()])
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(out: Path, sub: str, cfg: ExperimentConfig, artifacts: list[Path], canonical: bool,
                   started: Optional[str]) -> Path:
    payload = {
        "subcommand": sub,
        "code_version": __version__,
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.digest(),
        "artifacts": sorted(str(p.relative_to(out)) for p in artifacts),
    }
    if not canonical:
        payload["started_at"] = started
        payload["finished_at"] = _now()
    return write_json(out / f"manifest-{sub}.json", payload)


def config_from_manifest(path: Path) -> ExperimentConfig:
    """Re-parse the configuration embedded in a manifest."""
    data = json.loads(Path(path).read_text())
    return config_from_mapping(data["config"], str(path))


# pipeline pieces -------------------------------------------------------------

def _model(cfg: ExperimentConfig, alpha: Optional[float] = None):
    from .model import ModelParams, potential_from_id

    params = ModelParams(cfg.params.alpha if alpha is None else alpha, cfg.params.beta, cfg.params.d)
    return params, potential_from_id(cfg.potential, cfg.params.d)


def _operators(cfg: ExperimentConfig, alpha: Optional[float] = None):
    from .operators import assemble

    params, pot = _model(cfg, alpha)
    return assemble(params, pot, cfg.truncation.n_x, cfg.truncation.n_w)


def _certified(cfg: ExperimentConfig, ops):
    from .hypo import certify

    return certify(ops, poincare=cfg.ledger.poincare, c_hyp=cfg.ledger.c_hyp)


def _truncation_meta(cfg: ExperimentConfig) -> dict:
    return {"n_x": cfg.truncation.n_x, "n_w": cfg.truncation.n_w, "potential": cfg.potential}


def _initial_vector(ops, ic: str) -> np.ndarray:
    from .sde import observable_from_id

    if ic.startswith("random:"):
        rng = np.random.default_rng(int(ic.split(":", 1)[1]))
        return rng.standard_normal(ops.dim)
    return ops.coefficients(observable_from_id(ic))


def _sde_config(cfg: ExperimentConfig, alpha: Optional[float] = None):
    from .sde import EQUILIBRIUM, PointLaw, SdeConfig

    params, pot = _model(cfg, alpha)
    s = cfg.sde
    d = cfg.params.d
    if isinstance(s.initial, list):
        law = PointLaw(tuple(s.initial[:d]), tuple(s.initial[d:]))
    else:
        law = EQUILIBRIUM
    return SdeConfig(params, pot, s.scheme, s.dt, s.n_paths, s.horizon, s.seed, law, s.n_records)


def cmd_assemble(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    from .operators import dense, dump_coo

    ops = _operators(cfg)
    files = dump_coo(ops, out / "operators")
    A, S, L = dense(ops.A), dense(ops.S), dense(ops.L)
    summary = {
        "kind": "assemble", "dim": ops.dim, "n_x": ops.n_x, "n_w": ops.n_w,
        "antisymmetry_residual": float(np.max(np.abs(A + A.T))),
        "symmetry_residual": float(np.max(np.abs(S - S.T))),
        "L_one_residual": float(np.max(np.abs(L @ ops.one))),
        "one_L_residual": float(np.max(np.abs(ops.one @ L))),
        "A_max": float(np.max(np.abs(A))),
    }
    return files + [write_json(out / "assemble.json", summary)]


def cmd_check_hypo(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    from .hypo import hypo_report

    ops = _operators(cfg)
    consts = _certified(cfg, ops)
    report = hypo_report(ops, consts)
    payload = {"kind": "check-hypo", "conditions": report, "constants": consts.to_dict(),
               "all_hold": all(r["holds"] for r in report), "truncation": _truncation_meta(cfg)}
    return [write_json(out / "hypo.json", payload)]


def cmd_rate_bound(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    from .ratebound import build_ledger, optimal_alpha, sweep_table

    grid = parse_alpha_grid(args.alpha_grid or cfg.ledger.alpha_grid)
    upsilon = args.upsilon if args.upsilon is not None else cfg.ledger.upsilon
    ops = _operators(cfg)
    consts = _certified(cfg, ops)
    lam, beta = consts.poincare_lambda, cfg.params.beta
    c_hyp = args.c_hyp if args.c_hyp is not None else consts.c2
    ledger = build_ledger(lam, beta, c_hyp, cfg.params.alpha, upsilon)
    rows = sweep_table(lam, beta, c_hyp, upsilon, grid)
    payload = {"kind": "rate-bound", "ledger": ledger.to_dict(), "alpha_star": optimal_alpha(ledger),
               "constants": consts.to_dict(), "truncation": _truncation_meta(cfg),
               "grid": {"n": len(rows), "min_nu2": min(r["nu2"] for r in rows)}}
    return [write_csv(out / "rate_bound.csv", rows), write_json(out / "ledger.json", payload)]


def cmd_evolve(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    from .evolution import DENSE_EIG_CAP, entropy_dissipation_check, evolve, gronwall_check, spectral_gap
    from .ratebound import build_ledger

    ev = cfg.evolution
    ops = _operators(cfg)
    consts = _certified(cfg, ops)
    ledger = build_ledger(consts.poincare_lambda, cfg.params.beta, consts.c2, cfg.params.alpha, cfg.ledger.upsilon)
    horizon = ev.horizon or 20.0 / ledger.nu2
    times = np.linspace(0.0, horizon, ev.n_times)
    g = _initial_vector(ops, ev.initial_condition)
    trace = evolve(ops, g, times, ev.stepper, ev.dt, ledger=ledger, initial_condition_id=ev.initial_condition)
    n0 = trace.deviation_norms[0]
    viol_nu = int(np.sum(trace.deviation_norms > ledger.envelope(times, "nu") * n0))
    viol_kappa = int(np.sum(trace.deviation_norms > ledger.envelope(times, "kappa") * n0))
    gap = spectral_gap(ops)["gap"] if ops.dim - 1 <= DENSE_EIG_CAP else None
    try:
        dissip = entropy_dissipation_check(ops, ledger, trace)
    except NumericalError as exc:
        dissip = {"error": str(exc)}
    summary = {
        "kind": "evolve", "initial_condition": ev.initial_condition, "stepper": ev.stepper,
        "horizon": horizon, "fitted_rate": trace.fitted_rate, "fit_window": list(trace.fit_window),
        "spectral_gap": gap, "nu1": ledger.nu1, "nu2": ledger.nu2, "kappa1": ledger.kappa1,
        "kappa2": ledger.kappa2, "kappa": ledger.kappa, "epsilon": ledger.epsilon,
        "envelope_violations_nu": viol_nu, "envelope_violations_kappa": viol_kappa,
        "rate_at_least_nu2": (None if math.isnan(trace.fitted_rate) else trace.fitted_rate >= ledger.nu2),
        "rate_at_most_gap": (None if gap is None or math.isnan(trace.fitted_rate)
                             else trace.fitted_rate <= gap * 1.01),
        "gronwall": gronwall_check(ledger, trace), "entropy_dissipation": dissip,
        "truncation": _truncation_meta(cfg),
    }
    return [write_csv(out / "evolve.csv", trace.rows(ledger)), write_json(out / "evolve.json", summary)]


def cmd_sde(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    from .sde import EQUILIBRIUM, simulate, simulate_overdamped, trace_rate

    scfg = _sde_config(cfg)
    run = simulate_overdamped if cfg.sde.overdamped else simulate
    trace = run(scfg, [cfg.sde.observable])[0]
    rate, rate_se = trace_rate(trace)
    z = np.abs(trace.means - trace.target) / np.where(trace.std_errors > 0, trace.std_errors, np.inf)
    summary = {
        "kind": "sde", "observable": cfg.sde.observable, "target": trace.target,
        "overdamped": cfg.sde.overdamped, "scheme": cfg.sde.scheme,
        "equilibrium_start": scfg.initial_law == EQUILIBRIUM,
        "fitted_rate": rate, "rate_std_error": rate_se,
        "final_mean": float(trace.means[-1]), "final_std_error": float(trace.std_errors[-1]),
        "final_z": float(z[-1]), "std_errors_finite": bool(np.all(np.isfinite(trace.std_errors))),
    }
    return [write_csv(out / "sde.csv", trace.rows()), write_json(out / "sde.json", summary)]


def _sweep_job(cfg_json: str, alpha: float, lam: float, c_hyp: float, subdir: str) -> dict:
    from .sde import alpha_sweep

    cfg = config_from_mapping(json.loads(cfg_json))
    scfg = _sde_config(cfg, alpha)
    traces = []
    row = alpha_sweep(scfg, [alpha], cfg.sde.observable, Lambda=lam, c_hyp=c_hyp, upsilon=cfg.ledger.upsilon,
                      traces=traces)[0]
    sub = Path(subdir)
    write_csv(sub / "langevin.csv", traces[0][1].rows())
    write_csv(sub / "overdamped.csv", traces[0][2].rows())
    write_json(sub / "row.json", row)
    return row


def cmd_sweep_alpha(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    alphas = sorted(args.alphas if args.alphas else cfg.sweep.alphas)
    jobs = args.jobs or cfg.sweep.jobs
    ops = _operators(cfg, 1.0)
    consts = _certified(cfg, ops)
    lam, c_hyp = consts.poincare_lambda, consts.c2
    cfg_json = cfg.canonical_json()
    subdirs = [out / "sweep" / f"alpha_{i:03d}" for i in range(len(alphas))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_job, cfg_json, a, lam, c_hyp, str(s)) for a, s in zip(alphas, subdirs)]
            rows = [f.result() for f in futures]
    else:
        rows = [_sweep_job(cfg_json, a, lam, c_hyp, str(s)) for a, s in zip(alphas, subdirs)]
    rates = [r["fitted_rate_langevin"] for r in rows]
    payload = {"kind": "sweep-alpha", "rows": rows, "poincare": lam, "c_hyp": c_hyp,
               "interior_maximum": (len(rates) >= 3 and all(np.isfinite(rates))
                                    and 0 < int(np.argmax(rates)) < len(rates) - 1)}
    files = [out / "sweep" / f"alpha_{i:03d}" / n for i in range(len(alphas)) for n in ("langevin.csv", "overdamped.csv", "row.json")]
    return files + [write_csv(out / "sweep_alpha.csv", rows), write_json(out / "sweep_alpha.json", payload)]


# report ----------------------------------------------------------------------

def _checks(kind: str, a: dict) -> list[tuple[str, bool]]:
    if kind == "assemble":
        tol = 1e-12 * max(a["A_max"], 1.0)
        return [("A antisymmetric", a["antisymmetry_residual"] <= tol),
                ("L annihilates constants", max(a["L_one_residual"], a["one_L_residual"]) <= 1e-12)]
    if kind == "check-hypo":
        return [(f"{r['condition']} holds", bool(r["holds"])) for r in a["conditions"]]
    if kind == "rate-bound":
        lg = a["ledger"]
        return [("nu2 positive on grid", a["grid"]["min_nu2"] > 0),
                ("kappa1 <= nu1", lg["kappa1"] <= lg["nu1"]), ("kappa2 >= nu2", lg["kappa2"] >= lg["nu2"])]
    if kind == "evolve":
        out = [("zero nu-envelope violations", a["envelope_violations_nu"] == 0),
               ("zero kappa-envelope violations", a["envelope_violations_kappa"] == 0),
               ("gronwall entropy decay", bool(a["gronwall"]["holds"]))]
        if a.get("rate_at_least_nu2") is not None:
            out.append(("fitted rate >= nu2", bool(a["rate_at_least_nu2"])))
        if a.get("rate_at_most_gap") is not None:
            out.append(("fitted rate <= spectral gap + 1%", bool(a["rate_at_most_gap"])))
        if "holds" in a.get("entropy_dissipation", {}):
            out.append(("entropy dissipation >= kappa", bool(a["entropy_dissipation"]["holds"])))
        return out
    if kind == "sde":
        out = [("finite standard errors", bool(a["std_errors_finite"]))]
        if a["equilibrium_start"]:
            out.append(("stationary within 3 standard errors", a["final_z"] <= 3.0))
        return out
    if kind == "sweep-alpha":
        return [("rate maximal at interior alpha", bool(a["interior_maximum"]))]
    return []


def cmd_report(directory: Path, canonical: bool) -> Path:
    if not directory.is_dir():
        raise ValidationError(f"no artifacts found: {directory} is not a directory")
    found = []
    for p in sorted(directory.rglob("*.json")):
        if p.name.startswith("manifest-") or p.name == "summary.json":
            continue
        try:
            data = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(data, dict) and data.get("kind") in ARTIFACT_KINDS:
            found.append((p, data))
    if not found:
        raise ValidationError(f"no artifacts found in {directory}")
    checks = []
    for p, data in found:
        for name, ok in _checks(data["kind"], data):
            checks.append({"artifact": str(p.relative_to(directory)), "kind": data["kind"], "check": name,
                           "pass": bool(ok)})
    summary = {"artifacts": [str(p.relative_to(directory)) for p, _ in found], "checks": checks,
               "all_pass": all(c["pass"] for c in checks), "code_version": __version__}
    if not canonical:
        summary["generated_at"] = _now()
    return write_json(directory / "summary.json", summary)


# entry point -----------------------------------------------------------------

COMMANDS = {
    "assemble": cmd_assemble,
    "check-hypo": cmd_check_hypo,
    "rate-bound": cmd_rate_bound,
    "evolve": cmd_evolve,
    "sde": cmd_sde,
    "sweep-alpha": cmd_sweep_alpha,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypolab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hypolab {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="YAML experiment file (defaults: harmonic experiment)")
        p.add_argument("-o", "--output", help=f"output directory (default: config, then ${OUTPUT_ROOT_ENV})")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set params.alpha=2")
        p.add_argument("--canonical", action="store_true", help="omit timestamps for byte-stable output")
        return p

    common(subs.add_parser("assemble", help="assemble and dump the Galerkin operators"))
    common(subs.add_parser("check-hypo", help="check the four hypocoercivity conditions"))
    p = common(subs.add_parser("rate-bound", help="rate ledger and nu2 sweep"))
    p.add_argument("--alpha-grid", help="lo:hi:n[:lin|log], linear spacing by default")
    p.add_argument("--upsilon", type=float)
    p.add_argument("--c-hyp", type=float, help="override the certified c2 constant")
    p = common(subs.add_parser("evolve", help="evolve a deviation and compare with the rate envelope"))
    p.add_argument("--stepper", choices=["krylov-expm", "crank-nicolson"])
    p.add_argument("--initial", help="observable id or random:SEED")
    p = common(subs.add_parser("sde", help="Monte Carlo observable decay"))
    p.add_argument("--n-paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", choices=["baoab", "euler-maruyama"])
    p.add_argument("--overdamped", action="store_true")
    p = common(subs.add_parser("sweep-alpha", help="Langevin and overdamped rates across damping values"))
    p.add_argument("--alphas", type=lambda s: [float(a) for a in s.split(",")], help="comma-separated list")
    p.add_argument("--jobs", type=int)
    p = subs.add_parser("report", help="summarize the artifacts in a directory")
    p.add_argument("directory", nargs="?")
    p.add_argument("--canonical", action="store_true")
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = {
        "stepper": "evolution.stepper", "initial": "evolution.initial_condition",
        "n_paths": "sde.n_paths", "seed": "sde.seed", "scheme": "sde.scheme",
    }
    out = [f"{key}={json.dumps(getattr(args, attr))}" for attr, key in pairs.items()
           if getattr(args, attr, None) is not None]
    if getattr(args, "overdamped", False):
        out.append("sde.overdamped=true")
    return out


def output_dir(args, cfg: Optional[ExperimentConfig]) -> Path:
    if getattr(args, "output", None):
        return Path(args.output)
    if cfg is not None and cfg.output.directory:
        return Path(cfg.output.directory)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        stem = Path(args.config).stem if getattr(args, "config", None) else "default"
        return Path(root) / stem
    return Path("hypolab-out")


def run(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            directory = Path(args.directory) if args.directory else output_dir(args, None)
            path = cmd_report(directory, args.canonical)
            print(path)
            return 0
        started = _now()
        cfg = load_config(args.config)
        overrides = list(args.overrides) + _flag_overrides(args)
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        out = output_dir(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = COMMANDS[args.command](cfg, out, args)
        manifest = write_manifest(out, args.command, cfg, artifacts, args.canonical, started)
        for p in artifacts + [manifest]:
            print(p)
        return 0
    except ValidationError as exc:
        print(f"hypolab {args.command}: validation error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"hypolab {args.command}: numerical error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
