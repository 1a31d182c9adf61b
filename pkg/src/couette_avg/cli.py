"""Command-line entry points: simulate, frozen-stats, averaged, sweep, audit, report.

Every subcommand reads a TOML config (see README for the schema), writes into
a run directory and exits with 0 on success, 2 on a validation failure and 3
on numerical blow-up.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .averaged import holder_diagnostics, make_drift, nonlinear_growth, solve_averaged
from .checkpoint import save_field
from .config import SimConfig, ValidationError
from .dynamics import BlowUpError, LinearPropagator, ShearState, step_background, step_pseudo_linearized
from .energy import EnergyConstants, dissipation, energy_forms, energy_neq, fitted_decay_rate, inequality_audit
from .frozen import assemble_frozen, estimate_bbar0, lyapunov_covariance
from .noise import RngStream, trace_norms
from .spectral import ConfigurationError, SpectralField

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP = 0, 2, 3


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, SpectralField):
        return None
    raise TypeError(type(o).__name__)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or os.environ.get(harness.ENV_OUTPUT) or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    doc = harness.load_document(args.config)
    return doc, harness.config_from_document(doc)


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    doc, cfg = _load(args)
    out = _out_dir(args, doc.get("run", {}).get("output_dir", "runs/simulate"))
    variant = args.variant or doc.get("run", {}).get("variant", "fast_slow")
    variants = harness.VARIANTS if variant == "all" else (variant,)
    if any(v not in harness.VARIANTS for v in variants):
        raise ValidationError([f"variant: unknown variant {variant!r}"])
    entry = harness.PlanEntry(cfg, tuple(variants), harness.initial_from_document(doc))
    diags: list[dict] = []
    snaps: dict = {}
    path = args.path if args.path is not None else int(doc.get("run", {}).get("path", 0))
    rec = harness.run_path(entry, path, diagnostics=diags, snapshots=snaps)
    harness.write_config_copy(doc, out)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for d in diags:
            fh.write(json.dumps(d, sort_keys=True, default=_json_default) + "\n")
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    for name in ("X", "Xtilde", "Xhat", "Xbar"):
        for i, row in enumerate(snaps.get(name, [])):
            f = SpectralField.zeros(cfg.nx, cfg.ny)
            f.coeffs[cfg.nx] = row
            save_field(ck / f"{name}_{i:05d}.cavg", f)
    _dump(out / "results.json", rec)
    print(f"simulate: {len(diags)} diagnostic records written to {out}")
    if rec["blowup"] is not None:
        print(f"blow-up in {rec['blowup']['variant']} at t={rec['blowup']['t']:.6g}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_frozen_stats(args) -> int:
    doc, cfg = _load(args)
    fz = doc.get("frozen", {})
    if "nu" in fz:
        cfg = cfg.replace(nu=float(fz["nu"])).validate()
    out = _out_dir(args, doc.get("run", {}).get("output_dir", "runs/frozen"))
    spec = cfg.noise_spec()
    shear = ShearState.couette(cfg.nx, cfg.ny)
    op = assemble_frozen(shear, None, spec, cfg)
    g = lyapunov_covariance(op)
    (out / "covariance.cavg").write_bytes(g.to_bytes())
    method = fz.get("method", "exact")
    est = estimate_bbar0(shear, None, spec, cfg, RngStream(cfg.seed, 0, "frozen-stats"),
                         int(fz.get("nsamples", 2000)), method)
    (out / "bbar0.json").write_text(est.to_json())
    H = energy_forms(cfg.nx, cfg.ny, cfg.nu, EnergyConstants.from_config(cfg))[cfg.nx + 1:]
    res = {"lyapunov_residual": g.residual, "spectral_abscissae": op.abscissae(),
           "decay_rate": op.decay_rate(), "mean_energy_neq": g.mean_energy_terms(H),
           "psi_trace_norm_sq": trace_norms(spec)[0], "bbar0_method": method, "nu": cfg.nu}
    harness.write_config_copy(doc, out)
    _dump(out / "results.json", res)
    print(f"frozen-stats: Lyapunov residual {g.residual:.3e}; written to {out}")
    return EXIT_OK


def _background_path(cfg: SimConfig, seed_path: int = 0):
    spec = cfg.noise_spec()
    rng = RngStream(cfg.seed, seed_path, "path").spawn("shear")
    shear = ShearState.couette(cfg.nx, cfg.ny)
    path = [shear]
    for _ in range(cfg.n_steps):
        shear = step_background(shear, cfg.dt, rng, spec, cfg.coefficients)
        path.append(shear)
    return path


def cmd_averaged(args) -> int:
    doc, cfg = _load(args)
    out = _out_dir(args, doc.get("run", {}).get("output_dir", "runs/averaged"))
    X0, _ = harness.initial_from_document(doc).fields(cfg.nx, cfg.ny)
    shears = _background_path(cfg)

    def shear_at(t):
        return shears[min(int(math.floor(t / cfg.dt + 1e-9)), len(shears) - 1)]

    drift = make_drift(cfg.noise_spec(), cfg)
    run = solve_averaged(X0, shear_at, cfg, drift)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    for i, snap in enumerate(run.snapshots):
        save_field(ck / f"Xbar_{i:05d}.cavg", snap)
    run.cache.save(out / "bbar0_cache.json")
    deltas = [cfg.delta / 2, cfg.delta, 2 * cfg.delta]
    res = {"times": run.times, "flags": run.flags, "max_step_error": max(run.error_estimates, default=0.0),
           "holder": holder_diagnostics(run, deltas, cfg), "growth": nonlinear_growth(run, cfg)}
    harness.write_config_copy(doc, out)
    _dump(out / "results.json", res)
    print(f"averaged: {len(run.times)} snapshots written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = harness.load_document(args.plan)
    plan = harness.plan_from_document(doc, paths=args.paths)
    if args.out:
        plan.output_dir = args.out
    if args.workers:
        plan.workers = args.workers
    result = harness.run_sweep(plan, resume=not args.no_resume)
    out = Path(os.environ.get(harness.ENV_OUTPUT, plan.output_dir))
    harness.write_config_copy(doc, out)
    s = result.summary
    for row in s["per_nu"]:
        print(f"nu={row['nu']:g}: mean sup error {row['mean_sup_error']}, "
              f"{row['n_ok']}/{row['n_paths']} paths ok")
    print(f"log-log slope: {s['loglog_slope']}")
    return EXIT_OK


def linear_decay_audit(cfg: SimConfig, t_end: float = 1.0, seed: int = 0) -> dict:
    """Noise-free, nonlinearity-free evolution around U = y from a random datum."""
    coeffs = cfg.coefficients
    lin = type(coeffs)(coeffs.diffusion, coeffs.advection, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    g = np.random.default_rng(seed)
    Y = SpectralField.zeros(cfg.nx, cfg.ny)
    pos = g.standard_normal((cfg.nx, cfg.ny)) + 1j * g.standard_normal((cfg.nx, cfg.ny))
    pos /= np.arange(1, cfg.ny + 1) ** 2
    Y.coeffs[cfg.nx + 1:] = pos
    Y.coeffs[:cfg.nx] = np.conj(pos[::-1])
    X = SpectralField.zeros(cfg.nx, cfg.ny)
    shear = ShearState.couette(cfg.nx, cfg.ny)
    consts = EnergyConstants.from_config(cfg)
    n = int(round(t_end / cfg.dt))
    prop = LinearPropagator.build(shear, lin, cfg.dt)
    ts, Es, Ds = [], [], []
    for i in range(n + 1):
        if i % cfg.snapshot_stride == 0:
            ts.append(i * cfg.dt)
            Es.append(energy_neq(Y, cfg.nu, consts))
            Ds.append(dissipation(Y, cfg.nu, cfg.gamma, consts).total_neq)
        if i < n:
            X, Y = step_pseudo_linearized(X, Y, shear, lin, cfg.dt, None, propagator=prop)
    return fitted_decay_rate(ts, Es, cfg, Ds)


def random_records(cfg: SimConfig, resolutions, n_random: int, seed: int = 0) -> list[dict]:
    g = np.random.default_rng(seed)
    recs = []
    for ny in resolutions:
        for _ in range(n_random):
            Y = SpectralField.zeros(cfg.nx, ny)
            pos = (g.standard_normal((cfg.nx, ny)) + 1j * g.standard_normal((cfg.nx, ny)))
            pos /= np.arange(1, ny + 1) ** 1.5
            Y.coeffs[cfg.nx + 1:] = pos
            Y.coeffs[:cfg.nx] = np.conj(pos[::-1])
            X = SpectralField.zeros(cfg.nx, ny)
            X.coeffs[cfg.nx] = g.standard_normal(ny) / np.arange(1, ny + 1) ** 1.5
            recs.append({"X": X, "Y": Y, "ny": ny})
    return recs


def cmd_audit(args) -> int:
    doc, cfg = _load(args)
    au = doc.get("audit", {})
    out = _out_dir(args, doc.get("run", {}).get("output_dir", "runs/audit"))
    decay = linear_decay_audit(cfg)
    res_list = au.get("resolutions", [cfg.ny // 2, cfg.ny, 2 * cfg.ny])
    audit = inequality_audit(random_records(cfg, res_list, int(au.get("n_random", 20)), cfg.seed), cfg)
    audit["linear_decay"] = decay
    audit["passed"] = bool(audit["passed"] and decay["delta_star"] is not None and decay["delta_star"] > 0)
    harness.write_config_copy(doc, out)
    _dump(out / "results.json", audit)
    print(f"audit: {'PASS' if audit['passed'] else 'FAIL'}; fitted delta_* = {decay['delta_star']}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    paths = sorted((run / "paths").glob("*.json"))
    if not paths:
        raise ValidationError([f"run: no path records found under {run / 'paths'}"])
    records = [json.loads(p.read_text()) for p in paths]
    summary = harness.summarize(records)
    harness.plot_sweep(summary, run / "sweep.svg")
    lines = ["| nu | paths ok | mean sup error | 95% CI | coupling fraction |", "|---|---|---|---|---|"]
    for r in summary["per_nu"]:
        ci = r["ci95"] or (None, None)
        lines.append(f"| {r['nu']:g} | {r['n_ok']}/{r['n_paths']} | {r['mean_sup_error']} | "
                     f"[{ci[0]}, {ci[1]}] | {r['coupling_fraction']} |")
    lines.append("")
    lines.append(f"log-log slope: {summary['loglog_slope']}; monotone: {summary['monotone_non_increasing']}")
    (run / "report.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="couette-avg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one coupled path")
    s.add_argument("--config", required=True)
    s.add_argument("--variant", choices=harness.VARIANTS + ("all",))
    s.add_argument("--path", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("frozen-stats", help="stationary covariance and averaged drift")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_frozen_stats)

    s = sub.add_parser("averaged", help="solve the averaged slow equation")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_averaged)

    s = sub.add_parser("sweep", help="ensemble over viscosities")
    s.add_argument("--plan", required=True)
    s.add_argument("--paths", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.add_argument("--no-resume", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("audit", help="measure the energy inequalities")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("report", help="regenerate summary and SVG for a sweep directory")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except harness.tomllib.TOMLDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BlowUpError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
