"""Experiment orchestration: coupled path runs, viscosity sweeps, persistence
and plots.

A path run advances the fast-slow, pseudo-linearized and auxiliary systems on
one shared realization of the noise (the same increments Psi dW for every
variant and one background shear path), then solves the averaged equation on
that shear path, and reports sup-in-time differences of the slow fields.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .averaged import make_drift, solve_averaged
from .config import DEFAULT_NUS, SimConfig, ValidationError
from .dynamics import (
    BlowUpError,
    FrozenInputs,
    PropagatorCache,
    ShearState,
    step_auxiliary,
    step_background,
    step_fast_slow,
    step_pseudo_linearized,
)
from .energy import Monitor, h0_fractional_norm, h0_norm, sobolev_norm
from .noise import RngStream, sample_dW, trace_norms
from .spectral import SpectralField

VARIANTS = ("fast_slow", "pseudo_lin", "auxiliary", "averaged")
SCHEMA_VERSION = 1
ENV_OUTPUT = "COUETTE_AVG_OUTPUT_DIR"
ENV_THREADS = "COUETTE_AVG_THREADS"


# ---------------------------------------------------------------------------
# initial data and plans


@dataclass(frozen=True)
class InitialData:
    """Zero-mode initial datum X0 = x0_amp sum_j j^{-x0_decay} e_{0,j}; Y0 = y0_amp e_{1,1} (real)."""

    x0_amp: float = 1.0
    x0_decay: float = 1.0
    y0_amp: float = 0.0

    def fields(self, nx: int, ny: int) -> tuple[SpectralField, SpectralField]:
        X0 = SpectralField.zeros(nx, ny)
        X0.coeffs[nx] = self.x0_amp * np.arange(1, ny + 1, dtype=float) ** (-self.x0_decay)
        Y0 = SpectralField.mode(1, 1, nx, ny, self.y0_amp, real=True) if self.y0_amp else SpectralField.zeros(nx, ny)
        return X0, Y0


@dataclass(frozen=True)
class PlanEntry:
    """One viscosity of an experiment plan."""

    cfg: SimConfig
    variants: tuple[str, ...] = VARIANTS
    initial: InitialData = InitialData()
    bbar0_method: str = "exact"


@dataclass
class ExperimentPlan:
    """Viscosities, seeds, variants and output location of a sweep.

    ``delta_rule`` is ``"q_star"`` (delta = nu^{q*}) or a fixed float.
    """

    nus: tuple[float, ...] = DEFAULT_NUS
    paths: int = 8
    seed: int = 0
    variants: tuple[str, ...] = VARIANTS
    delta_rule: str | float = "q_star"
    T: float = 1.0
    output_dir: str = "runs/sweep"
    base: dict = field(default_factory=dict)
    initial: InitialData = InitialData()
    workers: int = 1
    bbar0_method: str = "exact"

    def entry(self, nu: float) -> PlanEntry:
        params = dict(self.base)
        params.update(nu=nu, T=self.T, seed=self.seed)
        if self.delta_rule != "q_star":
            params["delta"] = float(self.delta_rule)
        cfg = SimConfig(**params)
        return PlanEntry(cfg, tuple(self.variants), self.initial, self.bbar0_method)

    def entries(self) -> list[PlanEntry]:
        return [self.entry(nu) for nu in self.nus]

    def validate(self) -> "ExperimentPlan":
        problems = []
        for v in self.variants:
            if v not in VARIANTS:
                problems.append(f"variants: unknown variant {v!r} (allowed {', '.join(VARIANTS)})")
        if self.paths < 1:
            problems.append(f"paths: must be at least 1 (got {self.paths})")
        try:
            for e in self.entries():
                problems += [f"nu={e.cfg.nu:g}: {p}" for p in e.cfg.problems()]
        except TypeError as exc:
            problems.append(f"sim: {exc}")
        if problems:
            raise ValidationError(problems)
        return self


# ---------------------------------------------------------------------------
# one coupled path


def _zero_row(f: SpectralField) -> np.ndarray:
    return f.coeffs[f.nx].real.copy()


def _norms(diff: SpectralField, cfg: SimConfig) -> dict[str, float]:
    return {"Hmtheta": sobolev_norm(diff.zero_mode(), -cfg.theta),
            "H0": h0_norm(diff, cfg.nu, cfg.c_a),
            "H0m12": h0_fractional_norm(diff, -0.5, cfg.nu, cfg.c_a)}


PAIRS = (("X", "Xbar"), ("X", "Xtilde"), ("Xtilde", "Xhat"), ("X", "Xhat"))


def run_path(entry: PlanEntry, path: int, *, diagnostics: list | None = None,
             snapshots: dict | None = None) -> dict:
    """Run every requested variant of one path on shared noise.

    Parameters
    ----------
    diagnostics : list, optional
        Receives the per-snapshot JSONL records of the fast-slow monitor.
    snapshots : dict, optional
        Receives the stored slow-field coefficient rows per variant.

    Returns
    -------
    dict
        Path record with sup-norm differences, stopping flags and blow-up info.
    """
    cfg = entry.cfg
    started = time.perf_counter()
    nx, ny, dt = cfg.nx, cfg.ny, cfg.dt
    spec = cfg.noise_spec()
    coeffs = cfg.coefficients
    base = RngStream(cfg.seed, path, "path")
    fast_rng, shear_rng = base.spawn("fast"), base.spawn("shear")
    X0, Y0 = entry.initial.fields(nx, ny)
    variants = [v for v in VARIANTS if v in entry.variants]
    state = {v: (X0.copy(), Y0.copy()) for v in ("fast_slow", "pseudo_lin", "auxiliary") if v in variants}
    if "auxiliary" in state and "pseudo_lin" not in state:
        state["pseudo_lin"] = (X0.copy(), Y0.copy())
    shear = ShearState.couette(nx, ny)
    shear_path = [shear.w.copy()]
    props = PropagatorCache(coeffs, maxsize=2)
    aux_props = PropagatorCache(coeffs, maxsize=2)
    monitor = Monitor(cfg, spec.psi, trace_norms(spec)[0])
    stride = cfg.snapshot_stride
    stored = {k: [] for k in ("t", "X", "Xtilde", "Xhat")}
    frozen = None
    blowup = None

    def store(t):
        stored["t"].append(t)
        for name, v in (("X", "fast_slow"), ("Xtilde", "pseudo_lin"), ("Xhat", "auxiliary")):
            if v in state:
                stored[name].append(_zero_row(state[v][0]))

    def snapshot(t, dW=None):
        snap = {"t": t, "dt": dt, "shear_h3": shear.h3_norm()}
        if "fast_slow" in state:
            snap["X"], snap["Y"] = state["fast_slow"]
        elif "pseudo_lin" in state:
            snap["X"], snap["Y"] = state["pseudo_lin"]
        if "pseudo_lin" in state:
            snap["Y_tilde"] = state["pseudo_lin"][1]
        if "auxiliary" in state:
            snap["Y_hat"] = state["auxiliary"][1]
        if dW is not None:
            snap["dW"] = dW
            snap["t_next"] = t + dt
        return snap

    store(0.0)
    if state:
        rec = monitor.step(0.0, snapshot(0.0))
        if diagnostics is not None:
            diagnostics.append(rec)
    for n in range(cfg.n_steps):
        t = n * dt
        if n % cfg.block_steps == 0 and "auxiliary" in state:
            frozen = FrozenInputs(shear, state["pseudo_lin"][0].copy(), t)
        dW = sample_dW(spec, dt, fast_rng)
        if state:
            monitor.accumulate(snapshot(t, dW))
            prop = props.get(shear, dt)
            try:
                for v in list(state):
                    X, Y = state[v]
                    if v == "fast_slow":
                        state[v] = step_fast_slow(X, Y, shear, coeffs, dt, dW, propagator=prop, t=t)
                    elif v == "pseudo_lin":
                        state[v] = step_pseudo_linearized(X, Y, shear, coeffs, dt, dW, propagator=prop, t=t)
                    else:
                        state[v] = step_auxiliary(X, Y, frozen, coeffs, dt, dW,
                                                  propagator=aux_props.get(frozen.shear, dt), t=t)
            except BlowUpError as exc:
                blowup = {"t": exc.t, "variant": exc.variant}
                break
        shear = step_background(shear, dt, shear_rng, spec, coeffs)
        shear_path.append(shear.w.copy())
        if (n + 1) % stride == 0:
            t1 = (n + 1) * dt
            store(t1)
            if state:
                rec = monitor.step(t1, snapshot(t1))
                if diagnostics is not None:
                    diagnostics.append(rec)

    averaged_flags = None
    if "averaged" in variants and blowup is None:
        W_path = np.array(shear_path)

        def shear_at(t):
            i = min(int(math.floor(t / dt + 1e-9)), len(W_path) - 1)
            W = SpectralField.zeros(nx, ny)
            W.coeffs[nx] = W_path[i]
            return ShearState(W)

        drift = make_drift(spec, cfg, entry.bbar0_method,
                           rng=base.spawn("bbar0") if entry.bbar0_method != "exact" else None)
        run = solve_averaged(X0, shear_at, cfg, drift, macro_dt=stride * dt)
        stored["Xbar"] = [_zero_row(run.at(t)) for t in stored["t"]]
        averaged_flags = dict(run.flags)

    sups: dict[str, float] = {}
    for a, b in PAIRS:
        if not (stored.get(a) and stored.get(b)):
            continue
        n_common = min(len(stored[a]), len(stored[b]))
        best = {"Hmtheta": 0.0, "H0": 0.0, "H0m12": 0.0}
        for i in range(n_common):
            d = SpectralField.zeros(nx, ny)
            d.coeffs[nx] = stored[a][i] - stored[b][i]
            for k, v in _norms(d, cfg).items():
                best[k] = max(best[k], v)
        for k, v in best.items():
            sups[f"sup_{a}_{b}_{k}"] = v
    if snapshots is not None:
        snapshots.update({k: np.array(v) for k, v in stored.items() if len(v)})
    return {
        "nu": cfg.nu,
        "path": path,
        "seed": cfg.seed,
        "delta": cfg.delta,
        "sups": sups,
        "flags": {k: v for k, v in monitor.report.first_hit.items()},
        "averaged_flags": averaged_flags,
        "blowup": blowup,
        "time_horizon_violated": cfg.violates_time_horizon(),
        "runtime_s": time.perf_counter() - started,
    }


# ---------------------------------------------------------------------------
# sweeps


def _path_file(out: Path, nu: float, path: int) -> Path:
    return out / "paths" / f"nu_{nu:.6g}_path_{path:04d}.json"


def _run_one(args) -> dict:
    entry, path, out = args
    rec = run_path(entry, path)
    if out is not None:
        f = _path_file(Path(out), entry.cfg.nu, path)
        f.parent.mkdir(parents=True, exist_ok=True)
        tmp = f.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec, sort_keys=True, indent=1))
        os.replace(tmp, f)
    return rec


def bootstrap_ci(values, n_boot: int = 2000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return (math.nan, math.nan)
    g = np.random.Generator(np.random.Philox(seed))
    means = v[g.integers(0, v.size, (n_boot, v.size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def loglog_slope(nus, values) -> float | None:
    x = np.log(np.asarray(nus, dtype=float))
    y = np.asarray(values, dtype=float)
    if len(x) < 2 or len(set(x)) < 2 or not np.all(np.isfinite(y)) or np.any(y <= 0):
        return None
    return float(np.polyfit(x, np.log(y), 1)[0])


@dataclass
class SweepResult:
    """Per-path records and per-nu ensemble statistics of a sweep."""

    records: list[dict]
    summary: dict

    def csv_text(self) -> str:
        return records_csv(self.records)


CSV_METRICS = tuple(f"sup_{a}_{b}_{k}" for a, b in PAIRS for k in ("Hmtheta", "H0", "H0m12"))
CSV_FLAGS = ("sigma", "tau_X", "tau_Y", "tau_M", "tau_M_tilde", "tau_M_hat", "tau_block", "tau")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: list[dict]) -> str:
    """RFC-4180 CSV, one row per (nu, path), no timing fields."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("nu", "path", "seed", "delta") + CSV_METRICS + tuple(f"flag_{f}" for f in CSV_FLAGS)
               + ("blowup_t", "blowup_variant"))
    for r in sorted(records, key=lambda r: (-r["nu"], r["path"])):
        b = r.get("blowup") or {}
        w.writerow([_fmt(r["nu"]), r["path"], r["seed"], _fmt(r["delta"])]
                   + [_fmt(r["sups"].get(m)) for m in CSV_METRICS]
                   + [_fmt(r["flags"].get(f)) for f in CSV_FLAGS]
                   + [_fmt(b.get("t")), b.get("variant", "")])
    return buf.getvalue()


def summarize(records: list[dict], min_paths: int = 8, seed: int = 0) -> dict:
    metric = "sup_X_Xbar_Hmtheta"
    by_nu: dict[float, list[dict]] = {}
    for r in records:
        by_nu.setdefault(r["nu"], []).append(r)
    rows = []
    for nu in sorted(by_nu, reverse=True):
        recs = sorted(by_nu[nu], key=lambda r: r["path"])
        ok = [r for r in recs if r["blowup"] is None and metric in r["sups"]]
        errs = [r["sups"][metric] for r in ok]
        coupled = [r for r in ok if "sup_X_Xtilde_Hmtheta" in r["sups"] and "sup_Xtilde_Xhat_Hmtheta" in r["sups"]]
        frac = None
        if coupled:
            frac = sum(max(r["sups"]["sup_X_Xtilde_Hmtheta"], r["sups"]["sup_Xtilde_Xhat_Hmtheta"])
                       < r["sups"][metric] for r in coupled) / len(coupled)
        triggers = {f: sum(r["flags"].get(f) is not None for r in recs) / len(recs) for f in CSV_FLAGS}
        rows.append({
            "nu": nu,
            "n_paths": len(recs),
            "n_ok": len(ok),
            "n_blowup": len(recs) - len(ok),
            "mean_sup_error": float(np.mean(errs)) if errs else None,
            "ci95": bootstrap_ci(errs, seed=seed) if errs else None,
            "coupling_fraction": frac,
            "trigger_frequency": triggers,
            "partial": len(ok) < min_paths,
        })
    means = [r["mean_sup_error"] for r in rows]
    slope = loglog_slope([r["nu"] for r in rows], means) if all(m is not None for m in means) else None
    finite = [m for m in means if m is not None]
    monotone = bool(len(finite) == len(means) and all(b <= a for a, b in zip(finite, finite[1:])))
    return {"metric": metric, "per_nu": rows, "loglog_slope": slope,
            "monotone_non_increasing": monotone,
            "partial": any(r["partial"] for r in rows)}


def run_sweep(plan: ExperimentPlan, *, resume: bool = True, write: bool = True) -> SweepResult:
    """Run every (nu, path) pair, reusing completed per-path files when resuming."""
    plan.validate()
    out = Path(os.environ.get(ENV_OUTPUT, plan.output_dir))
    workers = int(os.environ.get(ENV_THREADS, plan.workers))
    todo, records = [], []
    for entry in plan.entries():
        for p in range(plan.paths):
            f = _path_file(out, entry.cfg.nu, p)
            if resume and f.exists():
                records.append(json.loads(f.read_text()))
            else:
                todo.append((entry, p, str(out) if write else None))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records += list(pool.map(_run_one, todo))
    else:
        records += [_run_one(a) for a in todo]
    records.sort(key=lambda r: (-r["nu"], r["path"]))
    summary = summarize(records, seed=plan.seed)
    result = SweepResult(records, summary)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.csv", "w", newline="") as fh:
            fh.write(result.csv_text())
        (out / "results.json").write_text(json.dumps(
            {"summary": summary, "runtimes_s": [r["runtime_s"] for r in records]},
            indent=2, sort_keys=True))
        plot_sweep(summary, out / "sweep.svg")
    return result


def plot_sweep(summary: dict, path) -> None:
    """Static SVG of mean sup-error against nu (log-log) with bootstrap bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in summary["per_nu"] if r["mean_sup_error"] is not None]
    with matplotlib.rc_context({"svg.hashsalt": "couette-avg", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if rows:
            nus = np.array([r["nu"] for r in rows])
            means = np.array([r["mean_sup_error"] for r in rows])
            lo = np.array([r["ci95"][0] for r in rows])
            hi = np.array([r["ci95"][1] for r in rows])
            ax.errorbar(nus, means, yerr=np.vstack([means - lo, hi - means]), marker="o", capsize=3)
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel("viscosity nu")
        ax.set_ylabel("mean sup_t ||X - Xbar||_{H^-theta}")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# configuration files

SIM_KEYS = {f for f in SimConfig.__dataclass_fields__}
SECTIONS = {
    "schema_version": None,
    "sim": SIM_KEYS,
    "initial": {"x0_amp", "x0_decay", "y0_amp"},
    "run": {"variant", "output_dir", "paths", "path"},
    "sweep": {"nus", "paths", "seed", "variants", "delta_rule", "T", "workers", "output_dir",
              "bbar0_method"},
    "frozen": {"nsamples", "method", "nu"},
    "audit": {"n_random", "resolutions"},
}


def check_schema(doc: dict) -> list[str]:
    """Every unknown section/key and every wrongly typed value."""
    problems = []
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        problems.append(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
    for sec, value in doc.items():
        if sec not in SECTIONS:
            problems.append(f"{sec}: unknown section")
            continue
        if SECTIONS[sec] is None:
            continue
        if not isinstance(value, dict):
            problems.append(f"{sec}: must be a table")
            continue
        for key, v in value.items():
            if key not in SECTIONS[sec]:
                problems.append(f"{sec}.{key}: unknown key")
            elif sec == "sim":
                default = SimConfig.__dataclass_fields__[key].default
                if isinstance(default, bool) and not isinstance(v, bool):
                    problems.append(f"sim.{key}: expected a boolean")
                elif isinstance(default, (int, float)) and not isinstance(default, bool) \
                        and not isinstance(v, (int, float)):
                    problems.append(f"sim.{key}: expected a number (got {type(v).__name__})")
                elif isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float) \
                        and key in ("nx", "ny", "macro_factor", "snapshot_stride", "seed"):
                    problems.append(f"sim.{key}: expected an integer")
    sweep = doc.get("sweep", {})
    if isinstance(sweep, dict) and "nus" in sweep and not (
            isinstance(sweep["nus"], list) and all(isinstance(x, (int, float)) for x in sweep["nus"])):
        problems.append("sweep.nus: expected a list of numbers")
    return problems


def load_document(path) -> dict:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    problems = check_schema(doc)
    if problems:
        raise ValidationError(problems)
    return doc


def config_from_document(doc: dict, **overrides) -> SimConfig:
    params = dict(doc.get("sim", {}))
    params.update(overrides)
    try:
        cfg = SimConfig(**params)
    except TypeError as exc:
        raise ValidationError([f"sim: {exc}"]) from exc
    return cfg.validate()


def initial_from_document(doc: dict) -> InitialData:
    return InitialData(**doc.get("initial", {}))


def plan_from_document(doc: dict, paths: int | None = None) -> ExperimentPlan:
    sw = dict(doc.get("sweep", {}))
    base = dict(doc.get("sim", {}))
    for key in ("nu", "T", "seed"):
        base.pop(key, None)
    plan = ExperimentPlan(
        nus=tuple(sw.get("nus", DEFAULT_NUS)),
        paths=int(paths if paths is not None else sw.get("paths", 8)),
        seed=int(sw.get("seed", doc.get("sim", {}).get("seed", 0))),
        variants=tuple(sw.get("variants", VARIANTS)),
        delta_rule=sw.get("delta_rule", "q_star"),
        T=float(sw.get("T", doc.get("sim", {}).get("T", 1.0))),
        output_dir=sw.get("output_dir", "runs/sweep"),
        base=base,
        initial=initial_from_document(doc),
        workers=int(sw.get("workers", 1)),
        bbar0_method=sw.get("bbar0_method", "exact"),
    )
    return plan.validate()


def write_config_copy(doc: dict, out: Path) -> None:
    """Config copy as JSON (the parsed, validated document)."""
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def default_threads() -> int:
    return int(os.environ.get(ENV_THREADS, "1"))

