"""Command-line entry point.

Exit codes: 0 success, 1 ``compare`` found a failing quantity, 2 usage error,
3 config or validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, gene, phase, renewal
from .config import RunConfig, dump_config, load_config, parse_model, timing_to_dict, with_run_overrides
from .errors import NUMERICAL_CODES, TTSHSError
from .model import validate_model
from .phase_type import PhaseTypeMixture, fit_mixture, mean_and_cv2
from .simulator import ResetSampler, run_ensemble, steady_state_ensemble

EXIT_OK, EXIT_COMPARE_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3, 4
MC_SIGMAS = 3.0
ENGINE_MEAN_TOL = 1e-8
ENGINE_COV_RTOL = 1e-6


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def _pairs(n):
    return [(a, b) for a in range(n) for b in range(a, n)]


def _moment_columns(n, with_se):
    cols = [f"mean_{a}" for a in range(n)] + [f"cov_{a}_{b}" for a, b in _pairs(n)]
    if with_se:
        cols += [f"se_mean_{a}" for a in range(n)] + [f"se_cov_{a}_{b}" for a, b in _pairs(n)]
    return cols


def _moment_values(mean, cov, se_mean=None, se_cov=None):
    n = len(mean)
    vals = list(mean) + [cov[a, b] for a, b in _pairs(n)]
    if se_mean is not None:
        vals += list(se_mean) + [se_cov[a, b] for a, b in _pairs(n)]
    return vals


def _emit(table: dict, fmt: str, out: str | None):
    """Write a {"columns", "rows", "metadata"} table as CSV or JSON."""
    if fmt == "json":
        doc = {
            "metadata": table["metadata"],
            "columns": table["columns"],
            "rows": [[v if isinstance(v, str) else (None if not math.isfinite(float(v)) else float(v)) for v in r] for r in table["rows"]],
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table["columns"])
        for r in table["rows"]:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])
        text = buf.getvalue()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _metadata(cfg: RunConfig, command: str, **extra):
    return {"command": command, "version": __version__, **extra}


def _grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.run.t_end, cfg.run.grid_points)


def _phase_model(model, fit: bool):
    if isinstance(model.timing, PhaseTypeMixture):
        return model
    if not fit:
        return None
    return model.with_timing(fit_mixture(model.timing.mean, max(model.timing.cv2, 1e-3)))


def cmd_validate(cfg: RunConfig, args) -> int:
    report = validate_model(cfg.model, require_hurwitz=args.require_hurwitz)
    for v in report.violations:
        print(f"{v.severity.upper():7s} {v.code}: {v.message}")
    if report.ok:
        print("OK")
        return EXIT_OK
    return EXIT_CONFIG


def cmd_transient(cfg: RunConfig, args) -> int:
    model = cfg.model
    grid = _grid(cfg)
    n = model.n
    pmodel = _phase_model(model, args.fit_timing)
    meta = _metadata(cfg, "transient", method=cfg.run.method, rk_rtol=1e-8, rk_atol=1e-10)
    if pmodel is not None:
        states = phase.transient(pmodel, grid, method=cfg.run.method)
        rows = [[s.time, *_moment_values(s.mean, s.covariance)] for s in states]
        meta["engine"] = "phase"
        _emit({"columns": ["time", *_moment_columns(n, False)], "rows": rows, "metadata": meta}, cfg.run.format, cfg.run.out)
        return EXIT_OK
    t, means = renewal.transient_mean(model, grid, method=cfg.run.method)
    meta["engine"] = "renewal (mean only; covariance transients need phase-type timing, see --fit-timing)"
    rows = [[ti, *m] for ti, m in zip(t, means)]
    _emit({"columns": ["time", *[f"mean_{a}" for a in range(n)]], "rows": rows, "metadata": meta}, cfg.run.format, cfg.run.out)
    return EXIT_OK


def _engine_results(model, fit: bool) -> dict:
    out = {}
    if model.is_noise_imparting():
        out["renewal"] = renewal.steady_state(model)
    pmodel = _phase_model(model, fit)
    if pmodel is not None:
        out["phase"] = phase.steady_state(pmodel)
    if not out:
        raise TTSHSError("TIMING_NOT_PHASE_TYPE", "reset is not noise-imparting and timing is not phase-type; use --fit-timing")
    return out


def cmd_steady(cfg: RunConfig, args) -> int:
    results = _engine_results(cfg.model, args.fit_timing)
    n = cfg.model.n
    rows = [[name, *_moment_values(s.mean, s.covariance)] for name, s in results.items()]
    meta = _metadata(cfg, "steady", mean_interval=cfg.model.mean_interval)
    _emit({"columns": ["engine", *_moment_columns(n, False)], "rows": rows, "metadata": meta}, cfg.run.format, cfg.run.out)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    summary = run_ensemble(
        cfg.model, ResetSampler(cfg.run.sampler), cfg.run.paths, _grid(cfg), cfg.run.seed, threads=cfg.run.threads
    )
    n = cfg.model.n
    rows = [
        [t, *_moment_values(summary.mean[g], summary.cov[g], summary.se_mean[g], summary.se_cov[g])]
        for g, t in enumerate(summary.times)
    ]
    meta = _metadata(
        cfg, "simulate", seed=cfg.run.seed, paths=cfg.run.paths, sampler=cfg.run.sampler,
        covariance_projections=summary.projection_count,
    )
    _emit({"columns": ["time", *_moment_columns(n, True)], "rows": rows, "metadata": meta}, cfg.run.format, cfg.run.out)
    return EXIT_OK


def compare_table(model, sampler: ResetSampler, paths: int, seed: int, threads: int = 1, fit: bool = True, grid_points: int = 200):
    """Rows (quantity, engine value, simulator value, se, z, status) plus an overall flag."""
    engines = _engine_results(model, fit)
    ref_name = "phase" if "phase" in engines else "renewal"
    ref = engines[ref_name]
    sim = steady_state_ensemble(model, sampler, paths, seed, grid_points=grid_points, threads=threads).steady
    rows = []
    ok = True
    n = model.n
    for a in range(n):
        rows.append(_compare_row(f"mean_{a}", ref.mean[a], sim.mean[a], sim.se_mean[a]))
    for a, b in _pairs(n):
        rows.append(_compare_row(f"cov_{a}_{b}", ref.covariance[a, b], sim.cov[a, b], sim.se_cov[a, b]))
    if "phase" in engines and "renewal" in engines:
        p, r = engines["phase"], engines["renewal"]
        d_mean = float(np.max(np.abs(p.mean - r.mean)))
        d_cov = float(np.max(np.abs(p.covariance - r.covariance)) / max(np.max(np.abs(r.covariance)), 1e-300))
        rows.append(("engines_mean_absdiff", d_mean, None, None, None, "PASS" if d_mean <= ENGINE_MEAN_TOL else "FAIL"))
        rows.append(("engines_cov_reldiff", d_cov, None, None, None, "PASS" if d_cov <= ENGINE_COV_RTOL else "FAIL"))
    ok = all(r[-1] == "PASS" for r in rows)
    return rows, ok, ref_name


def _compare_row(name, engine, simv, se):
    z = (simv - engine) / se if se > 0 else (0.0 if simv == engine else math.inf)
    return (name, float(engine), float(simv), float(se), float(z), "PASS" if abs(z) <= MC_SIGMAS else "FAIL")


def _print_compare(rows, ref_name, out=None):
    lines = [f"{'quantity':22s} {'engine(' + ref_name + ')':>22s} {'simulator':>22s} {'se':>12s} {'z':>8s}  status"]
    for name, e, s, se, z, status in rows:
        if s is None:
            lines.append(f"{name:22s} {e:22.6g} {'':>22s} {'':>12s} {'':>8s}  {status}")
        else:
            lines.append(f"{name:22s} {e:22.10g} {s:22.10g} {se:12.4g} {z:8.3f}  {status}")
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_compare(cfg: RunConfig, args) -> int:
    rows, ok, ref_name = compare_table(
        cfg.model, ResetSampler(cfg.run.sampler), cfg.run.paths, cfg.run.seed, cfg.run.threads, fit=True,
        grid_points=cfg.run.grid_points,
    )
    if cfg.run.format == "json":
        cols = ["quantity", "engine", "simulator", "se", "z", "status"]
        table_rows = [[r[0], r[1], *(math.nan if v is None else v for v in r[2:5]), r[5]] for r in rows]
        _emit({"columns": cols, "rows": table_rows, "metadata": _metadata(cfg, "compare", seed=cfg.run.seed, paths=cfg.run.paths, reference_engine=ref_name)}, "json", cfg.run.out)
    else:
        _print_compare(rows, ref_name, cfg.run.out)
    return EXIT_OK if ok else EXIT_COMPARE_FAIL


def cmd_fit_timing(args) -> int:
    mix = fit_mixture(args.mean, args.cv2)
    if args.config:
        cfg = load_config(args.config)
        cfg = RunConfig(cfg.model.with_timing(mix), cfg.run)
        text = dump_config(cfg) + "\n"
    else:
        mean, cv2 = mean_and_cv2(mix)
        text = json.dumps({"timing": timing_to_dict(mix), "fitted_mean": mean, "fitted_cv2": cv2}, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def gene_report(params: gene.GeneModelParams, with_bursts: bool, compare: bool, paths: int, seed: int, threads: int, sampler: str):
    """Rows (source, mean, cv2, se_cv2) for one variant of the gene preset."""
    rows = []
    mean, cv2 = gene.closed_form_stats(params, with_bursts)
    rows.append(["printed closed form", mean, cv2, math.nan])
    mean, cv2 = gene.lyapunov_stats(params, with_bursts)
    rows.append(["lyapunov (hand algebra)", mean, cv2, math.nan])
    mean, cv2 = gene.engine_stats(params, with_bursts, "renewal")
    rows.append(["engine renewal", mean, cv2, math.nan])
    mean, cv2 = gene.engine_stats(params, with_bursts, "phase")
    rows.append(["engine phase", mean, cv2, math.nan])
    if compare:
        model = gene.build_ttshs(params, with_bursts)
        st = steady_state_ensemble(model, ResetSampler(sampler), paths, seed, threads=threads).steady
        m, v = st.mean[0], st.cov[0, 0]
        cv2 = v / m**2
        # delta method: d(cv2) = dv / m^2 - 2 v dm / m^3, ignoring the mean/var correlation sign
        se = math.sqrt((st.se_cov[0, 0] / m**2) ** 2 + (2.0 * v * st.se_mean[0] / m**3) ** 2)
        rows.append([f"simulator ({sampler})", m, cv2, se])
    return rows


def cmd_gene(args) -> int:
    params = gene.GeneModelParams(
        burst_rate=args.kx,
        burst_mean=args.burst_mean,
        partition_noise=args.beta,
        dilution_rate=args.gamma,
        burst_second_moment=args.burst_second_moment,
        burst_distribution=args.burst_dist,
    )
    if args.division_cv2 != 1.0:
        params = params.with_division_cv2(args.division_cv2)
    variants = [False, True] if args.bursts == "both" else [args.bursts == "on"]
    rows = []
    for wb in variants:
        for r in gene_report(params, wb, args.compare, args.paths, args.seed, args.threads, args.sampler):
            rows.append(["bursty" if wb else "deterministic", *r])
    meta = {
        "command": "gene",
        "version": __version__,
        "mean_division_time": params.division_mean_interval,
        "dilution_rate": params.dilution_rate,
        "seed": args.seed,
        "paths": args.paths if args.compare else 0,
    }
    _emit({"columns": ["production", "source", "mean", "cv2", "se_cv2"], "rows": rows, "metadata": meta}, args.format, args.out)
    return EXIT_OK


def _add_run_flags(p, sim=False):
    p.add_argument("--config", required=True, help="JSON model/run configuration")
    p.add_argument("--t-end", type=float)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help="output file (default stdout)")
    if sim:
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--sampler", choices=("gaussian", "deterministic", "binomial", "gamma"))
        p.add_argument("--threads", type=int, help="worker threads (default: all cores); never changes results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttshs", description="Exact moments of linear time-triggered stochastic hybrid systems")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--require-hurwitz", action="store_true")

    for name, helptext in (("transient", "moment trajectories"), ("steady", "stationary moments")):
        p = sub.add_parser(name, help=helptext)
        _add_run_flags(p)
        p.add_argument("--method", choices=("expm", "rk45"))
        p.add_argument("--fit-timing", action="store_true", help="fit a two-moment Erlang mixture to non-phase-type timing")

    p = sub.add_parser("simulate", help="Monte Carlo ensemble moments")
    _add_run_flags(p, sim=True)

    p = sub.add_parser("compare", help="engines vs Monte Carlo with PASS/FAIL per quantity")
    _add_run_flags(p, sim=True)

    p = sub.add_parser("fit-timing", help="two-moment Erlang-mixture fit")
    p.add_argument("--mean", type=float, required=True)
    p.add_argument("--cv2", type=float, required=True)
    p.add_argument("--config", help="rewrite this config's timing with the fit")
    p.add_argument("--out")

    p = sub.add_parser("gene", help="protein noise preset: closed forms, engines and simulator side by side")
    p.add_argument("--kx", type=float, default=10.0, help="burst rate")
    p.add_argument("--burst-mean", type=float, default=1.0)
    p.add_argument("--burst-second-moment", type=float)
    p.add_argument("--burst-dist", default="exponential", choices=("exponential", "constant", "geometric", "gamma"))
    p.add_argument("--gamma", type=float, default=1.0, help="dilution rate")
    p.add_argument("--beta", type=float, default=1.0, help="partitioning noise scale")
    p.add_argument("--division-cv2", type=float, default=1.0, help="squared CV of division intervals")
    p.add_argument("--bursts", choices=("on", "off", "both"), default="both")
    p.add_argument("--compare", action="store_true", help="also run the Monte Carlo simulator")
    p.add_argument("--paths", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--sampler", default="binomial", choices=("gaussian", "binomial", "gamma"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    return parser


_CONFIG_COMMANDS = {
    "validate": cmd_validate,
    "transient": cmd_transient,
    "steady": cmd_steady,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit-timing":
            return cmd_fit_timing(args)
        if args.command == "gene":
            return cmd_gene(args)
        if args.command == "validate":
            # validation problems are reported, not raised
            try:
                doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise TTSHSError("PARSE_ERROR", f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
            cfg = RunConfig(parse_model(doc.get("model") if isinstance(doc, dict) else None))
            return cmd_validate(cfg, args)
        cfg = load_config(args.config)
        threads = getattr(args, "threads", None)
        if threads is None and hasattr(args, "threads"):
            threads = cfg.run.threads if "threads" in _explicit_run_keys(args.config) else (os.cpu_count() or 1)
        cfg = with_run_overrides(
            cfg,
            t_end=args.t_end,
            grid_points=args.grid_points,
            format=args.format,
            out=args.out,
            paths=getattr(args, "paths", None),
            seed=getattr(args, "seed", None),
            sampler=getattr(args, "sampler", None),
            threads=threads,
            method=getattr(args, "method", None),
        )
        return _CONFIG_COMMANDS[args.command](cfg, args)
    except TTSHSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.code in NUMERICAL_CODES else EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _explicit_run_keys(path) -> set:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return set(doc.get("run", {}))
    except (OSError, ValueError, AttributeError):
        return set()


if __name__ == "__main__":
    sys.exit(main())
