"""Command-line front end.

Subcommands: simulate, busy-dist, bounds, tandem, throughput, validate,
plot. Every run validates its JSON config, writes outputs into --out, and
emits a manifest echoing the fully resolved config so the run can be
reproduced byte-for-byte from the manifest alone.

Exit codes: 0 ok, 1 config error, 2 invariant failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as bnd
from . import busyperiod as bp
from . import control as ctl
from . import dist
from . import sim as sm
from . import svgplot
from . import validate as val
from .errors import ConfigError, HtqError, InvariantViolation, NumericError
from .model import HtqParams

CONFIG_VERSION = 1


def _need(cfg: dict, key: str, kind, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: missing field")
    v = cfg[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
        return float(v)
    if kind is int:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
        return v
    if not isinstance(v, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {v!r}")
    return v


def _opt(cfg: dict, key: str, kind, path: str, default=None):
    if key not in cfg or cfg[key] is None:
        return default
    return _need(cfg, key, kind, path)


def _params_from(cfg: dict, path: str = "config") -> HtqParams:
    return HtqParams(
        L=_need(cfg, "L", float, path),
        m=_need(cfg, "m", float, path),
        lam=_need(cfg, "lambda", float, path),
        phi=dist.from_config(_need(cfg, "phi", dict, path), f"{path}.phi"),
        psi=dist.from_config(_need(cfg, "psi", dict, path), f"{path}.psi"),
        x0=tuple(_opt(cfg, "x0", list, path, [])),
    )


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(cfg, dict) and "config" in cfg and "tool" in cfg:
        cfg = cfg["config"]   # re-running from an emitted manifest
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}.version: unsupported version {version}")
    return cfg


def _write_manifest(out: Path, command: str, cfg: dict):
    manifest = {
        "tool": "htqlab",
        "tool_version": __version__,
        "command": command,
        "config": cfg,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _json_out(path: Path, data: dict):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def cmd_simulate(cfg: dict, out: Path) -> int:
    params = _params_from(cfg)
    horizon = _need(cfg, "horizon", float, "config")
    seed = _need(cfg, "seed", int, "config")
    cap = _opt(cfg, "cap", int, "config")
    rate = _opt(cfg, "sample_rate", float, "config", 100.0)
    outcome = sm.run(params, horizon, seed, cap=cap, sample_rate=rate)
    sm.write_trace_csv(outcome, out / "trace.csv")
    sm.write_busy_csv(outcome, out / "busy.csv")
    summary = {
        "events": len(outcome.trace.events),
        "arrivals": sum(1 for e in outcome.trace.events if e.kind == "arrival"),
        "departures": sum(1 for e in outcome.trace.events if e.kind == "departure"),
        "max_queue": outcome.max_queue,
        "exceeded_cap": outcome.exceeded_cap,
        "idle_fraction": sm.idle_fraction(outcome.trace, horizon),
        "integrator_violations": outcome.trace.violations,
    }
    done = outcome.trace.completed_busy_periods()
    if done:
        stats = sm.busy_period_stats(outcome.trace)
        summary["busy_periods"] = stats.count
        summary["mean_busy_period"] = stats.mean_duration
        summary["mean_arrivals_per_busy_period"] = stats.mean_arrivals
    _json_out(out / "summary.json", summary)
    print(f"simulate: {summary['events']} events, max queue {summary['max_queue']}")
    return 0


def cmd_busy_dist(cfg: dict, out: Path) -> int:
    psi = dist.from_config(_need(cfg, "psi", dict, "config"), "config.psi")
    p_rate = _need(cfg, "p_rate", float, "config")
    lam = _need(cfg, "lambda", float, "config")
    theta_cfg = cfg.get("theta", "psi")
    theta = ("initial", float(theta_cfg["w0"])) if isinstance(theta_cfg, dict) else "psi"
    n_max = _opt(cfg, "n_max", int, "config", bp.DEFAULT_N_MAX)
    grid = None
    if "grid" in cfg:
        g = _need(cfg, "grid", dict, "config")
        grid = (_need(g, "h", float, "config.grid"),
                _need(g, "t_max", float, "config.grid"))
    bd = bp.build(p_rate, lam, psi, theta, n_max=n_max, grid=grid)
    bp.write_components_csv(bd, out / "components.csv")
    _json_out(out / "summary.json", bp.summary_json(bd))
    print(f"busy-dist: total mass {bd.total_mass():.6f} over n <= {n_max}")
    return 0


def _search_from(cfg: dict) -> bnd.SearchSpec:
    s = cfg.get("search", {})
    grid = None
    if "grid" in s:
        grid = (float(s["grid"]["h"]), float(s["grid"]["t_max"]))
    return bnd.SearchSpec(
        M_max=s.get("M_max", 128),
        r_max=s.get("r_max", 32),
        lam_tol=s.get("lam_tol", bnd.LAM_REL_TOL),
        early_exit=s.get("early_exit"),
        grid=grid,
    )


def cmd_bounds(cfg: dict, out: Path) -> int:
    mode = _need(cfg, "mode", str, "config")
    psi = dist.from_config(_need(cfg, "psi", dict, "config"), "config.psi")
    phi = dist.from_config(_need(cfg, "phi", dict, "config"), "config.phi")
    L = _need(cfg, "L", float, "config")
    ms = _need(cfg, "m_values", list, "config")
    rows = []
    if mode == "superlinear":
        delta = _need(cfg, "delta", float, "config")
        T = _need(cfg, "T", float, "config")
        init = ("empty",)
        if "init" in cfg and cfg["init"]:
            ic = cfg["init"]
            init = ("nonempty", int(ic["n0"]), float(ic["w0"]))
        for m in ms:
            q = bnd.BoundQuery(L, float(m), delta, T, psi, phi, init=init,
                               search=_search_from(cfg))
            r = bnd.superlinear_bound(q)
            rows.append({"m": m, "lambda_lower": r.lambda_lower,
                         "M_star": r.witness["M"], "r_star": r.witness["r"],
                         "certified_probability": r.certified_probability})
    elif mode in ("sublinear-perturbed", "superlinear-perturbed"):
        eta = _need(cfg, "eta", float, "config")
        fb = _opt(cfg, "F", float, "config")
        rb = _opt(cfg, "R", float, "config")
        for m in ms:
            q = bnd.BoundQuery(L, float(m), 0.5, 1.0, psi, phi, eta=eta,
                               F_bound=fb, R_bound=rb)
            if mode == "sublinear-perturbed":
                lam, w_at, width = bnd.sublinear_perturbed_bound(q)
                rows.append({"m": m, "lambda_lower": lam,
                             "waiting_bound": w_at, "delta_chosen": width})
            else:
                lam, w_at = bnd.superlinear_perturbed_bound(q)
                rows.append({"m": m, "lambda_lower": lam, "waiting_bound": w_at})
    elif mode == "linear":
        rows.append({"m": 1.0, "lambda_lower": bnd.linear_throughput(L, psi)})
    elif mode == "sublinear-trivial":
        for m in ms:
            rows.append({"m": m, "lambda_lower": bnd.sublinear_trivial(L, float(m), psi)})
    else:
        raise ConfigError(f"config.mode: unknown mode {mode!r}")
    name = cfg.get("output_name", "bounds")
    if mode == "superlinear":
        bnd.sweep_csv(rows, out / f"{name}.csv")
    else:
        fields = list(rows[0].keys())
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
    _json_out(out / "summary.json", {"mode": mode, "rows": rows})
    print(f"bounds[{mode}]: {len(rows)} rows -> {name}.csv")
    return 0


def cmd_tandem(cfg: dict, out: Path) -> int:
    params = _params_from(cfg)
    delta = _need(cfg, "delta_release", float, "config")
    horizon = _need(cfg, "horizon", float, "config")
    seed = _need(cfg, "seed", int, "config")
    outcome = ctl.run_tandem(params, delta, horizon, seed)
    ctl.write_vehicle_csv(outcome, out / "vehicles.csv")
    ctl.write_batch_csv(outcome, out / "batches.csv")
    ctl.write_occupancy_csv(outcome, out / "occupancy.csv")
    summary = {
        "sub_intervals": outcome.sub_interval_count,
        "batches": len(outcome.batches),
        "released": len(outcome.released),
        "still_waiting": outcome.still_waiting,
        "first_empty_time": outcome.first_empty_time,
        "min_release_gap": (None if outcome.min_release_gap == float("inf")
                            else outcome.min_release_gap),
        "sub_queues": [vars(r) for r in ctl.htq1_boundedness(outcome)],
    }
    if outcome.released:
        mean, ci = ctl.measure_perturbation(outcome.waits)
        summary["mean_wait"] = mean
        summary["wait_ci95"] = list(ci)
    _json_out(out / "summary.json", summary)
    print(f"tandem: {summary['batches']} batches, {summary['released']} released")
    return 0


def cmd_throughput(cfg: dict, out: Path, jobs: int = 1) -> int:
    params = _params_from(cfg)
    est = sm.estimate_throughput(
        params,
        delta=_need(cfg, "delta", float, "config"),
        horizon=_need(cfg, "horizon", float, "config"),
        cap=_need(cfg, "cap", int, "config"),
        reps=_need(cfg, "reps", int, "config"),
        seed=_need(cfg, "seed", int, "config"),
        lam_range=tuple(_need(cfg, "lam_range", list, "config")),
        jobs=jobs,
    )
    with open(out / "probes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "bounded_probability"])
        for lam, prob in est.probes:
            w.writerow([lam, prob])
    _json_out(out / "summary.json", {
        "throughput_estimate": est.lam, "delta": est.delta,
        "horizon": est.horizon, "cap": est.cap,
        "probes": est.probes,
    })
    print(f"throughput: estimate {est.lam:.4f}")
    return 0


def cmd_validate(cfg: dict, out: Path) -> int:
    results = val.run_suite(
        states=_opt(cfg, "states", int, "config", 2000),
        seed=_opt(cfg, "seed", int, "config", 0),
        rtol=_opt(cfg, "rtol", float, "config", 1e-8),
        chi2_periods=_opt(cfg, "chi2_periods", int, "config", 6000),
    )
    hard_fail = False
    for r in results:
        tag = "REPORT" if r.passed is None else ("PASS" if r.passed else "FAIL")
        print(f"{tag:6s} {r.name}: {r.detail}")
        if r.passed is False and r.hard:
            hard_fail = True
    _json_out(out / "report.json", {
        "results": [vars(r) for r in results],
        "hard_failure": hard_fail,
    })
    return 2 if hard_fail else 0


def cmd_plot(cfg: dict, out: Path) -> int:
    series = []
    for i, item in enumerate(_need(cfg, "inputs", list, "config")):
        path = _need(item, "csv", str, f"config.inputs[{i}]")
        xcol = _need(item, "x", str, f"config.inputs[{i}]")
        ycol = _need(item, "y", str, f"config.inputs[{i}]")
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or xcol not in reader.fieldnames \
                    or ycol not in reader.fieldnames:
                raise ConfigError(
                    f"config.inputs[{i}]: columns {xcol!r}/{ycol!r} not in {path}")
            xs, ys = [], []
            for row in reader:
                if row[xcol] and row[ycol]:
                    xs.append(float(row[xcol]))
                    ys.append(float(row[ycol]))
        if not xs:
            raise NumericError(f"no rows in {path}")
        series.append({"x": xs, "y": ys, "label": item.get("label", Path(path).stem)})
    name = cfg.get("output_name", "plot")
    svgplot.line_plot(series, out / f"{name}.svg",
                      title=cfg.get("title", ""), xlabel=cfg.get("xlabel", ""),
                      ylabel=cfg.get("ylabel", ""), logy=bool(cfg.get("logy", False)))
    print(f"plot: wrote {name}.svg")
    return 0


def preset_path(name: str) -> Path:
    """Path of a packaged preset config (fig-4a, fig-7, ...)."""
    return Path(str(resources.files("htqlab") / "presets" / f"{name}.json"))


_COMMANDS = {
    "simulate": cmd_simulate,
    "busy-dist": cmd_busy_dist,
    "bounds": cmd_bounds,
    "tandem": cmd_tandem,
    "throughput": cmd_throughput,
    "validate": cmd_validate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="htqlab",
        description="Ring-road queue laboratory: simulation, busy-period "
                    "analytics, throughput bounds, release control.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "validate",
                       help="JSON config (or a manifest from a previous run)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None:
            cfg = {**cfg, "seed": args.seed}
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, args.command, cfg)
        if args.command == "throughput":
            return cmd_throughput(cfg, out, jobs=args.jobs)
        return _COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 2
    except (NumericError, HtqError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
