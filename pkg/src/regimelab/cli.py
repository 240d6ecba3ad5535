"""
Batch command-line front end.

Commands
--------
probs      regime probabilities over a gap grid
dynamics   cumulative counts and sliding-window label proportions
fit        MAP fit: fit.json, trajectory.csv, manifest.json
sweep      lambda sweep: sweep.csv, manifest.json, selected lambda on stdout
sens       per-turn sensitivities for an existing fit.json
synth      seeded synthetic corpus
checkgrad  random-draw finite-difference check of the analytic derivatives

Fit settings resolve as built-in defaults < ``--config`` file < flags; the
seed additionally falls back to ``REGIMELAB_SEED`` below the config file.
Exit codes: 0 ok, 1 I/O, 2 usage, 3 corpus schema, 4 calibration
unavailable, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import dump_corpus, dynamics_csv, load_corpus
from .errors import CalibrationUnavailableError, RegimeLabError, SchemaError
from .estimation import (FitConfig, default_grid, fit_map, lambda_sweep,
                         select_lambda, trajectory_sensitivities)
from .model import ModelParams, evaluate
from .sensitivity import derivs_wrt_gap, gradient_check
from .synthesis import SCENARIOS, SynthSpec, synthesize

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_SCHEMA, EXIT_CALIBRATION, EXIT_NUMERIC = range(6)

TRAJECTORY_HEADER = ("position", "turn", "label", "G_hat", "p_np", "p_fr", "p_mn",
                     "d_p_np", "d_p_fr", "d_p_mn", "d2_p_fr")
SWEEP_HEADER = ("lambda", "adj_rmse_prev", "mn_calibration", "neg_loglik", "pen_rw",
                "gauge_pen", "pen_l2")
PROBS_HEADER = ("gap", "p_fr_lat", "z_mn", "p_mn_lat", "p_np", "p_fr", "p_mn")
SENS_HEADER = ("position", "turn", "label", "G_hat", "d_p_np", "d_p_fr", "d_p_mn",
               "d2_p_fr", "d_p_fr_lat", "d_p_mn_lat")

# flag dest -> FitConfig key
_FIT_FLAGS = {
    "lam": "lambda",
    "beta_fixed": "beta_fixed",
    "tau_a_hat": "tau_a_hat",
    "tau_p_hat": "tau_p_hat",
    "lam_alpha": "lam_alpha",
    "lam_gamma": "lam_gamma",
    "lam_kappa": "lam_kappa",
    "gauge_w": "gauge_w",
    "max_iterations": "max_iterations",
    "gradient_tolerance": "gradient_tolerance",
    "seed": "seed",
}


class UsageError(RegimeLabError):
    exit_code = EXIT_USAGE


def fmt(x) -> str:
    """12 significant digits; the single float format of every output file."""
    return f"{float(x):.12g}"


def round12(x) -> float:
    return float(fmt(x))


def parse_grid(text: str):
    """``start:stop:count`` -> (start, stop, count) with count >= 1."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must look like start:stop:count, got {text!r}")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise UsageError(f"grid must look like start:stop:count, got {text!r}") from None
    if count < 1 or not (math.isfinite(start) and math.isfinite(stop)):
        raise UsageError(f"grid needs finite bounds and count >= 1, got {text!r}")
    return start, stop, count


def linear_grid(text: str) -> np.ndarray:
    start, stop, count = parse_grid(text)
    return np.linspace(start, stop, count)


def log_grid(text: str) -> np.ndarray:
    lo, hi, count = parse_grid(text)
    if lo <= 0 or hi <= lo or count < 2:
        raise UsageError(f"log grid needs 0 < lo < hi and count >= 2, got {text!r}")
    return default_grid(lo, hi, count)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_manifest(out_dir: Path, command: str, config: dict, input_bytes: bytes) -> None:
    manifest = {
        "command": command,
        "config_digest": _digest(_canonical(config)),
        "input_digest": _digest(input_bytes),
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")


def resolve_config(args) -> FitConfig:
    """Defaults < REGIMELAB_SEED (seed only) < config file < flags."""
    cfg = FitConfig()
    env_seed = os.environ.get("REGIMELAB_SEED")
    if env_seed is not None:
        try:
            cfg = FitConfig.from_mapping({"seed": int(env_seed)}, cfg)
        except ValueError:
            raise UsageError(f"REGIMELAB_SEED must be an integer, got {env_seed!r}") from None
    if getattr(args, "config", None):
        try:
            doc = json.loads(_read_bytes(args.config).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise UsageError(f"config file {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = FitConfig.from_mapping(doc, cfg)
    flags = {key: getattr(args, dest) for dest, key in _FIT_FLAGS.items()
             if getattr(args, dest, None) is not None}
    return FitConfig.from_mapping(flags, cfg) if flags else cfg


def resolve_seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    env_seed = os.environ.get("REGIMELAB_SEED")
    if env_seed is None:
        return default
    try:
        return int(env_seed)
    except ValueError:
        raise UsageError(f"REGIMELAB_SEED must be an integer, got {env_seed!r}") from None


# ---------------------------------------------------------------- commands

def cmd_probs(args) -> int:
    grid = linear_grid(args.grid)
    p = ModelParams(beta=args.beta, alpha=args.alpha, gamma=args.gamma, tau_a=args.tau_a,
                    tau_p=args.tau_p, kappa=args.kappa, eps_p=args.eps_p)
    out = evaluate(grid, p.beta, p.alpha, p.gamma, p.tau_a, p.tau_p, p.kappa, p.eps_p)
    rows = [[fmt(g)] + [fmt(out[k][i]) for k in PROBS_HEADER[1:]]
            for i, g in enumerate(grid)]
    _emit(_csv_text(PROBS_HEADER, rows), args.out)
    return EXIT_OK


def cmd_dynamics(args) -> int:
    corpus = load_corpus(_read_bytes(args.corpus))
    _emit(dynamics_csv(corpus, args.window), args.out)
    return EXIT_OK


def fit_document(fit) -> dict:
    ph = fit.params_hat
    obj = fit.objective
    cal = fit.mn_calibration()
    turns = []
    for i, (t, lab, g, pr) in enumerate(zip(fit.turns, fit.labels, ph.gap_trajectory,
                                            fit.probs), start=1):
        turns.append({"position": i, "turn": t, "label": lab, "G_hat": round12(g),
                      "p_np": round12(pr.p_np), "p_fr": round12(pr.p_fr),
                      "p_mn": round12(pr.p_mn)})
    return {
        "config": {k: (round12(v) if isinstance(v, float) else v)
                   for k, v in fit.config.to_dict().items()},
        "alpha_hat": round12(ph.alpha_hat),
        "gamma_hat": round12(ph.gamma_hat),
        "kappa_hat": round12(ph.kappa_hat),
        "objective": {k: round12(getattr(obj, k)) for k in
                      ("neg_logpost", "neg_loglik", "pen_rw", "gauge_pen", "pen_l2")},
        "converged": fit.converged,
        "iterations": fit.iterations,
        "mn_calibration": None if cal is None else round12(cal),
        "turns": turns,
    }


def trajectory_csv(fit) -> str:
    rows = []
    sens = trajectory_sensitivities(fit)
    for i, (t, lab, g, pr, d) in enumerate(zip(fit.turns, fit.labels,
                                               fit.params_hat.gap_trajectory,
                                               fit.probs, sens), start=1):
        rows.append([i, t, lab, fmt(g), fmt(pr.p_np), fmt(pr.p_fr), fmt(pr.p_mn),
                     fmt(d.d_p_np), fmt(d.d_p_fr), fmt(d.d_p_mn), fmt(d.d2_p_fr)])
    return _csv_text(TRAJECTORY_HEADER, rows)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    raw = _read_bytes(args.corpus)
    corpus = load_corpus(raw)
    cfg = resolve_config(args)
    fit = fit_map(corpus, cfg)
    out = _out_dir(args)
    (out / "fit.json").write_text(json.dumps(fit_document(fit), indent=2) + "\n",
                                  encoding="utf-8")
    (out / "trajectory.csv").write_text(trajectory_csv(fit), encoding="utf-8")
    write_manifest(out, "fit", cfg.to_dict(), raw)
    if not fit.converged:
        print(f"warning: optimizer did not converge ({fit.message})", file=sys.stderr)
    return EXIT_OK


def sweep_csv(sweep) -> str:
    rows = []
    for i, (lam, fit, cal) in enumerate(zip(sweep.grid, sweep.fits, sweep.mn_calibration)):
        obj = fit.objective
        rows.append([fmt(lam), "" if i == 0 else fmt(sweep.adj_rmse[i - 1]),
                     "" if cal is None else fmt(cal), fmt(obj.neg_loglik),
                     fmt(obj.pen_rw), fmt(obj.gauge_pen), fmt(obj.pen_l2)])
    return _csv_text(SWEEP_HEADER, rows)


def cmd_sweep(args) -> int:
    raw = _read_bytes(args.corpus)
    corpus = load_corpus(raw)
    cfg = resolve_config(args)
    grid = log_grid(args.grid_log)
    sweep = lambda_sweep(corpus, cfg, grid, warm_start=not args.cold, workers=args.workers)
    out = _out_dir(args)
    (out / "sweep.csv").write_text(sweep_csv(sweep), encoding="utf-8")
    config = dict(cfg.to_dict(), grid=[fmt(v) for v in grid], warm_start=not args.cold)
    write_manifest(out, "sweep", config, raw)
    if args.lam is not None:
        selected = cfg.lam
    else:
        selected = select_lambda(sweep)
    print(fmt(selected))
    return EXIT_OK


def cmd_sens(args) -> int:
    try:
        doc = json.loads(_read_bytes(args.fit).decode("utf-8"))
        cfg = FitConfig.from_mapping(doc["config"])
        params = ModelParams(beta=cfg.beta_fixed, alpha=doc["alpha_hat"],
                             gamma=doc["gamma_hat"], tau_a=cfg.tau_a_hat,
                             tau_p=cfg.tau_p_hat, kappa=doc["kappa_hat"], eps_p=cfg.eps_p)
        turns = [(r["position"], r["turn"], r["label"], float(r["G_hat"]))
                 for r in doc["turns"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"{args.fit} is not a fit.json document: {exc!r}") from None
    rows = []
    for pos, turn, label, g in turns:
        d = derivs_wrt_gap(g, params)
        rows.append([pos, turn, label, fmt(g), fmt(d.d_p_np), fmt(d.d_p_fr), fmt(d.d_p_mn),
                     fmt(d.d2_p_fr), fmt(d.d_p_fr_lat), fmt(d.d_p_mn_lat)])
    _emit(_csv_text(SENS_HEADER, rows), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    truth = ModelParams(beta=args.beta, alpha=args.alpha, gamma=args.gamma,
                        tau_a=args.tau_a, tau_p=args.tau_p, kappa=args.kappa)
    spec = SynthSpec(length=args.length, sig_rw=args.sig_rw, g0=args.g0, params=truth,
                     seed=resolve_seed(args), scenario=args.scenario)
    g, corpus = synthesize(spec)
    _emit(dump_corpus(corpus), args.out)
    if args.truth:
        rows = [[i, fmt(v)] for i, v in enumerate(g, start=1)]
        Path(args.truth).write_text(_csv_text(("position", "G_true"), rows),
                                    encoding="utf-8")
    return EXIT_OK


def cmd_checkgrad(args) -> int:
    report = gradient_check(args.draws, resolve_seed(args), args.step, args.tolerance)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} draws={report.draws} max_rel_error={report.max_rel_error:.3e} "
          f"max_zero_sum={report.max_zero_sum:.3e} tolerance={report.tolerance:g}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


# ------------------------------------------------------------------ parser

def _model_flags(p, kappa=0.9):
    d = ModelParams()
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--tau-a", type=float, default=d.tau_a)
    p.add_argument("--tau-p", type=float, default=d.tau_p)
    p.add_argument("--kappa", type=float, default=kappa)


def _fit_flags(p):
    p.add_argument("corpus", help="corpus JSON file")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")
    p.add_argument("--config", help="JSON object of FitConfig fields")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="random-walk penalty lambda = 0.5/sig_rw**2 (default 1.15)")
    p.add_argument("--beta-fixed", type=float)
    p.add_argument("--tau-a-hat", type=float)
    p.add_argument("--tau-p-hat", type=float)
    p.add_argument("--lam-alpha", type=float)
    p.add_argument("--lam-gamma", type=float)
    p.add_argument("--lam-kappa", type=float)
    p.add_argument("--gauge-w", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--gradient-tolerance", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regimelab", description=__doc__.split("\n")[1])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probs", help="regime probabilities over a gap grid")
    p.add_argument("--grid", required=True, help="start:stop:count")
    _model_flags(p)
    p.add_argument("--eps-p", type=float, default=1e-12)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_probs)

    p = sub.add_parser("dynamics", help="cumulative and sliding-window label shares")
    p.add_argument("corpus")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("fit", help="MAP fit of the gap trajectory")
    _fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="lambda sweep with calibration selection")
    _fit_flags(p)
    p.add_argument("--grid-log", default="0.1:10:25", help="lo:hi:count, log-spaced")
    p.add_argument("--cold", action="store_true", help="cold-start every lambda")
    p.add_argument("--workers", type=int, default=1, help="threads for cold sweeps")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sens", help="per-turn sensitivities of a saved fit")
    p.add_argument("fit", help="fit.json written by the fit command")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_sens)

    p = sub.add_parser("synth", help="seeded synthetic corpus")
    p.add_argument("--length", type=int, default=86)
    p.add_argument("--sig-rw", type=float, default=0.3)
    p.add_argument("--g0", type=float, default=-2.0)
    p.add_argument("--scenario", choices=SCENARIOS, default="piecewise_ramp")
    p.add_argument("--seed", type=int)
    _model_flags(p)
    p.add_argument("--out", help="output corpus JSON (default: stdout)")
    p.add_argument("--truth", help="also write the true trajectory as CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("checkgrad", help="finite-difference check of the derivatives")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_checkgrad)
    return parser


def _join_negative_values(argv):
    # "--grid -5:5:11" would otherwise be read as an unknown option
    out = list(argv)
    for i in range(len(out) - 1):
        if out[i] in ("--grid", "--grid-log") and out[i + 1].startswith("-"):
            out[i:i + 2] = [f"{out[i]}={out[i + 1]}", None]
    return [a for a in out if a is not None]


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(argv))
    try:
        return args.func(args)
    except CalibrationUnavailableError as exc:
        print(f"regimelab: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except SchemaError as exc:
        where = f" (turn {exc.turn})" if exc.turn is not None else ""
        print(f"regimelab: schema error{where}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except RegimeLabError as exc:
        print(f"regimelab: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"regimelab: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
