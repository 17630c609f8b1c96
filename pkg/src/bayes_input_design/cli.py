"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import METHODS, ExperimentConfig, load_config, load_preset
from .errors import ConfigError, DesignError
from .output import design_summary, experiment_summary, to_jsonable, write_design, write_experiment, write_json, write_study
from .pipeline import calibrate_horizon, reproduce_study, run_design, run_experiment
from .sysmodel import ControlGrid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("bayes_input_design")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else load_preset()
    updates = {}
    if getattr(args, "atoms", None) is not None:
        updates["ensemble.N"] = args.atoms
    if getattr(args, "radius", None) is not None:
        updates["ensemble.radius"] = args.radius
    if getattr(args, "seed", None) is not None:
        updates["experiment.noise_seed"] = args.seed
    return cfg.replace(**updates) if updates else cfg


def _out(args, cfg) -> Path:
    return Path(args.out or cfg.raw["output"]["directory"])


def _formats(cfg):
    return cfg.raw["output"]["formats"]


def cmd_validate(args) -> int:
    cfg = _config(args)
    print(json.dumps({"valid": True, "config_sha256": cfg.sha256, "n": cfg.system.n, "m": cfg.system.m,
                      "p": cfg.system.p, "q": cfg.system.q}, sort_keys=True))
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = _config(args)
    run = run_design(cfg, args.method, args.paper_faithful)
    out = _out(args, cfg)
    write_design(out, cfg, run, _formats(cfg))
    summary = design_summary(run)
    if "json" in _formats(cfg):
        write_json(out / f"design_{args.method}.json", summary, cfg)
    print(f"{args.method}: cost {run.result.final_cost:.10g}, pmp consistency {run.report.consistency:.4f}")
    return EXIT_OK


def cmd_pmp_report(args) -> int:
    cfg = _config(args)
    run = run_design(cfg, args.method, args.paper_faithful)
    out = _out(args, cfg)
    write_design(out, cfg, run, _formats(cfg))
    doc = design_summary(run)["pmp"]
    write_json(out / f"pmp_{args.method}.json", doc, cfg)
    print(json.dumps(to_jsonable({k: doc[k] for k in ("mode", "consistency", "lc_min_eig", "lc_pass")}), sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    if cfg.control is not None:
        u, tag, disc = ControlGrid(cfg.control, cfg.system.T), "config", None
    else:
        run = run_design(cfg, args.method, args.paper_faithful)
        write_design(out, cfg, run, _formats(cfg))
        u, tag, disc = run.control, args.method, run.disc
    exp = run_experiment(cfg, u, noiseless=args.noiseless, disc=disc)
    write_experiment(out, cfg, tag, exp, _formats(cfg))
    doc = experiment_summary(exp)
    write_json(out / f"experiment_{tag}.json", doc, cfg)
    print(json.dumps(to_jsonable({k: doc[k] for k in ("theta_post", "sigma_post", "information_gain", "max_state_norm2")}),
                     sort_keys=True))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    study = reproduce_study(cfg, args.paper_faithful)
    write_study(out, cfg, study, _formats(cfg))
    print(f"{'method':<16}{'theta_post':>12}{'sigma_post':>12}{'max|x|^2':>10}")
    for m, e in study.experiments.items():
        print(f"{m:<16}{e.theta_post[0]:>12.4f}{e.sigma_post[0, 0]:>12.4f}{e.max_state_norm2:>10.3f}")
    for name, c in study.checks.items():
        status = "PASS" if c["passed"] else ("SOFT-FAIL" if c.get("soft") else "FAIL")
        print(f"check {name}: {status}")
    if not study.passed:
        failed = {k: v for k, v in study.checks.items() if not v["passed"] and not v.get("soft")}
        (out / "failures.json").write_text(json.dumps(to_jsonable(failed), indent=2, sort_keys=True) + "\n")
        print(json.dumps({"error": "acceptance", "failed": sorted(failed)}), file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    ref = cfg.acceptance.get("reference_sigma_post")
    if not ref:
        raise ConfigError("acceptance.reference_sigma_post", "required for calibration")
    T_values = args.T if args.T else np.arange(args.t_min, args.t_max + 1e-9, args.t_step)
    rows = calibrate_horizon(cfg, T_values, ref)
    best = min(rows, key=lambda r: r.loss)
    for r in rows:
        vals = " ".join(f"{m}={r.sigma_post[m]:.5f}" for m in ref)
        print(f"T={r.T:g} {vals} loss={r.loss:.3e}{'  <- best' if r is best else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayes-input-design", description="Bayesian input design for linear systems")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, method=True):
        p.add_argument("--config", type=str, default=None, help="JSON configuration (default: bundled preset)")
        p.add_argument("--out", type=str, default=None, help="output directory (default: output.directory)")
        p.add_argument("--seed", type=int, default=None, help="override experiment.noise_seed")
        p.add_argument("--atoms", type=int, default=None, help="override ensemble.N")
        p.add_argument("--radius", type=float, default=None, help="override ensemble.radius")
        p.add_argument("--paper-faithful", action="store_true", help="fixed-step projected gradient, no acceleration")
        if method:
            p.add_argument("--method", choices=METHODS, default="ensemble-exact")

    p = sub.add_parser("validate-config", help="check a configuration and exit")
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("design", help="solve one design problem")
    common(p)
    p.set_defaults(func=cmd_design)
    p = sub.add_parser("pmp-report", help="optimality diagnostics of a design")
    common(p)
    p.set_defaults(func=cmd_pmp_report)
    p = sub.add_parser("experiment", help="design (or use experiment.control), measure and update")
    common(p)
    p.add_argument("--noiseless", action="store_true", help="zero noise draw")
    p.set_defaults(func=cmd_experiment)
    p = sub.add_parser("reproduce-paper", help="three-way comparison on the bundled preset")
    common(p, method=False)
    p.set_defaults(func=cmd_reproduce)
    p = sub.add_parser("calibrate", help="sweep the horizon against reference posterior variances")
    common(p, method=False)
    p.add_argument("--T", type=float, nargs="+", default=None, help="explicit horizons")
    p.add_argument("--t-min", type=float, default=15.0)
    p.add_argument("--t-max", type=float, default=40.0)
    p.add_argument("--t-step", type=float, default=1.0)
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "path": exc.path, "message": exc.message}), file=sys.stderr)
        return EXIT_CONFIG
    except (DesignError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": "numerical", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
