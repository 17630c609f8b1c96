"""Artifact files: CSV signals, JSON summaries and SVG plots.

All writers are deterministic: numbers are printed with ``repr`` precision,
JSON keys are sorted and the SVG backend is given a fixed hash salt and no
date, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig

SVG_SALT = "bayes-input-design"


def header_lines(cfg: ExperimentConfig, seed: Optional[int] = None) -> list:
    seed = cfg.noise_seed if seed is None else seed
    return [f"config_sha256={cfg.sha256}", f"seed={seed}", f"version={__version__}"]


def write_csv(path: Path, columns: Sequence[str], data: np.ndarray, cfg: ExperimentConfig,
              seed: Optional[int] = None) -> Path:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lines = ["# " + h for h in header_lines(cfg, seed)]
    lines.append(",".join(columns))
    lines += [",".join(repr(float(x)) for x in row) for row in data]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, tree: dict, cfg: ExperimentConfig, seed: Optional[int] = None) -> Path:
    doc = {"meta": dict(h.split("=", 1) for h in header_lines(cfg, seed))}
    doc.update(to_jsonable(tree))
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def write_svg(path: Path, series: Iterable, xlabel: str, ylabel: str, title: str = "",
              hline: Optional[float] = None, step: bool = False) -> Path:
    """Line plot of ``(label, t, y)`` triples."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        for label, t, y in series:
            if step:
                ax.step(t, y, where="post", label=label, lw=1.2)
            else:
                ax.plot(t, y, label=label, lw=1.2)
        if hline is not None:
            ax.axhline(hline, color="0.5", lw=0.8, ls="--")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


def _step_series(run):
    t = run.disc.nodes
    v = run.control.values
    return t, np.vstack([v, v[-1:]])


def design_summary(run) -> dict:
    rep = run.report
    return {
        "method": run.method,
        "final_cost": run.result.final_cost,
        "iterations": run.result.iterations_run,
        "active_set_fraction": run.result.active_set_fraction,
        "projected_gradient_norm": run.result.projected_gradient_norm,
        "pmp": {
            "mode": rep.mode,
            "consistency": rep.consistency,
            "consistency_nodes": rep.consistency_nodes,
            "lc_min_eig": rep.lc_min_eig,
            "lc_pass": rep.lc_pass,
            "gram_classical": rep.gram_classical,
            "gram_sigma": rep.gram_sigma,
            "gram_ensemble": rep.gram_ensemble,
            "gram_eigenvalues": np.linalg.eigvalsh(rep.gram_ensemble if rep.mode == "ensemble" else rep.gram_classical),
            "singular_feedback_rms_error": rep.singular_feedback_error,
            "singular_feasible_fraction": rep.singular_feasible_fraction,
            "singular_residual_max": rep.singular_residual_max,
            "arcs": [[{"label": a.label, "t_start": a.t_start, "t_stop": a.t_stop} for a in ch] for ch in rep.arcs],
            **rep.extra,
        },
    }


def experiment_summary(exp) -> dict:
    return {
        "theta_post": exp.theta_post,
        "sigma_post": exp.sigma_post,
        "information_gain": exp.information_gain,
        "max_state_norm2": exp.max_state_norm2,
        "y_avg": exp.y_avg,
    }


def write_design(out: Path, cfg: ExperimentConfig, run, formats: Sequence[str]) -> Dict[str, Path]:
    """Control and switching-function files for one design run."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    m = run.control.values.shape[1]
    files = {}
    tag = run.method
    if "csv" in formats:
        files["controls"] = write_csv(out / f"controls_{tag}.csv", ["t_start"] + [f"u{i + 1}" for i in range(m)],
                                      np.column_stack([run.disc.nodes[:-1], run.control.values]), cfg)
        files["switching"] = write_csv(out / f"switching_{tag}.csv", ["t"] + [f"phi{i + 1}" for i in range(m)],
                                       np.column_stack([run.disc.nodes, run.report.switching]), cfg)
    return files


def write_experiment(out: Path, cfg: ExperimentConfig, tag: str, exp, formats: Sequence[str],
                     seed: Optional[int] = None) -> Dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if "csv" in formats:
        files["state_norm2"] = write_csv(out / f"state_norm2_{tag}.csv", ["t", "x_norm2"],
                                         np.column_stack([exp.t_fine, exp.state_norm2]), cfg, seed)
    return files


def write_study(out: Path, cfg: ExperimentConfig, study, formats: Sequence[str], seed: Optional[int] = None) -> Dict[str, Path]:
    """Every artifact of the three-way comparison."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for m, run in study.designs.items():
        files.update({f"{k}_{m}": v for k, v in write_design(out, cfg, run, formats).items()})
        files.update({f"{k}_{m}": v for k, v in write_experiment(out, cfg, m, study.experiments[m], formats, seed).items()})
    table = [[m, float(e.theta_post[0]), float(e.sigma_post[0, 0]), e.max_state_norm2]
             for m, e in study.experiments.items()]
    if "csv" in formats:
        lines = ["# " + h for h in header_lines(cfg, seed)] + ["method,theta_post,sigma_post,max_state_norm2"]
        lines += [f"{m},{a!r},{b!r},{c!r}" for m, a, b, c in table]
        (out / "comparison.csv").write_text("\n".join(lines) + "\n")
        files["comparison"] = out / "comparison.csv"
    if "json" in formats:
        files["summary"] = write_json(out / "summary.json", {
            "config": cfg.raw,
            "designs": {m: design_summary(r) for m, r in study.designs.items()},
            "experiments": {m: experiment_summary(e) for m, e in study.experiments.items()},
            "checks": study.checks,
            "passed": study.passed,
        }, cfg, seed)
    if "svg" in formats:
        files["controls_svg"] = write_svg(out / "controls.svg",
                                          [(m, *_step_series(r)) for m, r in study.designs.items()],
                                          "t", "u(t)", "optimal controls", step=True)
        files["state_norm2_svg"] = write_svg(out / "state_norm2.svg",
                                             [(m, e.t_fine, e.state_norm2) for m, e in study.experiments.items()],
                                             "t", "|x(t)|^2 at theta_true", "state magnitude", hline=1.0)
    return files
