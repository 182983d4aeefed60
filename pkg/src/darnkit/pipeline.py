"""Execution of validated experiments: darn, sweep, simulate, bmvd."""

from __future__ import annotations

import csv
import io
import json
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from darnkit.augmentation import augment_conductance, augment_jump, piecing_rates
from darnkit.config import Experiment
from darnkit.convergence import fdd_exact, sweep
from darnkit.darning import darn, project, star
from darnkit.flagpole import bmvd_report, build_flagpole_lattice
from darnkit.io import atomic_write, form_to_dict
from darnkit.simulator import estimate_fdd

STEPS = {
    "validate": (),
    "darn": ("darn",),
    "sweep": ("sweep",),
    "simulate": ("simulate",),
    "bmvd": ("bmvd",),
    "all": ("darn", "sweep", "simulate", "bmvd"),
}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "0+unknown"


def _active_steps(exp: Experiment, command: str) -> list[str]:
    cfg = exp.config
    available = {
        "darn": exp.form is not None and exp.holes is not None,
        "sweep": exp.form is not None and bool(cfg.schedule),
        "simulate": exp.form is not None and cfg.mc is not None,
        "bmvd": exp.bmvd_geometry is not None,
    }
    steps = STEPS[command]
    if command == "all":
        return [s for s in steps if available[s]]
    missing = [s for s in steps if not available[s]]
    if missing:
        from darnkit.config import ConfigValidationError

        raise ConfigValidationError([(command, f"config has nothing to run for step '{s}'") for s in missing])
    return list(steps)


def plan(exp: Experiment, command: str) -> list[str]:
    """Human-readable execution plan, one line per step."""
    cfg = exp.config
    lines = []
    for step in _active_steps(exp, command):
        if step == "darn":
            lines.append(f"darn: {exp.form.n} states, {len(exp.holes)} holes, masses={cfg.masses!r} -> darned_form.json")
        elif step == "sweep":
            lines.append(
                f"sweep: mode={cfg.mode}, {len(cfg.schedule)} lambdas x ({len(cfg.alphas)} alphas + "
                f"{len(cfg.ts)} times) x {len(exp.test_functions)} functions -> report.csv"
            )
        elif step == "simulate":
            lambdas = cfg.mc.lambdas or cfg.schedule[:1]
            lines.append(
                f"simulate: {cfg.mc.paths} paths per estimate, lambdas={list(lambdas)} plus sticky limit, "
                f"times={list(cfg.ts)} -> estimates.csv"
            )
        elif step == "bmvd":
            lines.append(f"bmvd: geometry={exp.bmvd_geometry}, schedule={list(cfg.bmvd.schedule)} -> bmvd_report.csv")
    lines.append("manifest -> manifest.json")
    return lines


def _run_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def estimates_table(exp: Experiment) -> str:
    """Monte Carlo marginals ``E[f(X_t)]`` for augmented chains and the sticky limit."""
    cfg = exp.config
    mc = cfg.mc
    form, holes = exp.form, exp.holes
    darned, qmap = darn(form, holes, "sticky")
    if mc.start == "m":
        initial, initial_star = form.m.copy(), darned.m.copy()
    else:
        initial = np.zeros(form.n)
        initial[mc.start] = 1.0
        initial_star = np.zeros(darned.n)
        initial_star[qmap.node_map[mc.start]] = 1.0
    projected = [project(form, holes, f) for f in exp.test_functions]
    starred = [star(form, qmap, f) for f in projected]
    lambdas = mc.lambdas or cfg.schedule[:1]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["process", "lambda", "t", "function", "estimate", "stderr", "paths", "exact"])
    run = 0

    def emit(process, lam_label, chain, init, fs, piecing, sim_form=None):
        nonlocal run
        ones = np.ones(chain.n)
        for t in cfg.ts:
            for i, f in enumerate(fs):
                est = estimate_fdd(
                    chain if sim_form is None else sim_form, init, [t], [ones, f], mc.paths, _run_seed(mc.master_seed, run),
                    piecing=piecing, method=mc.method,
                )
                exact = fdd_exact(chain, init, [t], [ones, f])
                writer.writerow([process, lam_label, repr(float(t)), i, repr(est.estimate),
                                 repr(est.stderr), est.paths, repr(exact)])
                run += 1

    for lam in lambdas:
        if cfg.mode == "jump":
            chain = augment_jump(form, holes, exp.mu, lam)
            piecing = piecing_rates(form, holes, exp.mu, lam) if mc.method == "paths" else None
            process = "piecing" if piecing is not None else "augmented"
            # the pieced-together chain runs on the base form with extra killing
            sim_form = form if piecing is not None else None
            emit(process, repr(float(lam)), chain, initial, projected, piecing, sim_form)
        else:
            chain = augment_conductance(form, holes, lam)
            emit("augmented", repr(float(lam)), chain, initial, projected, None)
    emit("sticky_darned", "inf", darned, initial_star, starred, None)
    return buf.getvalue()


def run(exp: Experiment, command: str, out_dir: Path) -> list[str]:
    """Execute ``command`` and return the names of files written to ``out_dir``."""
    cfg = exp.config
    started = time.perf_counter()
    written = []
    steps = _active_steps(exp, command)
    # compute everything first; files are only written once all steps succeeded
    outputs: dict[str, str] = {}
    for step in steps:
        if step == "darn":
            darned, qmap = darn(exp.form, exp.holes, cfg.masses)
            doc = {
                "form": form_to_dict(darned),
                "node_map": qmap.node_map.tolist(),
                "hole_masses": qmap.hole_masses.tolist(),
                "dropped_intra_hole_weight": qmap.dropped_weight,
            }
            outputs["darned_form.json"] = json.dumps(doc, indent=2) + "\n"
        elif step == "sweep":
            report = sweep(
                exp.form, exp.holes, exp.mu, cfg.mode, cfg.schedule, cfg.alphas, cfg.ts,
                exp.test_functions, tolerance=cfg.tolerance, workers=cfg.workers,
            )
            outputs["report.csv"] = report.to_csv()
            outputs["report.summary.json"] = json.dumps(report.summary(), indent=2) + "\n"
        elif step == "simulate":
            outputs["estimates.csv"] = estimates_table(exp)
        elif step == "bmvd":
            geo = exp.bmvd_geometry
            report, stats = bmvd_report(
                geo["eps"], geo["p"], geo["R"], geo["h"], geo["Z"],
                schedule=cfg.bmvd.schedule, alphas=cfg.bmvd.alphas,
                tolerance=cfg.tolerance, workers=cfg.workers,
            )
            lattice = build_flagpole_lattice(geo["eps"], geo["p"], geo["R"], geo["h"], geo["Z"], 1.0)
            outputs["bmvd_report.csv"] = report.to_csv()
            outputs["bmvd_summary.json"] = json.dumps({**report.summary(), "entrance": stats}, indent=2) + "\n"
            outputs["bmvd_nodes.csv"] = lattice.coordinates_csv()
    for name, text in outputs.items():
        atomic_write(out_dir / name, text)
        written.append(name)
    manifest = {
        "tool": "darnkit",
        "version": tool_version(),
        "command": command,
        "steps": steps,
        "files": written,
        "config": cfg.model_dump(mode="json"),
        "wall_time_s": time.perf_counter() - started,
    }
    atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    written.append("manifest.json")
    return written
