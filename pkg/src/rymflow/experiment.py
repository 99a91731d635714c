"""Run one configured experiment: integrate, audit, write outputs, pick an exit code."""

from __future__ import annotations

import dataclasses
import logging
import os
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, infer_case
from .diagnostics import (
    audit_chern,
    audit_estimates,
    audit_liouville,
    convergence_probe,
    homogeneous_records,
    singularity_probe,
)
from .flow import SINGULARITY, run_flow, run_homogeneous
from .output import write_json, write_snapshot, write_timeseries

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SINGULAR = 2
EXIT_AUDIT = 3
EXIT_CONFIG = 4


def output_dir(cfg: RunConfig, out_root: Path | str | None = None) -> Path:
    """<root>/<name>, where root is ``out_root``, else $RYM_OUT_DIR, else outputs.dir."""
    root = out_root or os.environ.get("RYM_OUT_DIR") or cfg["outputs"]["dir"]
    return Path(root) / cfg.name


def _checks_json(checks):
    return [{"name": c.name, "margin": c.margin, "tol": c.tol, "passed": c.passed} for c in checks]


def run_experiment(cfg: RunConfig, out_root: Path | str | None = None) -> int:
    out = output_dir(cfg, out_root)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        log.error("output directory %s is not writable: %s", out, exc)
        return EXIT_CONFIG

    case = infer_case(cfg)
    ctl = cfg["control"]
    meta = {"config": cfg.data, "version": __version__, "case": case}

    if cfg["surface"]["kind"] == "homogeneous":
        surf = cfg["surface"]
        run = run_homogeneous(cfg.bundle(), surf["R_sigma"], surf["area"], cfg.homogeneous_u0(),
                              ctl["t_end"], dt=ctl["dt_max"], blowup_threshold=ctl["blowup_threshold"])
        traj, records = run, homogeneous_records(run)
        reason = SINGULARITY if run.singular else "reached_t_end"
        meta["mesh_sha256"] = None
    else:
        try:
            initial = cfg.initial_state()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        traj = run_flow(initial, cfg.control(), ctl["t_end"], ctl["stride"])
        records, reason = traj.records, traj.reason
        meta["mesh_sha256"] = initial.mesh.digest()
        meta["steps"] = traj.steps
        meta["message"] = traj.message
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        stride = cfg["outputs"]["snapshot_stride"]
        last = len(traj.snapshots) - 1
        for i, s in enumerate(traj.snapshots):
            if i % stride == 0 or i == last:
                write_snapshot(s, snap_dir / f"snapshot_{i:05d}.csv")

    meta["termination"] = reason
    write_timeseries(records, out / "timeseries.csv")

    verdict = audit_estimates(traj, case)
    checks = list(verdict.checks)
    if cfg.bundle().lam >= 0:
        checks.append(audit_liouville(traj))
    if cfg["surface"]["kind"] != "homogeneous":
        checks.append(audit_chern(traj))
    write_json({"case": case, "passed": all(c.passed for c in checks), "checks": _checks_json(checks),
                "monitors": verdict.monitors}, out / "verdict.json")

    if reason == SINGULARITY:
        write_json(dataclasses.asdict(singularity_probe(traj)), out / "singular_time.json")
    else:
        write_json(dataclasses.asdict(convergence_probe(traj, case)), out / "convergence.json")
    write_json(meta, out / "meta.json")

    if not all(c.passed for c in checks):
        return EXIT_AUDIT
    if reason != "reached_t_end":
        return EXIT_SINGULAR
    return EXIT_OK
