"""Monitored quantities, explicit-constant estimate audits, and convergence and
singularity probes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bundle import FlowState, curvature_density, fiber_quadratic, zeta
from .flow import (
    REACHED_T_END,
    SINGULARITY,
    HomogeneousRun,
    StepControl,
    Trajectory,
    homogeneous_rhs,
    stability_dt,
    step_rk,
)
from .functionals import calabi_energy, volume, volume_rate
from .mesh import geodesic_diameter, grad_form

CASES = ("chi_neg", "chi_zero", "chi_pos_trivial", "chi_pos_nontrivial")
PDE_ABS_TOL = 1e-3
PDE_REL_TOL = 1e-2
ODE_TOL = 1e-6


class CaseMismatch(ValueError):
    """Case id inconsistent with the trajectory's surface or bundle."""


@dataclass
class DiagnosticsRecord:
    t: float
    sup_u: float
    inf_u: float
    sup_exp_neg_u_minus_1: float
    sup_abs_f: float
    sup_grad_f_sq: float
    F_energy: float
    volume: float
    volume_rate: float
    calabi: float
    F_liouville: float
    chern_defect: float
    diameter: float | None = None
    center_of_mass: np.ndarray | None = None

    def finite(self) -> bool:
        vals = [v for v in self.__dict__.values() if v is not None]
        return all(np.all(np.isfinite(v)) for v in vals)


def grad_f_sq(state: FlowState) -> np.ndarray:
    """|grad f|^2_{g_t, h0} per vertex."""
    return np.exp(-state.u) * grad_form(state.mesh, state.f, state.spec.h0)


def sup_abs_f(state: FlowState) -> float:
    """sup of |f|_{h0} over the surface."""
    return float(np.sqrt(np.max(fiber_quadratic(state.f, state.spec.h0))))


def center_of_mass(state: FlowState) -> np.ndarray:
    """(1/Vol) int x e^u dV_Sigma with x on the unit sphere."""
    x = state.mesh.unit_positions()
    wts = state.mesh.vertex_areas * np.exp(state.u)
    return wts @ x / wts.sum()


def lambda_chern(state: FlowState) -> float:
    """max over h-unit X of |int <F, X>_h|; equals 2 pi |c1|_h."""
    total = curvature_density(state) @ state.mesh.vertex_areas
    return float(np.sqrt(total @ state.h @ total))


def diagnostics_record(state: FlowState, at_snapshot: bool = False) -> DiagnosticsRecord:
    """All monitored quantities at one time; the diameter only at snapshots.

    Evaluated in one pass (one sparse product for u and f) because it runs
    after every step; tests pin each field to its definition in ``functionals``.
    """
    mesh, spec = state.mesh, state.spec
    a = mesh.vertex_areas
    u = state.u
    eu = np.exp(u)
    em = 1.0 / eu
    Wuf = mesh.weights @ np.vstack([u, state.f]).T
    lap_u = Wuf[:, 0] / a
    phi = zeta(spec, mesh)[:, None] + Wuf[:, 1:].T / a
    curv = float(a @ (em * fiber_quadratic(phi, state.h)))
    vol_w = a * eu
    vol = float(vol_w.sum())
    R_g = em * (mesh.R_sigma - lap_u)
    Rbar = mesh.R_sigma * mesh.area / vol
    chern = phi @ a - 2.0 * np.pi * np.asarray(spec.c1, float)
    return DiagnosticsRecord(
        t=float(state.t),
        sup_u=float(u.max()),
        inf_u=float(u.min()),
        sup_exp_neg_u_minus_1=float(em.max() - 1.0),
        sup_abs_f=sup_abs_f(state),
        sup_grad_f_sq=float(grad_f_sq(state).max()),
        F_energy=2.0 * curv,
        volume=vol,
        volume_rate=float(-mesh.R_sigma * mesh.area + curv - spec.lam * vol),
        calabi=float(vol_w @ (R_g - Rbar) ** 2),
        F_liouville=float(-0.5 * u @ Wuf[:, 0] + curv + mesh.R_sigma * (a @ u) + spec.lam * vol),
        chern_defect=float(np.max(np.abs(chern))),
        diameter=geodesic_diameter(mesh, u) if at_snapshot else None,
        center_of_mass=center_of_mass(state) if mesh.kind == "sphere" else None,
    )


def homogeneous_records(run: HomogeneousRun) -> list[DiagnosticsRecord]:
    """Records for a spatially constant solution (f constant, so no gradients)."""
    lam = run.spec.lam
    out = []
    for t, u in zip(run.t, run.u):
        if not np.isfinite(u):
            break
        q = np.exp(-lam * t) * run.zeta_sq
        vol = run.area * np.exp(u)
        F_value = run.area * (np.exp(-u) * q + run.R_sigma * u + lam * np.exp(u))
        out.append(DiagnosticsRecord(
            t=float(t), sup_u=float(u), inf_u=float(u),
            sup_exp_neg_u_minus_1=float(np.exp(-u) - 1.0),
            sup_abs_f=0.0, sup_grad_f_sq=0.0,
            F_energy=float(2.0 * run.area * np.exp(-u) * q),
            volume=float(vol),
            volume_rate=float(-run.R_sigma * run.area + run.area * np.exp(-u) * q - lam * vol),
            calabi=0.0, F_liouville=float(F_value), chern_defect=0.0,
        ))
    return out


# --- audits ------------------------------------------------------------------


@dataclass
class Check:
    name: str
    margin: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.margin >= 0.0


@dataclass
class CaseVerdict:
    case_id: str
    checks: list[Check] = field(default_factory=list)
    monitors: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _surface_of(traj) -> tuple[str, float, object, list[DiagnosticsRecord], str]:
    if isinstance(traj, HomogeneousRun):
        reason = SINGULARITY if traj.singular else REACHED_T_END
        return "homogeneous", traj.R_sigma, traj.spec, homogeneous_records(traj), reason
    mesh = traj.case_mesh
    return mesh.kind, mesh.R_sigma, traj.snapshots[0].spec, traj.records, traj.reason


def _check_case(case_id: str, R_sigma: float, spec) -> None:
    if case_id not in CASES:
        raise CaseMismatch(f"unknown case {case_id!r}")
    sign = {"chi_neg": -1, "chi_zero": 0, "chi_pos_trivial": 1, "chi_pos_nontrivial": 1}[case_id]
    if np.sign(R_sigma) != sign:
        raise CaseMismatch(f"case {case_id} needs a surface with curvature sign {sign}, got R={R_sigma}")
    if case_id == "chi_pos_trivial" and not spec.trivial:
        raise CaseMismatch("chi_pos_trivial requires c1 = 0")
    if case_id == "chi_pos_nontrivial" and spec.trivial:
        raise CaseMismatch("chi_pos_nontrivial requires c1 != 0")


def _growth_constant(ts, vals, weight) -> float:
    """Smallest C with vals <= C * weight(t) on the sampled times."""
    return float(np.max(np.asarray(vals) / weight(np.asarray(ts))))


def audit_estimates(traj, case_id: str, tol: float | None = None, rel_tol: float = 0.0,
                    until_fraction: float = 0.9) -> CaseVerdict:
    """Check the explicit-constant estimate for ``case_id`` at every record.

    Margins are bound + tol - value (minimized over records).  For the trivial
    sphere, records past ``until_fraction`` of the terminal time are skipped.
    """
    kind, R_sigma, spec, recs, reason = _surface_of(traj)
    _check_case(case_id, R_sigma, spec)
    if tol is None:
        tol = ODE_TOL if kind == "homogeneous" else PDE_ABS_TOL
        if kind != "homogeneous" and rel_tol == 0.0:
            rel_tol = PDE_REL_TOL
    r0 = recs[0]
    t = np.array([r.t for r in recs])
    verdict = CaseVerdict(case_id)

    if case_id == "chi_neg":
        val = np.array([r.sup_exp_neg_u_minus_1 for r in recs])
        bound = np.exp(-t) * r0.sup_exp_neg_u_minus_1
        margin = bound + tol + rel_tol * np.abs(bound) - val
        verdict.checks.append(Check("sup(e^-u - 1) <= e^-t sup(e^-u0 - 1)", float(margin.min()), tol))
    elif case_id == "chi_zero":
        val = np.exp(-np.array([r.inf_u for r in recs]))
        bound = np.exp(t) * np.exp(-r0.inf_u)
        margin = bound + tol + rel_tol * bound - val
        verdict.checks.append(Check("sup e^-u <= e^t sup e^-u0", float(margin.min()), tol))
    elif case_id == "chi_pos_trivial":
        t_stop = until_fraction * t[-1] if reason == SINGULARITY else np.inf
        g = np.array([r.sup_grad_f_sq for r, tt in zip(recs, t) if tt <= t_stop])
        inc = np.diff(g)
        margin = float((tol + rel_tol * np.abs(g[:-1]) - inc).min()) if inc.size else 0.0
        verdict.checks.append(Check("sup|grad f|^2 nonincreasing", margin, tol))
    else:
        lam_c = 2.0 * np.pi * np.sqrt(np.asarray(spec.c1, float) @ spec.h0 @ np.asarray(spec.c1, float))
        area = traj.area if kind == "homogeneous" else traj.case_mesh.area
        floor = lam_c**2 / (R_sigma * area)
        vol = np.array([r.volume for r in recs])
        verdict.checks.append(Check("Vol >= stationary floor", float((vol - floor * (1 - tol)).min()), tol))
        verdict.monitors["volume_floor"] = float(floor)

    if kind != "homogeneous" and len(recs) > 1:
        verdict.monitors["C_sup_f"] = _growth_constant(t, [r.sup_abs_f for r in recs], lambda s: 1 + s)
        verdict.monitors["C_grad_f"] = _growth_constant(t, [r.sup_grad_f_sq for r in recs], np.exp)
    verdict.monitors.update(tol=tol, rel_tol=rel_tol)
    return verdict


def audit_liouville(traj, rel_tol: float = 1e-6) -> Check:
    """Per-step increase of the Liouville energy <= rel_tol (1 + |F|)."""
    recs = _surface_of(traj)[3]
    F = np.array([r.F_liouville for r in recs])
    margin = rel_tol * (1 + np.abs(F[:-1])) - np.diff(F)
    return Check("Liouville energy nonincreasing", float(margin.min()) if margin.size else 0.0, rel_tol)


def audit_chern(traj: Trajectory, tol: float = 1e-8) -> Check:
    c1 = np.asarray(traj.snapshots[0].spec.c1, float)
    worst = max(r.chern_defect for r in traj.records)
    return Check("Chern integrals constant", tol * (1 + np.max(np.abs(c1))) - worst, tol)


def volume_rate_errors(traj: Trajectory, probe: float = 1e-4) -> np.ndarray:
    """Relative error of volume_rate against a centered difference of volume,
    evaluated at each snapshot with local RK4 probes of size +-delta.

    The scale is |R_Sigma| A + (1/2) int |F|^2 dV_g + |lam| Vol, the sum of the
    magnitudes of the three contributions to the rate.
    """
    ctl = StepControl()
    errs = []
    for s in traj.snapshots:
        delta = min(probe, 0.1 * stability_dt(s, ctl))
        fd = (volume(step_rk(s, delta)) - volume(step_rk(s, -delta))) / (2 * delta)
        a = s.mesh.vertex_areas
        half_F = a @ (np.exp(-s.u) * fiber_quadratic(curvature_density(s), s.h))
        scale = abs(s.mesh.R_sigma) * s.mesh.area + half_F + abs(s.spec.lam) * volume(s)
        errs.append(abs(fd - volume_rate(s)) / scale)
    return np.array(errs)


# --- probes ------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    converged: bool
    calabi: float
    trace_variance: float
    volume_ratio: float
    mean_trace: float
    mean_exp_u: float
    rel_var_exp_u: float


def _rel_var(values, weights) -> tuple[float, float]:
    mean = weights @ values / weights.sum()
    var = weights @ (values - mean) ** 2 / weights.sum()
    return float(mean), float(var / mean**2) if mean != 0 else float(var)


def convergence_probe(traj, case_id: str, eps_calabi: float = 1e-3, eps_trace: float = 1e-3,
                      eps_rate: float = 1e-6) -> ConvergenceReport:
    """Diffeomorphism-invariant limit test on the final state.

    For homogeneous runs, convergence means |du/dt| <= eps_rate at the end.
    """
    kind, R_sigma, spec, recs, reason = _surface_of(traj)
    _check_case(case_id, R_sigma, spec)
    if kind == "homogeneous":
        u_end = float(traj.u[-1])
        rate = homogeneous_rhs(float(traj.t[-1]), u_end, traj.R_sigma, traj.zeta_sq, spec.lam)
        settled = reason == REACHED_T_END and abs(rate) <= eps_rate
        eu = float(np.exp(u_end))
        trace = np.exp(-u_end) * np.sqrt(traj.zeta_sq)
        return ConvergenceReport(bool(settled), 0.0, 0.0, eu, float(trace), eu, 0.0)
    s = traj.final
    a = s.mesh.vertex_areas
    vol_w = a * np.exp(s.u)
    phi = curvature_density(s)
    trace = np.exp(-s.u) * np.sqrt(np.maximum(fiber_quadratic(phi, s.h), 0.0))
    mean_tr, var_tr = _rel_var(trace, vol_w) if np.any(trace) else (0.0, 0.0)
    mean_eu, var_eu = _rel_var(np.exp(s.u), a)
    cal = calabi_energy(s)
    converged = reason == REACHED_T_END and cal <= eps_calabi and var_tr <= eps_trace
    return ConvergenceReport(bool(converged), cal, var_tr, float(vol_w.sum() / s.mesh.area),
                             mean_tr, mean_eu, var_eu)


@dataclass
class SingularityReport:
    singular_time_estimate: float
    area_slope: float
    terminal_time: float


def singularity_probe(traj, fraction: float = 0.2) -> SingularityReport:
    """Least-squares slope of Vol over the last ``fraction`` of life and its zero crossing."""
    kind, _, _, recs, reason = _surface_of(traj)
    if reason != SINGULARITY:
        raise ValueError("singularity_probe needs a trajectory that ended in a singularity")
    t = np.array([r.t for r in recs])
    vol = np.array([r.volume for r in recs])
    sel = t >= (1 - fraction) * t[-1]
    if sel.sum() < 2:
        sel[-2:] = True
    slope, icpt = np.polyfit(t[sel], vol[sel], 1)
    return SingularityReport(float(-icpt / slope), float(slope), float(t[-1]))


def record_rows(records: Sequence[DiagnosticsRecord]) -> list[dict]:
    """Flatten records for tabular output."""
    rows = []
    for r in records:
        com = r.center_of_mass if r.center_of_mass is not None else (np.nan,) * 3
        rows.append({
            "t": r.t, "sup_u": r.sup_u, "inf_u": r.inf_u, "volume": r.volume,
            "F_liouville": r.F_liouville, "F_energy": r.F_energy, "calabi": r.calabi,
            "sup_grad_f_sq": r.sup_grad_f_sq,
            "diameter": np.nan if r.diameter is None else r.diameter,
            "com_x": com[0], "com_y": com[1], "com_z": com[2],
        })
    return rows
