"""Time stepping of the reduced flow for (u, f), the homogeneous ODE, and the
conjugate heat equation solved backward along a stored trajectory.

The reduced system on (Sigma, g_Sigma) with g_t = e^u g_Sigma is

    du/dt = e^{-u} (Lap u - R_Sigma) + e^{-2u} phi^T h_t phi - lam
    df/dt = e^{-u} (Lap f + zeta) = e^{-u} phi

with phi = zeta + Lap f and h_t = e^{-lam t} h0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .bundle import BundleSpec, FlowState, fiber_metric_at, fiber_quadratic, zeta
from .mesh import MeshSurface, laplacian

log = logging.getLogger(__name__)

REACHED_T_END = "reached_t_end"
SINGULARITY = "singularity"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class StepControl:
    """Step-size policy.

    ``scheme`` selects classical RK4 (CFL-limited) or the linearly implicit
    Euler step, which is limited only by ``dt_max``.
    """

    cfl_factor: float = 0.5
    dt_max: float = 1e-2
    dt_min: float = 1e-12
    blowup_threshold: float = 20.0
    scheme: str = "rk4"

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 1:
            raise ValueError(f"cfl_factor must lie in (0, 1], got {self.cfl_factor}")
        if not self.dt_min < self.dt_max:
            raise ValueError("dt_min must be smaller than dt_max")
        if self.scheme not in ("rk4", "imex"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class Trajectory:
    """Snapshots at a uniform time stride plus one diagnostics record per step."""

    snapshots: list[FlowState] = field(default_factory=list)
    records: list = field(default_factory=list)
    reason: str = ""
    stride: float = 0.0
    steps: int = 0
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> FlowState:
        return self.snapshots[-1]

    @property
    def case_mesh(self) -> MeshSurface:
        return self.snapshots[0].mesh


def _check_finite(state: FlowState, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            bad = int(np.flatnonzero(~np.isfinite(np.ravel(a)))[0])
            raise FloatingPointError(f"non-finite value at t={state.t:.6g} (flat index {bad})")


def rhs(state: FlowState) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives (du/dt, df/dt) of the reduced system."""
    mesh, spec = state.mesh, state.spec
    # FlowState already guarantees finite inputs
    with np.errstate(over="raise", invalid="raise"):
        try:
            em = np.exp(-state.u)
            # one sparse product for u and every f component
            lap = laplacian(mesh, np.vstack([state.u, state.f]))
            phi = zeta(spec, mesh)[:, None] + lap[1:]
            q = fiber_quadratic(phi, state.h)
            du = em * (lap[0] - mesh.R_sigma) + em * em * q - spec.lam
            df = em * phi
        except FloatingPointError as exc:
            raise FloatingPointError(f"overflow evaluating rhs at t={state.t:.6g}: {exc}") from exc
    _check_finite(state, du, df)
    return du, df


def stability_dt(state: FlowState, ctl: StepControl) -> float:
    """Explicit step bound cfl * e^{min u} / Lambda_max, clamped above by dt_max.

    The result is not clamped below: a value under ``dt_min`` tells the caller
    that the flow is going singular.
    """
    if ctl.scheme == "imex":
        return imex_dt(state, ctl)
    dt = ctl.cfl_factor * np.exp(np.min(state.u)) / state.mesh.spectral_bound
    return float(min(dt, ctl.dt_max))


def imex_dt(state: FlowState, ctl: StepControl) -> float:
    """The linearly implicit step is stable at any size; only dt_max limits it."""
    return float(ctl.dt_max)


def _advance(state: FlowState, du, df, dt) -> FlowState:
    return FlowState(t=state.t + dt, u=state.u + dt * du, f=state.f + dt * df,
                     spec=state.spec, mesh=state.mesh)


def step_rk(state: FlowState, dt: float) -> FlowState:
    """Classical four-stage Runge-Kutta step; negative dt integrates backward."""
    k1 = rhs(state)
    k2 = rhs(_advance(state, *k1, dt / 2))
    k3 = rhs(_advance(state, *k2, dt / 2))
    k4 = rhs(_advance(state, *k3, dt))
    du = (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
    df = (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
    return _advance(state, du, df, dt)


def step_imex(state: FlowState, dt: float) -> FlowState:
    """Linearly implicit Euler step.

    Both equations are multiplied by a_i e^{u_i}, freezing that factor at the
    start of the step, so the diffusion part becomes diag(a e^u) - dt L.  f is
    advanced first; its new curvature density then drives u, with the forcing
    e^{-u} q linearized about u_n and moved to the implicit side.  R and lambda
    enter explicitly: they are constant in the rescaled form.
    """
    mesh, spec = state.mesh, state.spec
    a = mesh.vertex_areas
    mass = a * np.exp(state.u)
    L = mesh.weights
    z = zeta(spec, mesh)
    f_solve = splu((sparse.diags(mass) - dt * L).tocsc())
    f_new = np.empty_like(state.f)
    for i in range(spec.k):
        f_new[i] = f_solve.solve(mass * state.f[i] + dt * a * z[i])
    t_new = state.t + dt
    phi = z[:, None] + laplacian(mesh, f_new)
    forcing = np.exp(-state.u) * fiber_quadratic(phi, fiber_metric_at(spec, t_new))
    u_solve = splu((sparse.diags(mass + dt * a * forcing) - dt * L).tocsc())
    rhs_u = mass * state.u + dt * a * (forcing * (1.0 + state.u) - mesh.R_sigma - spec.lam * np.exp(state.u))
    u_new = u_solve.solve(rhs_u)
    return FlowState(t=t_new, u=u_new, f=f_new, spec=spec, mesh=mesh)


def run_flow(initial: FlowState, ctl: StepControl, t_end: float, stride: float,
             record: Callable[..., object] | None = None,
             max_steps: int = 50_000_000) -> Trajectory:
    """Integrate from ``initial`` to ``t_end``, snapshotting every ``stride`` time units.

    Steps are shortened to land exactly on snapshot times.  ``record(state,
    at_snapshot)`` is called on every accepted state, the initial one included;
    by default it builds a :class:`~rymflow.diagnostics.DiagnosticsRecord`.
    """
    if t_end <= 0 or stride <= 0:
        raise ValueError("t_end and stride must be positive")
    if record is None:
        from .diagnostics import diagnostics_record as record
    step = step_imex if ctl.scheme == "imex" else step_rk
    traj = Trajectory(stride=stride)
    state = initial
    traj.snapshots.append(state)
    traj.records.append(record(state, True))
    n_snap = 1
    t0 = initial.t
    while True:
        target = min(t0 + n_snap * stride, t0 + t_end)
        if state.t >= t0 + t_end - 1e-12 * max(1.0, t_end):
            traj.reason = REACHED_T_END
            break
        if traj.steps >= max_steps:
            traj.reason = NUMERICAL_FAILURE
            traj.message = "step budget exhausted"
            break
        try:
            dt = stability_dt(state, ctl)
            if dt < ctl.dt_min:
                traj.reason = SINGULARITY
                traj.message = f"dt={dt:.3e} below dt_min"
                break
            snap = target - state.t <= dt * (1 + 1e-9)
            dt = min(dt, target - state.t)
            new = step(state, dt)
        except FloatingPointError as exc:
            traj.reason = NUMERICAL_FAILURE
            traj.message = str(exc)
            log.warning("numerical failure: %s", exc)
            break
        traj.steps += 1
        if snap:
            new = new.replace(t=target)
        state = new
        traj.records.append(record(state, snap))
        if snap:
            traj.snapshots.append(state)
            n_snap += 1
        if np.max(np.abs(state.u)) > ctl.blowup_threshold:
            traj.reason = SINGULARITY
            traj.message = f"|u| exceeded {ctl.blowup_threshold}"
            if traj.snapshots[-1] is not state:
                traj.snapshots.append(state)
            break
    return traj


@dataclass
class HomogeneousRun:
    """Spatially constant solution on a surface of curvature R_sigma and area ``area``."""

    t: np.ndarray
    u: np.ndarray
    zeta_sq: float
    singular: bool
    spec: BundleSpec
    R_sigma: float
    area: float
    singular_time: float | None = None


def homogeneous_rhs(t: float, u: float, R_sigma: float, q0: float, lam: int) -> float:
    """u' = -R e^{-u} + e^{-lam t} q0 e^{-2u} - lam, with q0 = zeta^T h0 zeta."""
    em = np.exp(-u)
    return -R_sigma * em + np.exp(-lam * t) * q0 * em * em - lam


def run_homogeneous(spec: BundleSpec, R_sigma: float, area: float, u0: float, t_end: float,
                    dt: float = 1e-3, q0: float | None = None,
                    blowup_threshold: float = 20.0) -> HomogeneousRun:
    """RK4 integration of the spatially constant reduction.

    ``q0`` overrides zeta^T h0 zeta (zeta = 2 pi c1 / area) for direct control
    of the forcing strength.
    """
    if q0 is None:
        z = 2.0 * np.pi * np.asarray(spec.c1, float) / area
        q0 = float(z @ spec.h0 @ z)
    n = int(np.ceil(t_end / dt - 1e-9))
    ts = np.empty(n + 1)
    us = np.empty(n + 1)
    ts[0], us[0] = 0.0, u0
    lam = spec.lam
    singular = False
    with np.errstate(over="raise", invalid="raise"):
        for m in range(n):
            t, u = ts[m], us[m]
            h = min(dt, t_end - t)
            try:
                k1 = homogeneous_rhs(t, u, R_sigma, q0, lam)
                k2 = homogeneous_rhs(t + h / 2, u + h / 2 * k1, R_sigma, q0, lam)
                k3 = homogeneous_rhs(t + h / 2, u + h / 2 * k2, R_sigma, q0, lam)
                k4 = homogeneous_rhs(t + h, u + h * k3, R_sigma, q0, lam)
                un = u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            except FloatingPointError:
                un = np.nan
            ts[m + 1] = t + h
            us[m + 1] = un
            if not np.isfinite(un) or abs(un) > blowup_threshold:
                singular = True
                ts, us = ts[: m + 2], us[: m + 2]
                break
    stime = None
    if singular:
        last = ts[-2] if not np.isfinite(us[-1]) else ts[-1]
        stime = float(last)
    return HomogeneousRun(t=ts, u=us, zeta_sq=q0, singular=singular, spec=spec, R_sigma=R_sigma,
                          area=area, singular_time=stime)


def conjugate_heat_backward(traj: Trajectory, T_index: int, w_T: np.ndarray | None = None,
                            cfl: float = 0.5) -> list[np.ndarray]:
    """Solve the conjugate heat equation backward from snapshot ``T_index`` to 0.

    Works with the vertex masses m_i = w_i a_i e^{u_i}, which obey
    dm/dt = -L w exactly on the mesh, so total mass is conserved by construction.
    In reversed time s = T - t this is a forward heat equation, integrated with
    RK4 sub-steps and u linearly interpolated between snapshots.  Returns the
    densities w at snapshots 0..T_index.
    """
    snaps = traj.snapshots[: T_index + 1]
    if any(s.spec.lam != 0 for s in snaps):
        raise ValueError("conjugate heat flow requires lambda = 0")
    mesh = snaps[-1].mesh
    a = mesh.vertex_areas
    L = mesh.weights
    uT = snaps[-1].u
    if w_T is None:
        w_T = np.full(mesh.n_vertices, 1.0 / np.dot(a, np.exp(uT)))
    w_T = np.asarray(w_T, float)
    if np.any(w_T <= 0):
        raise ValueError("terminal density must be positive")
    total = np.dot(w_T, a * np.exp(uT))
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"terminal density must have unit mass, got {total}")

    m = w_T * a * np.exp(uT)
    out = [m / (a * np.exp(uT))]
    for j in range(T_index, 0, -1):
        u_hi, u_lo = snaps[j].u, snaps[j - 1].u
        span = snaps[j].t - snaps[j - 1].t
        rate = mesh.spectral_bound * np.exp(-min(u_hi.min(), u_lo.min()))
        n_sub = max(1, int(np.ceil(span * rate / cfl)))
        ds = span / n_sub

        def dm(s_frac, m_):
            u = (1 - s_frac) * u_hi + s_frac * u_lo
            return L @ (m_ / (a * np.exp(u)))

        for i in range(n_sub):
            s0 = i / n_sub
            hs = 1.0 / n_sub
            k1 = dm(s0, m)
            k2 = dm(s0 + hs / 2, m + ds / 2 * k1)
            k3 = dm(s0 + hs / 2, m + ds / 2 * k2)
            k4 = dm(s0 + hs, m + ds * k3)
            m = m + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        w = m / (a * np.exp(u_lo))
        if np.min(w) < -1e-8:
            raise FloatingPointError(f"conjugate heat density went negative at t={snaps[j - 1].t:.6g}")
        out.append(w)
    return out[::-1]
