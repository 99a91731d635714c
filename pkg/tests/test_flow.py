import numpy as np
import pytest
from hypothesis import given, strategies as st

from rymflow import flow
from rymflow.bundle import BundleSpec, FlowState, zeta
from rymflow.flow import (
    NUMERICAL_FAILURE,
    REACHED_T_END,
    SINGULARITY,
    StepControl,
    conjugate_heat_backward,
    rhs,
    run_flow,
    run_homogeneous,
    stability_dt,
    step_imex,
    step_rk,
)


def _quiet(state, at_snapshot):
    return None


class TestHomogeneous:
    def test_trivial_sphere_collapse_time(self):
        # e^u = 1 - t exactly
        run = run_homogeneous(BundleSpec.line(0), 1.0, 8 * np.pi, 0.0, 2.0, dt=1e-4)
        assert run.singular
        assert run.singular_time == pytest.approx(1.0, abs=1e-3)
        mid = np.searchsorted(run.t, 0.5)
        assert np.exp(run.u[mid]) == pytest.approx(1 - run.t[mid], abs=1e-10)

    @pytest.mark.parametrize("u0", [-1.0, 0.5])
    def test_negative_curvature_closed_form(self, u0):
        # zeta = 0, lam = 1: e^u = 1 + (e^u0 - 1) e^-t
        run = run_homogeneous(BundleSpec.line(0, 1.0, 1), -1.0, 2 * np.pi, u0, 5.0, dt=1e-3)
        exact = np.log(1 + (np.exp(u0) - 1) * np.exp(-run.t))
        assert np.max(np.abs(run.u - exact)) < 1e-10

    def test_fourth_order_in_step(self):
        def err(dt):
            run = run_homogeneous(BundleSpec.line(0, 1.0, 1), -1.0, 1.0, 0.5, 2.0, dt=dt)
            return abs(run.u[-1] - np.log(1 + (np.exp(0.5) - 1) * np.exp(-2.0)))
        ratio = err(0.2) / err(0.1)
        assert 12 < ratio < 20

    def test_forcing_override(self):
        a = run_homogeneous(BundleSpec.line(1), 1.0, 2 * np.pi, 0.0, 0.5, dt=1e-2)
        b = run_homogeneous(BundleSpec.line(0), 1.0, 2 * np.pi, 0.0, 0.5, dt=1e-2, q0=1.0)
        assert a.zeta_sq == pytest.approx(1.0) and np.allclose(a.u, b.u)


class TestRhs:
    def test_sphere_fixed_point(self, sphere4):
        spec = BundleSpec.line(1)
        z = zeta(spec, sphere4)[0]
        s = FlowState.initial(sphere4, spec, np.log(z * z))
        du, df = rhs(s)
        assert np.max(np.abs(du)) < 1e-10
        assert np.allclose(df, z / (z * z))

    def test_overflow_is_reported(self, torus16):
        s = FlowState.initial(torus16, BundleSpec.line(1), -800.0)
        with pytest.raises(FloatingPointError):
            rhs(s)

    @given(c=st.floats(-3, 3))
    def test_stability_step_scales_with_conformal_factor(self, torus16, c):
        ctl = StepControl(dt_max=1.0)
        base = stability_dt(FlowState.initial(torus16, BundleSpec.line(0), 0.0), ctl)
        shifted = stability_dt(FlowState.initial(torus16, BundleSpec.line(0), c), ctl)
        assert shifted == pytest.approx(min(1.0, np.exp(c) * base), rel=1e-12)

    def test_step_control_validation(self):
        with pytest.raises(ValueError):
            StepControl(cfl_factor=1.5)
        with pytest.raises(ValueError):
            StepControl(dt_min=1.0, dt_max=0.1)
        with pytest.raises(ValueError):
            StepControl(scheme="euler")


class TestSteppers:
    def test_constant_data_follows_homogeneous_solution(self, torus16):
        spec = BundleSpec.line(1, 1.0, 1)
        s = FlowState.initial(torus16, spec, 0.3)
        traj = run_flow(s, StepControl(), 0.5, 0.25, record=_quiet)
        ode = run_homogeneous(spec, 0.0, torus16.area, 0.3, 0.5, dt=1e-3)
        assert np.ptp(traj.final.u) < 1e-12
        assert traj.final.u[0] == pytest.approx(ode.u[-1], abs=1e-9)

    def test_rk_step_is_reversible_to_high_order(self, sphere3):
        z = sphere3.unit_positions()[:, 2]
        s = FlowState.initial(sphere3, BundleSpec.line(1), 0.2 * z, 0.1 * z)
        dt = stability_dt(s, StepControl())
        back = step_rk(step_rk(s, dt), -dt)
        assert np.max(np.abs(back.u - s.u)) < 1e-8

    def test_imex_uniform_decay_is_exact(self, torus16):
        # c1 = 0, lam = 1, constant u: du/dt = -1
        s = FlowState.initial(torus16, BundleSpec.line(0, 1.0, 1), 0.0)
        for _ in range(4):
            s = step_imex(s, 0.25)
        assert np.allclose(s.u, -1.0, atol=1e-13)

    def test_imex_first_order_on_homogeneous_data(self, torus16):
        spec = BundleSpec.line(1, 1.0, 1)
        ode = run_homogeneous(spec, 0.0, torus16.area, 0.0, 1.0, dt=1e-3)

        def err(dt):
            traj = run_flow(FlowState.initial(torus16, spec, 0.0), StepControl(scheme="imex", dt_max=dt),
                            1.0, 1.0, record=_quiet)
            return abs(traj.final.u[0] - ode.u[-1])
        ratio = err(0.1) / err(0.05)
        assert 1.7 < ratio < 2.3

    @given(seed=st.integers(0, 10**6))
    def test_imex_discrete_maximum_principle(self, torus16, seed):
        rng = np.random.default_rng(seed)
        s = FlowState.initial(torus16, BundleSpec.line(0), rng.uniform(-1, 1, torus16.n_vertices))
        for _ in range(3):
            new = step_imex(s, 0.5)
            assert new.u.max() <= s.u.max() + 1e-12
            assert new.u.min() >= s.u.min() - 1e-12
            s = new


class TestRunFlow:
    def test_snapshots_on_uniform_grid(self, torus16):
        s = FlowState.initial(torus16, BundleSpec.line(1), 0.1 * np.cos(torus16.vertices[:, 0]))
        traj = run_flow(s, StepControl(dt_max=0.03), 0.2, 0.05, record=_quiet)
        assert traj.reason == REACHED_T_END
        assert np.allclose(traj.times, np.arange(5) * 0.05, atol=1e-15)
        assert len(traj.records) == traj.steps + 1

    def test_collapse_is_flagged_singular(self, sphere3):
        s = FlowState.initial(sphere3, BundleSpec.line(0), -3.0)
        traj = run_flow(s, StepControl(blowup_threshold=5.0), 1.0, 0.01, record=_quiet)
        assert traj.reason == SINGULARITY
        assert traj.final.u.min() < -5.0
        assert traj.final.t < np.exp(-3.0)

    def test_tiny_step_is_flagged_singular(self, sphere3):
        s = FlowState.initial(sphere3, BundleSpec.line(0), -3.0)
        traj = run_flow(s, StepControl(dt_min=1e-5), 1.0, 0.01, record=_quiet)
        assert traj.reason == SINGULARITY and "dt_min" in traj.message

    def test_numerical_failure_keeps_last_valid_state(self, torus16, monkeypatch):
        calls = {"n": 0}
        real = flow.step_rk

        def flaky(state, dt):
            calls["n"] += 1
            if calls["n"] > 3:
                raise FloatingPointError("injected")
            return real(state, dt)

        monkeypatch.setattr(flow, "step_rk", flaky)
        traj = run_flow(FlowState.initial(torus16, BundleSpec.line(1)), StepControl(), 1.0, 0.5, record=_quiet)
        assert traj.reason == NUMERICAL_FAILURE and traj.steps == 3

    def test_default_records_are_finite(self, sphere3):
        z = sphere3.unit_positions()[:, 2]
        traj = run_flow(FlowState.initial(sphere3, BundleSpec.line(1), 0.1 * z, 0.1 * z),
                        StepControl(), 0.01, 0.005)
        assert all(r.finite() for r in traj.records)
        assert sum(r.diameter is not None for r in traj.records) == len(traj.snapshots)


@pytest.fixture(scope="module")
def static_torus(torus32):
    return run_flow(FlowState.initial(torus32, BundleSpec.line(0)), StepControl(), 1.0, 0.1, record=_quiet)


class TestConjugateHeat:

    def test_mode_decays_backward(self, static_torus):
        # on the static flat torus w solves the backward heat equation, so a
        # Fourier mode shrinks by exp(-mu (T - t)) going back in time
        m = static_torus.case_mesh
        x = m.vertices[:, 0]
        h = 2 * np.pi / 32
        mu = (2 - 2 * np.cos(h)) / h**2
        w_T = (1 + 0.5 * np.cos(x)) / (4 * np.pi**2)
        ws = conjugate_heat_backward(static_torus, 10, w_T)
        exact = (1 + 0.5 * np.exp(-mu * 1.0) * np.cos(x)) / (4 * np.pi**2)
        assert np.max(np.abs(ws[0] - exact)) < 1e-9
        mid = (1 + 0.5 * np.exp(-mu * 0.5) * np.cos(x)) / (4 * np.pi**2)
        assert np.max(np.abs(ws[5] - mid)) < 1e-9

    def test_mass_conserved_on_evolving_metric(self, sphere3):
        z = sphere3.unit_positions()[:, 2]
        traj = run_flow(FlowState.initial(sphere3, BundleSpec.line(0), 0.3 * z, 0.2 * z),
                        StepControl(), 0.1, 0.02, record=_quiet)
        ws = conjugate_heat_backward(traj, 5)
        a = sphere3.vertex_areas
        for w, s in zip(ws, traj.snapshots):
            assert a @ (w * np.exp(s.u)) == pytest.approx(1.0, abs=1e-12)
            assert w.min() > 0

    def test_rejects_unnormalized_density(self, static_torus):
        with pytest.raises(ValueError, match="unit mass"):
            conjugate_heat_backward(static_torus, 3, np.ones(static_torus.case_mesh.n_vertices))

    def test_rejects_normalized_flow(self, torus16):
        traj = run_flow(FlowState.initial(torus16, BundleSpec.line(0, 1.0, 1)), StepControl(), 0.02, 0.01,
                        record=_quiet)
        with pytest.raises(ValueError, match="lambda"):
            conjugate_heat_backward(traj, 2)
