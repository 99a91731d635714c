import numpy as np
import pytest
from hypothesis import given, strategies as st

from rymflow.bundle import BundleSpec, FlowState
from rymflow.diagnostics import (
    CaseMismatch,
    Check,
    audit_chern,
    audit_estimates,
    audit_liouville,
    center_of_mass,
    convergence_probe,
    diagnostics_record,
    grad_f_sq,
    homogeneous_records,
    lambda_chern,
    record_rows,
    singularity_probe,
    sup_abs_f,
    volume_rate_errors,
)
from rymflow.flow import StepControl, run_flow, run_homogeneous
from rymflow.functionals import liouville_energy


@pytest.fixture(scope="module")
def short_sphere_run(sphere3):
    z = sphere3.unit_positions()[:, 2]
    s = FlowState.initial(sphere3, BundleSpec(k=2, c1=(1, -2), h0=np.diag([1.0, 2.0])), 0.2 * z, 0.1 * z)
    return run_flow(s, StepControl(), 0.05, 0.01)


class TestPointwise:
    def test_center_of_mass(self, sphere4):
        assert np.allclose(center_of_mass(FlowState.initial(sphere4, BundleSpec.line(0))), 0, atol=1e-14)
        z = sphere4.unit_positions()[:, 2]
        com = center_of_mass(FlowState.initial(sphere4, BundleSpec.line(0), 0.5 * z))
        assert com[2] > 0.1 and np.allclose(com[:2], 0, atol=1e-12)

    @given(c1=st.lists(st.integers(-3, 3), min_size=2, max_size=2))
    def test_lambda_chern_is_topological(self, sphere3, c1):
        h0 = np.array([[1.0, 0.2], [0.2, 4.0]])
        z = sphere3.unit_positions()[:, 2]
        s = FlowState.initial(sphere3, BundleSpec(k=2, c1=tuple(c1), h0=h0), 0.4 * z, 0.3 * z)
        c = np.array(c1, float)
        assert lambda_chern(s) == pytest.approx(2 * np.pi * np.sqrt(c @ h0 @ c), abs=1e-10)

    def test_gradient_of_sine(self, torus64):
        x = torus64.vertices[:, 0]
        s = FlowState.initial(torus64, BundleSpec.line(0, 2.0), 0.5, np.sin(x))
        assert np.max(np.abs(grad_f_sq(s) - 2.0 * np.exp(-0.5) * np.cos(x) ** 2)) < 1e-2

    def test_sup_abs_f_uses_fiber_metric(self, torus16):
        s = FlowState.initial(torus16, BundleSpec(k=2, c1=(0, 0), h0=np.diag([1.0, 4.0])), 0.0,
                              np.array([[3.0], [1.0]]))
        assert sup_abs_f(s) == pytest.approx(np.sqrt(9 + 4))

    def test_record_only_measures_diameter_at_snapshots(self, sphere3):
        s = FlowState.initial(sphere3, BundleSpec.line(1))
        assert diagnostics_record(s).diameter is None
        rec = diagnostics_record(s, at_snapshot=True)
        assert rec.diameter > 0 and rec.finite()
        assert rec.chern_defect < 1e-12

    def test_record_matches_functionals(self, sphere3, rng):
        from rymflow.acceptance import random_state
        from rymflow.functionals import calabi_energy, volume, volume_rate
        s = random_state(sphere3, rng)
        rec = diagnostics_record(s)
        rep = liouville_energy(s, False)
        assert rec.F_liouville == pytest.approx(rep.F_value, rel=1e-12)
        assert rec.F_energy == pytest.approx(2 * rep.curvature, rel=1e-12)
        assert rec.volume == pytest.approx(volume(s), rel=1e-14)
        assert rec.volume_rate == pytest.approx(volume_rate(s), rel=1e-12)
        assert rec.calabi == pytest.approx(calabi_energy(s), rel=1e-12)

    def test_homogeneous_records_match_pde_functionals(self, torus16):
        spec = BundleSpec.line(1, 1.0, 1)
        run = run_homogeneous(spec, 0.0, torus16.area, 0.4, 0.5, dt=0.1)
        rec = homogeneous_records(run)[-1]
        pde = diagnostics_record(FlowState.initial(torus16, spec, run.u[-1], t=run.t[-1]))
        for name in ("F_liouville", "F_energy", "volume", "volume_rate", "sup_exp_neg_u_minus_1"):
            assert getattr(rec, name) == pytest.approx(getattr(pde, name), rel=1e-10), name


class TestAudits:
    def test_check_margin_sign(self):
        assert Check("x", 0.0, 1e-3).passed
        assert not Check("x", -1e-9, 1e-3).passed

    def test_negative_case_bound_holds(self):
        run = run_homogeneous(BundleSpec.line(1, 1.0, 1), -1.0, 2 * np.pi, -1.0, 10.0, dt=1e-3)
        verdict = audit_estimates(run, "chi_neg")
        assert verdict.passed and verdict.monitors["tol"] == 1e-6
        assert audit_liouville(run).passed

    def test_nontrivial_sphere_floor(self):
        spec = BundleSpec.line(1)
        run = run_homogeneous(spec, 1.0, 8 * np.pi, 0.0, 5.0, dt=1e-2)
        verdict = audit_estimates(run, "chi_pos_nontrivial")
        assert verdict.monitors["volume_floor"] == pytest.approx(np.pi / 2)
        assert verdict.passed

    def test_floor_violation_is_reported(self):
        # initial volume pi/4 sits below the floor pi/2
        run = run_homogeneous(BundleSpec.line(1), 1.0, 8 * np.pi, np.log(1 / 32), 0.1, dt=1e-2)
        verdict = audit_estimates(run, "chi_pos_nontrivial")
        assert not verdict.passed

    @pytest.mark.parametrize("case,mesh,c1", [
        ("chi_neg", "sphere3", 0),
        ("chi_zero", "sphere3", 0),
        ("chi_pos_trivial", "sphere3", 1),
        ("chi_pos_nontrivial", "sphere3", 0),
        ("chi_pos_trivial", "torus16", 0),
        ("bogus", "sphere3", 0),
    ])
    def test_case_mismatch(self, case, mesh, c1, request):
        m = request.getfixturevalue(mesh)
        traj = run_flow(FlowState.initial(m, BundleSpec.line(c1)), StepControl(), 0.01, 0.01)
        with pytest.raises(CaseMismatch):
            audit_estimates(traj, case)

    def test_chern_and_energy_on_pde_run(self, short_sphere_run):
        assert audit_chern(short_sphere_run).passed
        assert audit_liouville(short_sphere_run).passed
        verdict = audit_estimates(short_sphere_run, "chi_pos_nontrivial")
        assert verdict.passed and {"C_sup_f", "C_grad_f"} <= set(verdict.monitors)

    def test_volume_rate_consistent(self, short_sphere_run):
        assert volume_rate_errors(short_sphere_run).max() < 1e-6


class TestProbes:
    def test_collapse_slope_and_time(self):
        # e^u = 1 - t on the round sphere: Vol = 8 pi (1 - t)
        run = run_homogeneous(BundleSpec.line(0), 1.0, 8 * np.pi, 0.0, 2.0, dt=1e-4)
        rep = singularity_probe(run)
        assert rep.area_slope == pytest.approx(-8 * np.pi, rel=1e-6)
        assert rep.singular_time_estimate == pytest.approx(1.0, abs=1e-6)

    def test_probe_rejects_regular_run(self, short_sphere_run):
        with pytest.raises(ValueError, match="singularity"):
            singularity_probe(short_sphere_run)

    def test_homogeneous_convergence(self):
        run = run_homogeneous(BundleSpec.line(1, 1.0, 1), -1.0, 2 * np.pi, -1.0, 20.0, dt=1e-3)
        rep = convergence_probe(run, "chi_neg")
        assert rep.converged
        assert rep.mean_exp_u == pytest.approx(1.0, rel=1e-6)

    def test_homogeneous_not_yet_converged(self):
        run = run_homogeneous(BundleSpec.line(1, 1.0, 1), -1.0, 2 * np.pi, -1.0, 1.0, dt=1e-3)
        assert not convergence_probe(run, "chi_neg").converged

    def test_pde_report_fields(self, torus16):
        traj = run_flow(FlowState.initial(torus16, BundleSpec.line(1, 1.0, 1), 0.2), StepControl(), 0.05, 0.05)
        rep = convergence_probe(traj, "chi_zero")
        assert rep.rel_var_exp_u < 1e-24 and rep.mean_exp_u == pytest.approx(np.exp(traj.final.u[0]))
        assert rep.trace_variance < 1e-24 and rep.calabi < 1e-20
        assert rep.volume_ratio == pytest.approx(rep.mean_exp_u)

    def test_record_rows(self, short_sphere_run):
        rows = record_rows(short_sphere_run.records)
        assert len(rows) == len(short_sphere_run.records)
        assert not np.isnan(rows[0]["diameter"]) and not np.isnan(rows[0]["com_z"])
