from __future__ import annotations

import numpy as np
import pytest

from conftest import make_scenario
from tvp.constitutive import MaterialParams
from tvp.mesh import DirichletSolver, strain_of, tensor_load
from tvp.scenario import load_shipped
from tvp.stepper import (
    PicardError,
    SimState,
    SolverParams,
    StabilityError,
    StepFailure,
    Stepper,
    epsilon_p_update,
    min_substeps,
    run,
)
from tvp.tensor import ElasticityTensor, dev, identity, norm, trace

POINT = MaterialParams(p=3.0, eps_trunc=1.0, yosida_lambda=0.1, elasticity=ElasticityTensor(0.0, 1.0))
STRAIN = np.array([[1.0, -0.5, -0.5, 0.0, 0.0, 0.0]])


def _affine(**kw):
    base = dict(
        boundary__g_D="affine",
        boundary__g_D__matrix="0.2 0.1 0.0 -0.1",
        initial__u0="affine",
        initial__u0__matrix="0.2 0.1 0.0 -0.1",
    )
    base.update(kw)
    return make_scenario(**base)


class TestSolverParams:
    @pytest.mark.parametrize("kw", [dict(dt=0), dict(dt=1, picard_tol=1), dict(dt=1, picard_max=0), dict(dt=1, substeps=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SolverParams(**kw)


class TestEpsilonPUpdate:
    def test_no_stress_no_flow(self):
        ep = np.array([[0.1, -0.05, -0.05, 0.02, 0.0, 0.0]])
        np.testing.assert_array_equal(epsilon_p_update(ep, ep, POINT, 0.01, 4), ep)

    def test_self_refinement(self):
        ref = epsilon_p_update(np.zeros((1, 6)), STRAIN, POINT, 0.01, 4096)
        errs = [np.max(np.abs(epsilon_p_update(np.zeros((1, 6)), STRAIN, POINT, 0.01, n) - ref)) for n in (64, 128)]
        h = 0.01 / 64
        assert errs[0] <= h**2
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
        assert abs(trace(ref)[0]) < 1e-15

    def test_monotone_response(self):
        rng = np.random.default_rng(0)
        s = dev(rng.normal(size=(200, 6))) * 0.5
        a = epsilon_p_update(np.zeros_like(s), s, POINT, 0.01, 8)
        b = epsilon_p_update(np.zeros_like(s), 2 * s, POINT, 0.01, 8)
        assert np.all(norm(b) >= norm(a))

    def test_stability_guard(self):
        assert min_substeps(POINT, 0.5) == 10
        with pytest.raises(StabilityError, match="substeps >= 10"):
            epsilon_p_update(np.zeros((1, 6)), STRAIN, POINT, 0.5, 9)
        epsilon_p_update(np.zeros((1, 6)), STRAIN, POINT, 0.5, 10)

    def test_needs_positive_lambda(self):
        m = MaterialParams(3.0, 1.0, 0.0, ElasticityTensor(0.0, 1.0))
        with pytest.raises(ValueError):
            epsilon_p_update(np.zeros((1, 6)), STRAIN, m, 0.01, 1)


class TestInitialVelocity:
    def test_constant_stress_gives_zero(self):
        st = Stepper(_affine())
        u_t0, bound = st.initial_velocity_solve()
        np.testing.assert_allclose(u_t0, 0.0, atol=1e-13)
        assert bound["u_t0_h1_sq"] < 1e-24

    def test_rigid_translation(self):
        sc = make_scenario(boundary__g_D="ramp", boundary__g_D__offset="0.3 -0.2", boundary__g_D__rate=2.0)
        u_t0, _ = Stepper(sc).initial_velocity_solve()
        np.testing.assert_allclose(u_t0, np.tile([0.6, -0.4], (u_t0.shape[0], 1)), atol=1e-13)

    def test_generic_residual(self):
        st = Stepper(load_shipped("standard"))
        _, bound = st.initial_velocity_solve()
        assert bound["residual"] < 1e-10
        assert np.isfinite(bound["ratio"])


class TestElasticSolve:
    def test_steady_affine(self):
        st = Stepper(_affine())
        state, _ = st.initial_state()
        u, u_t = st.elastic_solve(np.zeros((st.mesh.n_elems, 6)), state.theta, state.u, 1)
        np.testing.assert_allclose(u, state.u, atol=1e-13)
        np.testing.assert_allclose(u_t, 0.0, atol=1e-11)

    def test_thermal_load_matches_direct_assembly(self):
        sc = make_scenario(
            material__coupling="linear",
            material__alpha=0.4,
            initial__theta0="affine",
            initial__theta0__gradient="1.0 0.5",
        )
        st = Stepper(sc)
        mesh, dt = st.mesh, sc.dt
        theta_star = np.zeros(mesh.n_nodes)
        u, u_t = st.elastic_solve(np.zeros((mesh.n_elems, 6)), theta_star, np.zeros((mesh.n_nodes, 2)), 1)
        f_e = sc.material.f(mesh.centroid_values(st.lifting.theta[1]))
        rhs = tensor_load(mesh, f_e[:, None] * identity((mesh.n_elems,)))
        direct = DirichletSolver(st.ops.K * (1 + 1 / dt), mesh.boundary_dofs).solve(rhs, np.zeros(mesh.boundary_dofs.size))
        np.testing.assert_allclose(u.reshape(-1), direct, atol=1e-14)
        assert np.max(np.abs(u)) > 1e-4
        np.testing.assert_allclose(u_t, u / dt)

    def test_constant_coupling_is_boundary_pressure(self):
        sc = make_scenario(material__coupling="linear", material__alpha=0.4, initial__theta0="constant", initial__theta0__value=1)
        st = Stepper(sc)
        u, _ = st.elastic_solve(np.zeros((st.mesh.n_elems, 6)), np.zeros(st.mesh.n_nodes), np.zeros((st.mesh.n_nodes, 2)), 1)
        np.testing.assert_allclose(u, 0.0, atol=1e-14)

    def test_residual(self):
        st = Stepper(load_shipped("standard"))
        state, _ = st.initial_state()
        rng = np.random.default_rng(2)
        eps_p = dev(rng.normal(size=(st.mesh.n_elems, 6))) * 0.1
        theta = rng.normal(size=st.mesh.n_nodes)
        u, _ = st.elastic_solve(eps_p, theta, state.u, 1)
        assert st.elastic_residual(u, eps_p, theta, state.u, 1) < 1e-10


class TestHeatSolve:
    def setup_method(self):
        self.st = Stepper(make_scenario())
        self.mesh = self.st.mesh
        self.zero_T = np.zeros((self.mesh.n_elems, 6))
        self.zero_u = np.zeros((self.mesh.n_nodes, 2))

    def test_neumann_kernel(self):
        theta, _ = self.st.heat_solve(np.full(self.mesh.n_nodes, 5.0), np.zeros(self.mesh.n_nodes), self.zero_T, self.zero_T, self.zero_u, 1)
        np.testing.assert_allclose(theta, 5.0, rtol=1e-13)

    def test_uniform_source_raises_mean_by_dt(self, monkeypatch):
        st = self.st
        monkeypatch.setattr(st, "heat_source", lambda T, rate: np.ones(self.mesh.n_elems))
        theta, _ = st.heat_solve(np.zeros(self.mesh.n_nodes), np.zeros(self.mesh.n_nodes), self.zero_T, self.zero_T, self.zero_u, 1)
        mean = st.ops.total_mass @ theta / self.mesh.measure
        assert mean == pytest.approx(st.params.dt, rel=1e-13)

    def test_source_truncated(self):
        T = np.tile([3.0, -3.0, 0.0, 0.0, 0.0, 0.0], (self.mesh.n_elems, 1))
        src = self.st.heat_source(T, T)
        np.testing.assert_allclose(src, 1.0 / self.st.material.eps_trunc)

    def test_l2_growth_bound(self):
        st, mesh = self.st, self.mesh
        rng = np.random.default_rng(3)
        height = 1.0 / st.material.eps_trunc
        for _ in range(20):
            theta_n = rng.normal(size=mesh.n_nodes)
            T = rng.normal(size=(mesh.n_elems, 6)) * 3
            rate = rng.normal(size=(mesh.n_elems, 6)) * 3
            theta, src = st.heat_solve(theta_n, theta_n, T, rate, self.zero_u, 1)
            assert np.all(np.abs(src) <= height)
            bound = st.ops.l2_norm_nodal(theta_n) + st.params.dt * height * np.sqrt(mesh.measure)
            assert st.ops.l2_norm_nodal(theta) <= bound * (1 + 1e-12)


class TestPicard:
    def test_zero_scenario_one_inner_iteration(self):
        st = Stepper(make_scenario())
        state, _ = st.initial_state()
        res = st.picard_P(state.theta, state, 1)
        assert res.iterations == 1
        np.testing.assert_array_equal(res.u, 0.0)
        new, rep = st.picard_R(state, 1)
        assert rep.r_iterations == 1
        np.testing.assert_array_equal(new.theta, 0.0)

    def test_decoupled_outer_takes_two(self):
        st = Stepper(load_shipped("closed_box"))
        state, _ = st.initial_state()
        _, rep = st.picard_R(state, 1)
        assert rep.r_iterations == 2

    def test_inner_uniqueness(self):
        st = Stepper(load_shipped("standard"))
        traj, _ = run(st.scenario, st)
        a = st.picard_P(traj[5].theta, traj[5], 6)
        b = st.picard_P(traj[5].theta, traj[5], 6, eps_star0=np.zeros_like(traj[5].T))
        gap = st.ops.l2_norm_elem(strain_of(st.mesh, a.u) - strain_of(st.mesh, b.u))
        assert gap < 10 * st.params.picard_tol

    def test_outer_uniqueness(self):
        st = Stepper(load_shipped("standard"))
        traj, _ = run(st.scenario, st)
        a, _ = st.picard_R(traj[10], 11)
        b, _ = st.picard_R(traj[10], 11, theta_star0=np.zeros(st.mesh.n_nodes))
        assert st.ops.l2_norm_nodal(a.theta - b.theta) < 10 * st.params.picard_tol

    def test_inner_ratio_shrinks_with_dt(self):
        sc = load_shipped("standard")
        ratios = []
        for dt in (0.01, 0.005):
            st = Stepper(sc.with_dt(dt))
            state, _ = st.initial_state()
            ratios.append(max(st.picard_P(state.theta, state, 1).ratios))
        assert ratios[1] < ratios[0] < 1

    def test_iteration_cap(self):
        sc = make_scenario(solver__picard_max=1, boundary__g_D="ramp", boundary__g_D__matrix="1 0 0 -1")
        st = Stepper(sc)
        state, _ = st.initial_state()
        with pytest.raises(PicardError, match="reduce time.dt"):
            st.picard_P(state.theta, state, 1)
        with pytest.raises(StepFailure) as info:
            run(sc)
        assert info.value.step == 1
        assert len(info.value.trajectory) == 1
        assert info.value.report.failure


class TestRun:
    def test_zero_data_zero_trajectory(self):
        traj, rep = run(make_scenario())
        assert len(traj) == 6
        for s in traj:
            for name in ("u", "u_t", "theta", "eps_p", "T"):
                np.testing.assert_array_equal(getattr(s, name), 0.0)
        assert [r.t for r in rep.rows] == pytest.approx([0, 0.02, 0.04, 0.06, 0.08, 0.1])

    def test_stress_relaxation(self):
        sc = _affine(boundary__g_D__matrix="0.8 0.3 0.0 -0.5", initial__u0__matrix="0.8 0.3 0.0 -0.5", time__t_final=0.4)
        traj, _ = run(sc)
        mags = np.array([norm(dev(s.T)) for s in traj])
        assert np.all(np.diff(mags, axis=0) <= 1e-14)
        assert mags[-1].max() < 0.9 * mags[0].max()

    def test_invariants_hold(self):
        st = Stepper(load_shipped("heated_plate"))
        traj, _ = run(st.scenario, st)
        for s in traj:
            assert st.check_state(s) == []

    def test_check_state_flags_problems(self):
        st = Stepper(make_scenario())
        state, _ = st.initial_state()
        bad = SimState(state.t, state.u, state.u_t, state.theta, state.eps_p + 1e-6 * identity(), state.T)
        problems = st.check_state(bad)
        assert any("trace" in p for p in problems)
        assert any("stress cache" in p for p in problems)

    def test_stability_violation_is_step_failure(self):
        sc = make_scenario(solver__substeps=1, material__yosida_lambda=0.01)
        with pytest.raises(StepFailure, match="substeps"):
            run(sc)
