from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import make_scenario
from oracles import uniaxial_plastic_strain
from tvp import oracle0d
from tvp.constitutive import MaterialParams, ThermalCoupling
from tvp.scenario import load_shipped
from tvp.stepper import run
from tvp.tensor import ElasticityTensor, dev, inner, trace

RAMP = oracle0d.StrainHistory("ramp", (1.0, -0.5, -0.5, 0.0, 0.0, 0.0))
EXACT_P2 = MaterialParams(p=2.0, eps_trunc=1.0, yosida_lambda=0.0, elasticity=ElasticityTensor(0.0, 1.0))
# eps_p_xx(1) for the ramp above, recorded by the oracle itself at n = 1e5 (n = 2e5 agrees to 5e-16)
RAMP_EPS_P_XX = 0.558872654316042


class TestHistories:
    def test_catalog(self):
        h = oracle0d.StrainHistory("sinusoid", (1, 0, 0, 0, 0, 0), omega=2.0)
        assert h.value(0.3)[0] == pytest.approx(np.sin(0.6))
        assert h.rate_at(0.3)[0] == pytest.approx(2 * np.cos(0.6))
        hold = oracle0d.StrainHistory("hold", (0.1, 0, 0, 0, 0, 0))
        assert hold.value(5.0)[0] == 0.1 and hold.rate_at(5.0)[0] == 0.0
        with pytest.raises(ValueError):
            oracle0d.StrainHistory("jump", (0,) * 6)
        with pytest.raises(ValueError):
            oracle0d.StrainHistory("hold", (0,) * 3)


class TestIntegratePoint:
    def test_zero_history_stays(self):
        h = oracle0d.StrainHistory("hold", (0.0,) * 6)
        traj = oracle0d.integrate_point(EXACT_P2, h, 0.3, 1.0, 100)
        np.testing.assert_array_equal(traj.eps_p, 0.0)
        np.testing.assert_array_equal(traj.theta, 0.3)

    def test_regression_constant(self):
        traj = oracle0d.integrate_point(EXACT_P2, RAMP, 0.0, 1.0, 100_000, record_every=100_000)
        assert traj.eps_p[-1, 0] == pytest.approx(RAMP_EPS_P_XX, rel=1e-13)

    def test_independent_ode_solver_agrees(self):
        assert uniaxial_plastic_strain(2.0, 1.0, 1.0) == pytest.approx(RAMP_EPS_P_XX, rel=1e-9)

    def test_trajectory_invariants(self):
        m = MaterialParams(3.0, 0.5, 0.05, ElasticityTensor(1.0, 1.0), ThermalCoupling("linear", 0.3))
        h = oracle0d.StrainHistory("sinusoid", (0.5, -0.2, 0.0, 0.3, 0.0, 0.0), omega=3.0)
        traj = oracle0d.integrate_point(m, h, 0.1, 2.0, 4000, record_every=10)
        np.testing.assert_allclose(trace(traj.eps_p), 0.0, atol=1e-14)
        np.testing.assert_allclose(traj.T, m.elasticity.apply(traj.strain - traj.eps_p), atol=1e-15)
        rate = np.gradient(traj.eps_p, traj.times, axis=0)
        assert np.all(inner(dev(traj.T), rate)[1:-1] >= -1e-6)

    def test_dissipation_along_exact_flow(self):
        traj = oracle0d.integrate_point(EXACT_P2, RAMP, 0.0, 1.0, 2000, record_every=20)
        assert np.all(np.diff(traj.theta) >= 0)

    def test_energy_ledger(self):
        m = MaterialParams(2.0, 2.0, 0.0, ElasticityTensor(0.5, 1.0))
        traj = oracle0d.integrate_point(m, RAMP, 0.0, 1.0, 20_000, record_every=20)
        # truncation is active near the end of this run
        assert oracle0d.energy_ledger_gap(m, RAMP, traj) < 1e-6

    def test_richardson(self):
        m = MaterialParams(3.0, 1.0, 0.1, ElasticityTensor(1.0, 1.0))
        assert oracle0d.richardson_gap(m, RAMP, 0.0, 0.5, 2000) < 1e-10

    def test_bad_record_stride(self):
        with pytest.raises(ValueError):
            oracle0d.integrate_point(EXACT_P2, RAMP, 0.0, 1.0, 10, record_every=3)


class TestCompare:
    def test_rejects_non_homogeneous(self):
        with pytest.raises(oracle0d.OracleError, match="single-cell"):
            oracle0d.compare_with_stepper(load_shipped("closed_box"))

    def test_zero_scenario(self):
        sc = make_scenario(mesh__nx=1, mesh__ny=1)
        rows = oracle0d.compare_with_stepper(sc, halvings=1, oracle_steps=1000)
        assert [r.error for r in rows] == [0.0, 0.0]

    def test_history_mapping(self):
        h = oracle0d.history_from_scenario(load_shipped("single_element"))
        assert h.kind == "ramp" and h.rate == 2.0
        assert h.E == (1.0, -0.5, 0.0, 0.3, 0.0, 0.0)

    def test_regularization_gap_shrinks_with_lambda(self):
        sc = load_shipped("single_element")
        exact = MaterialParams(sc.material.p, sc.material.eps_trunc, 0.0, sc.material.elasticity, sc.material.coupling)
        ref = oracle0d.integrate_point(exact, oracle0d.history_from_scenario(sc), 0.1, sc.t_final, 16_000, record_every=200)
        gaps = []
        for lam in (0.2, 0.05, 0.005):
            fine = replace(sc.with_lambda(lam), solver=replace(sc.solver, dt=0.005, substeps=3))
            traj, _ = run(fine)
            gaps.append(max(np.abs(s.T.mean(axis=0) - ref.T[n]).max() for n, s in enumerate(traj)))
        assert gaps[0] > gaps[1] > gaps[2]
