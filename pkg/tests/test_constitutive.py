from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_resolvent, frob, mp_root_radius
from tvp.constitutive import (
    MaterialParams,
    ThermalCoupling,
    f_eval,
    f_prime,
    flow_rule,
    moreau_env,
    potential,
    radial_split,
    resolvent,
    truncate,
    truncate_deriv,
    yosida_grad,
)
from tvp.tensor import WEIGHTS, ElasticityTensor, dev, inner, norm, to_matrix

P_VALUES = (1.5, 2.0, 3.0, 5.0)


def _dev_sample(rng, n, scale=1.0):
    return dev(rng.normal(size=(n, 6))) * scale


class TestFlowRule:
    def test_matches_matrix_formula(self):
        rng = np.random.default_rng(0)
        z = _dev_sample(rng, 20)
        for p in P_VALUES:
            r = np.linalg.norm(to_matrix(z), axis=(1, 2))
            ref = (r ** (p - 1))[:, None] * z
            np.testing.assert_allclose(flow_rule(z, p), ref, rtol=1e-14)

    def test_zero_and_traceless(self):
        np.testing.assert_array_equal(flow_rule(np.zeros(6), 3.0), np.zeros(6))
        rng = np.random.default_rng(1)
        g = flow_rule(_dev_sample(rng, 5), 2.5)
        np.testing.assert_allclose(g[:, :3].sum(axis=1), 0.0, atol=1e-14)

    def test_is_gradient_of_potential(self):
        z = dev(np.array([0.4, -0.3, 0.1, 0.2, -0.05, 0.3]))
        h = 1e-6
        for p in P_VALUES:
            fd = np.array([
                (potential(z + h * e, p) - potential(z - h * e, p)) / (2 * h) for e in np.eye(6)
            ]) / WEIGHTS
            np.testing.assert_allclose(fd, flow_rule(z, p), rtol=1e-7)


class TestTruncation:
    def test_clamp(self):
        np.testing.assert_array_equal(truncate(np.array([-5.0, -1.0, 0.3, 2.0, 7.0]), 0.5), [-2, -1, 0.3, 2, 2])

    def test_derivative_zero_on_corners(self):
        np.testing.assert_array_equal(truncate_deriv(np.array([-2.0, -1.9, 0.0, 2.0, 3.0]), 0.5), [0, 1, 1, 0, 0])


class TestCoupling:
    @pytest.mark.parametrize("kind", ["zero", "linear", "saturating"])
    def test_derivative_finite_difference(self, kind):
        c = ThermalCoupling(kind, alpha=0.7, beta=1.5)
        theta = np.array([-3.0, -0.4, 0.2, 1.1, 4.0])
        h = 1e-6
        fd = (c.f(theta + h) - c.f(theta - h)) / (2 * h)
        np.testing.assert_allclose(c.f_prime(theta), fd, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(f_eval(theta, c), c.f(theta))
        np.testing.assert_allclose(f_prime(theta, c), c.f_prime(theta))

    def test_saturating_bounded(self):
        c = ThermalCoupling("saturating", alpha=2.0, beta=0.5)
        assert np.all(np.abs(c.f(np.linspace(-1e6, 1e6, 11))) <= 2.0 * 0.5)

    def test_material_truncates_before_coupling(self):
        m = MaterialParams(2.0, 0.5, 0.1, ElasticityTensor(1, 1), ThermalCoupling("linear", 3.0))
        np.testing.assert_allclose(m.f(np.array([-10.0, 1.0, 10.0])), [-6.0, 3.0, 6.0])
        assert m.height == 2.0

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            ThermalCoupling("cubic")
        with pytest.raises(ValueError):
            ThermalCoupling("saturating", beta=0.0)


class TestMaterialParams:
    @pytest.mark.parametrize("kw", [dict(p=1.0), dict(eps_trunc=0.0), dict(yosida_lambda=-1e-3)])
    def test_validation(self, kw):
        base = dict(p=2.0, eps_trunc=1.0, yosida_lambda=0.1, elasticity=ElasticityTensor(1, 1))
        base.update(kw)
        with pytest.raises(ValueError):
            MaterialParams(**base)


class TestRadialSplit:
    @pytest.mark.parametrize("p", P_VALUES)
    def test_against_high_precision_root(self, p):
        radii = np.array([1e-12, 1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3, 1e6])
        for lam in (1e-3, 0.1, 1.0):
            s, d = radial_split(radii, lam, p)
            for r, si, di in zip(radii, s, d):
                ref = mp_root_radius(r, lam, p)
                assert si == pytest.approx(ref, rel=1e-13)
                # the small component is computed directly, so both are accurate
                assert di == pytest.approx(r - ref, rel=1e-9, abs=1e-300) or di == pytest.approx(lam * ref**p, rel=1e-12)

    def test_small_d_has_no_cancellation(self):
        r, lam, p = 1e-4, 1e-3, 3.0
        s, d = radial_split(np.array([r]), lam, p)
        assert d[0] == pytest.approx(lam * s[0] ** p, rel=1e-13)

    def test_zero_radius(self):
        s, d = radial_split(np.zeros(3), 0.1, 2.0)
        np.testing.assert_array_equal(s, 0.0)
        np.testing.assert_array_equal(d, 0.0)


class TestResolvent:
    def test_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            p = rng.choice(P_VALUES)
            lam = 10 ** rng.uniform(-3, 0)
            z = rng.normal(size=6) * 10 ** rng.uniform(-2, 1.5)
            ref = brute_force_resolvent(z, lam, p)
            got = resolvent(z, lam, p)
            assert frob(got - ref) <= 1e-8 * frob(ref)

    def test_identity_when_lambda_zero(self):
        z = np.array([1.0, 2.0, 3.0, 0.1, 0.2, 0.3])
        np.testing.assert_array_equal(resolvent(z, 0.0, 2.0), z)
        with pytest.raises(ValueError):
            resolvent(z, -0.1, 2.0)

    def test_resolvent_equation(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(50, 6)) * 3
        for p in P_VALUES:
            j = resolvent(z, 0.05, p)
            np.testing.assert_allclose(j + 0.05 * flow_rule(j, p), z, rtol=1e-12, atol=1e-14)

    def test_yosida_identity(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(50, 6)) * 2
        for p in P_VALUES:
            for lam in (1e-3, 0.1, 1.0):
                g = yosida_grad(z, lam, p)
                np.testing.assert_allclose(g, flow_rule(resolvent(z, lam, p), p), rtol=1e-10, atol=1e-300)
                np.testing.assert_allclose(g, (z - resolvent(z, lam, p)) / lam, rtol=1e-7, atol=1e-12)

    def test_yosida_needs_positive_lambda(self):
        with pytest.raises(ValueError):
            yosida_grad(np.ones(6), 0.0, 2.0)
        with pytest.raises(ValueError):
            moreau_env(np.ones(6), 0.0, 2.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-50, 50, allow_nan=False), min_size=12, max_size=12),
        st.sampled_from(P_VALUES),
        st.floats(1e-3, 1.0),
    )
    def test_lipschitz_and_monotone(self, vals, p, lam):
        a, b = np.array(vals[:6]), np.array(vals[6:])
        ga, gb = yosida_grad(a, lam, p), yosida_grad(b, lam, p)
        assert frob(ga - gb) <= frob(a - b) / lam * (1 + 1e-9) + 1e-300
        assert inner(ga - gb, a - b) >= -1e-12 * (1 + frob(ga) * frob(a) + frob(gb) * frob(b))

    def test_moreau_envelope(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(30, 6))
        for p in P_VALUES:
            for lam in (1e-3, 0.1, 1.0):
                env = moreau_env(z, lam, p)
                assert np.all(env <= potential(z, p) * (1 + 1e-14))
                j = resolvent(z, lam, p)
                direct = norm(z - j) ** 2 / (2 * lam) + potential(j, p)
                np.testing.assert_allclose(env, direct, rtol=1e-12)
