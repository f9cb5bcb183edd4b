import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsbinn import capmodel
from hsbinn.capmodel import (
    DrugConfig,
    GATES,
    ModelConstants,
    StimulusSpec,
    gate_rates,
    gate_steady_states,
    inhibition_factor,
    ionic_currents,
    rhs,
    rhs_batch,
    rhs_jacobian,
    stimulus,
)
from hsbinn.solver import resting_state

import oracle_model


def random_state(rng):
    v = rng.uniform(-120.0, 60.0)
    gates = rng.uniform(0.0, 1.0, size=13)
    return np.concatenate(([v], gates))


def random_drug(rng):
    return DrugConfig(c=rng.uniform(0, 4), ic50_naf=rng.uniform(0.1, 100),
                      ic50_cal=rng.uniform(0.1, 100), ic50_tof=rng.uniform(0.1, 100),
                      ic50_kr=rng.uniform(0.1, 100))


class TestInhibition:
    def test_zero_concentration_no_block(self):
        assert inhibition_factor(0.0, 10.0) == 1.0

    def test_ic50_halves_conductance(self):
        assert inhibition_factor(10.0, 10.0) == 0.5

    def test_direct_formula(self):
        assert inhibition_factor(4.0, 0.1) == pytest.approx(1.0 / 41.0, rel=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            inhibition_factor(1.0, 0.0)
        with pytest.raises(ValueError):
            inhibition_factor(1.0, -2.0)
        with pytest.raises(ValueError):
            inhibition_factor(-0.5, 1.0)

    @given(c=st.floats(0, 1e3), ic50=st.floats(1e-3, 1e3))
    def test_range(self, c, ic50):
        k = inhibition_factor(c, ic50)
        assert 0.0 < k <= 1.0

    @given(c=st.floats(0, 100), dc=st.floats(1e-6, 100), ic50=st.floats(0.01, 100))
    def test_monotone_in_concentration(self, c, dc, ic50):
        assert inhibition_factor(c + dc, ic50) < inhibition_factor(c, ic50)

    @given(c=st.floats(1e-3, 100), ic50=st.floats(0.01, 100), dic=st.floats(1e-6, 100))
    def test_monotone_in_ic50(self, c, ic50, dic):
        assert inhibition_factor(c, ic50 + dic) > inhibition_factor(c, ic50)


class TestGates:
    def test_fast_sodium_activation_midpoint(self):
        # sigma(0) at V = -25
        idx = capmodel.GATE_NAMES.index("f_NaF")
        assert gate_steady_states(-25.0)[idx] == 0.5

    def test_fast_sodium_inactivation_midpoint(self):
        idx = capmodel.GATE_NAMES.index("h_NaF")
        assert gate_steady_states(-69.0)[idx] == 0.5

    def test_calcium_activation_at_rest(self):
        # oracle: direct sigmoid evaluation at (v + 14.6) / 5.5
        expected = 1.0 / (1.0 + math.exp(-(-85.0 + 14.6) / 5.5))
        idx = capmodel.GATE_NAMES.index("f_CaL")
        got = gate_steady_states(-85.0)[idx]
        assert got == pytest.approx(expected, rel=1e-14)
        assert got == pytest.approx(2.760765e-6, rel=1e-6)

    @given(v=st.floats(-150, 100))
    def test_steady_states_in_unit_interval(self, v):
        # strict interior on the physiological band; far outside it the
        # sigmoids saturate to exactly 0/1 in float64
        m = gate_steady_states(v)
        assert np.all(m > 0) and np.all(m < 1)

    @given(v=st.floats(-500, 500))
    def test_steady_states_never_escape(self, v):
        m = gate_steady_states(v)
        assert np.all(m >= 0) and np.all(m <= 1)

    @given(v=st.floats(-150, 100))
    def test_rates_positive(self, v):
        assert np.all(gate_rates(v) > 0)

    def test_gate_spec_handles(self):
        for spec in GATES:
            assert 0 < spec.steady(-40.0) < 1
            assert spec.rate(-40.0) > 0


class TestCurrents:
    def test_potassium_currents_vanish_at_reversal(self):
        rng = np.random.default_rng(0)
        state = random_state(rng)
        state[0] = -85.0  # V = E_K
        cur = ionic_currents(state, random_drug(rng))
        names = capmodel.CURRENT_NAMES
        for name in ("I_ToF", "I_KR", "I_ToS", "I_KL", "I_KI"):
            assert cur[names.index(name)] == 0.0

    def test_zero_concentration_matches_drug_free(self):
        rng = np.random.default_rng(1)
        state = random_state(rng)
        blocked = DrugConfig(c=0.0, ic50_naf=0.3, ic50_cal=7.0, ic50_tof=0.11, ic50_kr=55.0)
        np.testing.assert_array_equal(
            ionic_currents(state, blocked),
            ionic_currents(state, DrugConfig.drug_free()))

    def test_against_independent_transcription(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            state = random_state(rng)
            drug = random_drug(rng)
            mine = ionic_currents(state, drug)
            ref = oracle_model.currents(list(state), list(drug.as_array()))
            np.testing.assert_allclose(mine, ref, rtol=1e-13, atol=1e-300)


class TestStimulus:
    def test_outside_window(self):
        assert stimulus(250.0, StimulusSpec(0.0, 1.0, -40.0)) == 0.0

    def test_inside_window(self):
        assert stimulus(0.5, StimulusSpec(0.0, 1.0, -40.0)) == -40.0

    def test_rectangle_area(self):
        spec = StimulusSpec(onset=2.0, duration=3.0, amplitude=-25.0)
        ts = np.linspace(0.0, 500.0, 2_000_001)
        dt = ts[1] - ts[0]
        integral = sum(stimulus(t, spec) for t in ts[:-1]) * dt
        assert integral == pytest.approx(spec.amplitude * spec.duration, rel=1e-3)

    def test_duration_must_be_positive(self):
        with pytest.raises(ValueError):
            StimulusSpec(duration=0.0)


class TestRhs:
    def test_gate_at_steady_state_has_zero_derivative(self):
        rng = np.random.default_rng(3)
        state = random_state(rng)
        m = gate_steady_states(state[0])
        for k in range(13):
            s = state.copy()
            s[1 + k] = m[k]
            assert rhs(0.0, s, DrugConfig.drug_free())[1 + k] == 0.0

    def test_resting_state_residual(self):
        # gates are at their fixed point by construction; the voltage
        # derivative is small but nonzero (computed: ~+0.016 mV/ms, the
        # inward-rectifier current balances it ~0.2 mV above -85)
        d = rhs(100.0, resting_state(-85.0), DrugConfig.drug_free())
        np.testing.assert_array_equal(d[1:], np.zeros(13))
        assert abs(d[0]) < 0.02

    def test_voltage_component_is_compositional(self):
        rng = np.random.default_rng(4)
        state = random_state(rng)
        drug = random_drug(rng)
        spec = StimulusSpec(0.0, 1.0, -40.0)
        d = rhs(0.5, state, drug, spec)
        expected = -(stimulus(0.5, spec) + ionic_currents(state, drug).sum())
        assert d[0] == pytest.approx(expected, rel=1e-15)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(5)
        state = random_state(rng)
        drug = random_drug(rng)
        np.testing.assert_array_equal(rhs(1.0, state, drug), rhs(1.0, state, drug))

    def test_zero_concentration_independent_of_ic50(self):
        rng = np.random.default_rng(6)
        state = random_state(rng)
        base = rhs(0.0, state, DrugConfig(c=0.0))
        for _ in range(10):
            d = DrugConfig(c=0.0, ic50_naf=rng.uniform(0.1, 100),
                           ic50_cal=rng.uniform(0.1, 100),
                           ic50_tof=rng.uniform(0.1, 100),
                           ic50_kr=rng.uniform(0.1, 100))
            np.testing.assert_array_equal(rhs(0.0, state, d), base)

    @given(v=st.floats(-120, 60), k=st.integers(0, 12))
    @settings(max_examples=50)
    def test_gate_derivative_points_into_unit_interval(self, v, k):
        state = np.concatenate(([v], np.full(13, 0.5)))
        state[1 + k] = 0.0
        assert rhs(0.0, state, DrugConfig.drug_free())[1 + k] >= 0.0
        state[1 + k] = 1.0
        assert rhs(0.0, state, DrugConfig.drug_free())[1 + k] <= 0.0

    def test_matches_oracle_transcription(self):
        rng = np.random.default_rng(7)
        spec = StimulusSpec(0.0, 1.0, -35.0)
        for _ in range(100):
            state = random_state(rng)
            drug = random_drug(rng)
            t = rng.uniform(0, 500)
            mine = rhs(t, state, drug, spec)
            ref = oracle_model.full_rhs(t, list(state), list(drug.as_array()),
                                        stim=(0.0, 1.0, -35.0))
            np.testing.assert_allclose(mine, ref, rtol=1e-12, atol=1e-300)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(8)
        drug = random_drug(rng)
        states = np.stack([random_state(rng) for _ in range(7)])
        ts = rng.uniform(0, 500, size=7)
        spec = StimulusSpec(0.0, 1.0, -35.0)
        batch = rhs_batch(ts, states, drug, spec)
        for i in range(7):
            np.testing.assert_array_equal(batch[i], rhs(ts[i], states[i], drug, spec))


class TestJacobian:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            state = random_state(rng)
            drug = random_drug(rng)
            jac = rhs_jacobian(state, drug)
            fd = np.empty_like(jac)
            h0 = 1e-6
            for j in range(14):
                h = h0 * max(1.0, abs(state[j]))
                sp = state.copy(); sp[j] += h
                sm = state.copy(); sm[j] -= h
                fd[:, j] = (rhs(0.0, sp, drug) - rhs(0.0, sm, drug)) / (2 * h)
            scale = np.abs(jac).max()
            np.testing.assert_allclose(jac, fd, atol=5e-5 * scale, rtol=5e-5)

    def test_gate_rows_are_diagonal_plus_voltage(self):
        rng = np.random.default_rng(10)
        state = random_state(rng)
        jac = rhs_jacobian(state, random_drug(rng))
        for k in range(1, 14):
            row = jac[k].copy()
            row[0] = 0.0
            row[k] = 0.0
            np.testing.assert_array_equal(row, np.zeros(14))
            assert jac[k, k] < 0  # relaxation toward the steady state


class TestTypes:
    def test_drugconfig_validation(self):
        with pytest.raises(ValueError):
            DrugConfig(c=-1.0)
        with pytest.raises(ValueError):
            DrugConfig(ic50_kr=0.0)

    def test_drugconfig_array_round_trip(self):
        d = DrugConfig(c=1.5, ic50_naf=2, ic50_cal=3, ic50_tof=4, ic50_kr=5)
        assert DrugConfig.from_array(d.as_array()) == d

    def test_constants_validation_and_override(self):
        with pytest.raises(ValueError):
            ModelConstants(g_kr=0.0)
        tweaked = ModelConstants().with_overrides(g_kr=0.06)
        assert tweaked.g_kr == 0.06
        assert tweaked.g_cal == ModelConstants().g_cal
