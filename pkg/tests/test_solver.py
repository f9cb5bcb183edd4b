import math

import numpy as np
import pytest

from hsbinn.capmodel import DrugConfig, StimulusSpec
from hsbinn.solver import (
    DEFAULT_STIMULUS,
    CalibrationError,
    SolveConfig,
    TRAJECTORY_HEADER,
    calibrate_stimulus,
    read_trajectory_csv,
    resting_state,
    solve,
    solve_batch,
    write_trajectory_csv,
)


def random_drugs(rng, n):
    return [DrugConfig(c=rng.uniform(0, 4), ic50_naf=rng.uniform(0.1, 100),
                       ic50_cal=rng.uniform(0.1, 100), ic50_tof=rng.uniform(0.1, 100),
                       ic50_kr=rng.uniform(0.1, 100)) for _ in range(n)]


class TestRestingState:
    def test_fast_sodium_activation_value(self):
        # sigma((-85 + 25) / 5) evaluated directly
        expected = 1.0 / (1.0 + math.exp(12.0))
        state = resting_state(-85.0)
        assert state[3] == pytest.approx(expected, rel=1e-14)
        assert state[3] == pytest.approx(6.1442e-6, rel=1e-4)

    def test_fast_sodium_inactivation_midpoint(self):
        assert resting_state(-69.0)[5] == 0.5

    def test_is_gate_fixed_point(self):
        from hsbinn.capmodel import rhs
        d = rhs(0.0, resting_state(-85.0), DrugConfig.drug_free())
        np.testing.assert_array_equal(d[1:], np.zeros(13))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            resting_state(float("nan"))


class TestSolve:
    def test_rest_is_persistent_without_stimulus(self):
        traj = solve(DrugConfig.drug_free(), stim=StimulusSpec.off())
        assert np.abs(traj.v + 85.0).max() < 1.0

    def test_zero_concentration_identity(self):
        rng = np.random.default_rng(0)
        base = solve(DrugConfig.drug_free())
        for _ in range(5):
            d = DrugConfig(c=0.0, ic50_naf=rng.uniform(0.1, 100),
                           ic50_cal=rng.uniform(0.1, 100),
                           ic50_tof=rng.uniform(0.1, 100),
                           ic50_kr=rng.uniform(0.1, 100))
            np.testing.assert_array_equal(solve(d).states, base.states)

    def test_tolerance_halving_pointwise(self):
        drug = DrugConfig.drug_free()
        coarse = solve(drug, cfg=SolveConfig(rtol=1e-7, atol=1e-9))
        fine = solve(drug, cfg=SolveConfig(rtol=5e-8, atol=5e-10))
        v_range = coarse.v.max() - coarse.v.min()
        assert np.abs(coarse.v - fine.v).max() < 1e-7 * v_range

    def test_step_halving_order(self):
        # quasi-fixed-step runs against a tight-tolerance reference; a
        # 4(5) pair must gain at least 4x per step halving on a smooth
        # stretch (stimulus edges land on step boundaries)
        drug = DrugConfig.drug_free()
        u0 = resting_state(-85.0)
        t_end = 10.0
        ref = solve(drug, cfg=SolveConfig(t_end=t_end, rtol=1e-12, atol=1e-14,
                                          grid_dt=t_end), u0=u0).states[-1]
        errs = []
        for h in (0.008, 0.004, 0.002):
            cfg = SolveConfig(t_end=t_end, rtol=10.0, atol=1e7, max_step=h,
                              grid_dt=t_end)
            end = solve(drug, cfg=cfg, u0=u0).states[-1]
            errs.append(np.abs(end - ref).max())
        assert errs[0] / errs[1] >= 4.0
        assert errs[1] / errs[2] >= 4.0

    def test_grid_and_shape(self):
        cfg = SolveConfig(t_end=100.0, grid_dt=0.5)
        traj = solve(DrugConfig.drug_free(), cfg=cfg)
        assert traj.t[0] == 0.0 and traj.t[-1] == 100.0
        assert traj.t.size == 201
        assert traj.states.shape == (201, 14)
        assert np.all(np.diff(traj.t) > 0)

    def test_gate_columns_within_tolerance_band(self):
        cfg = SolveConfig()
        tol = 10 * cfg.atol
        for drug in (DrugConfig.drug_free(), DrugConfig(c=4, ic50_kr=0.1)):
            traj = solve(drug, cfg=cfg)
            gates = traj.states[:, 1:]
            assert gates.min() >= -tol
            assert gates.max() <= 1 + tol

    def test_determinism(self):
        a = solve(DrugConfig(c=2.0))
        b = solve(DrugConfig(c=2.0))
        np.testing.assert_array_equal(a.states, b.states)

    def test_bad_u0_shape(self):
        with pytest.raises(ValueError):
            solve(DrugConfig.drug_free(), u0=np.zeros(5))

    def test_action_potential_fires_with_default_stimulus(self):
        traj = solve(DrugConfig.drug_free())
        assert traj.v.max() > 10.0


class TestSolveBatch:
    def test_single_element_equals_solve(self):
        drug = DrugConfig(c=1.0)
        batch = solve_batch([drug])
        ref = solve(drug)
        np.testing.assert_array_equal(batch[0].states, ref.states)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        drugs = random_drugs(rng, 4)
        fwd = solve_batch(drugs)
        rev = solve_batch(drugs[::-1])
        for a, b in zip(fwd, rev[::-1]):
            np.testing.assert_array_equal(a.states, b.states)

    def test_random_configs_all_solve(self):
        rng = np.random.default_rng(2)
        drugs = random_drugs(rng, 40)
        results = solve_batch(drugs)
        assert all(r is not None for r in results)

    def test_thread_count_does_not_change_results(self):
        rng = np.random.default_rng(3)
        drugs = random_drugs(rng, 4)
        seq = solve_batch(drugs, threads=1)
        par = solve_batch(drugs, threads=4)
        for a, b in zip(seq, par):
            np.testing.assert_array_equal(a.states, b.states)


class TestCalibration:
    def test_zero_amplitude_keeps_rest(self):
        traj = solve(DrugConfig.drug_free(), stim=StimulusSpec.off())
        assert traj.v.max() < -80.0

    def test_replay_meets_target(self):
        cfg = SolveConfig(t_end=50.0)  # the peak happens in the first ms
        spec = calibrate_stimulus(target_peak=10.0, cfg=cfg)
        traj = solve(DrugConfig.drug_free(), stim=spec, cfg=cfg)
        assert traj.v.max() >= 10.0

    def test_doubled_amplitude_single_ap(self):
        spec = DEFAULT_STIMULUS
        doubled = StimulusSpec(onset=spec.onset, duration=spec.duration,
                               amplitude=2 * spec.amplitude)
        traj = solve(DrugConfig.drug_free(), stim=doubled)
        v = traj.v
        upward = np.sum((v[:-1] < 0.0) & (v[1:] >= 0.0))
        assert upward == 1

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            calibrate_stimulus(target_peak=0.0)

    def test_unreachable_target_raises(self):
        with pytest.raises(CalibrationError):
            calibrate_stimulus(target_peak=500.0, cfg=SolveConfig(t_end=50.0))


class TestTrajectoryCsv:
    def test_round_trip(self, tmp_path):
        traj = solve(DrugConfig(c=0.7), cfg=SolveConfig(t_end=20.0))
        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        first = path.read_text().splitlines()[0]
        assert first == TRAJECTORY_HEADER
        back = read_trajectory_csv(path)
        np.testing.assert_array_equal(back.t, traj.t)
        np.testing.assert_array_equal(back.states, traj.states)

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,voltage\n0,1\n")
        with pytest.raises(ValueError):
            read_trajectory_csv(path)
