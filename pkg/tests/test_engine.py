import pickle

import numpy as np
import pytest

from selfplay_ipd.engine import (
    BITS_PAVLOV,
    RunConfig,
    cooperation_probability,
    optimistic_default_qtable,
    run,
    run_batch,
    step,
)
from selfplay_ipd.equilibria import solve_fixed_point
from selfplay_ipd.game import Action, State, payoff_from_g
from selfplay_ipd.policy import PAVLOV, PolicyProfile, QTable, RandomStream


def test_single_step_hand_evaluated():
    # from the all-defect region: q[DD,D] <- 6.5 + 0.1*(2 + 0.6*6.5 - 6.5)
    cfg = RunConfig(epsilon=0.0)
    q = optimistic_default_qtable()
    q2, actions, log = step(q, (Action.D, Action.D), cfg, RandomStream(0))
    assert actions == (Action.D, Action.D)
    assert log.r1 == log.r2 == 2.0
    assert q2[State.DD, Action.D] == pytest.approx(6.44, abs=1e-12)
    assert q2[State.DD, Action.C] == 6.0


def test_zero_alpha_is_a_no_op():
    cfg = RunConfig(alpha=0.0, epsilon=0.0, n_iter=50)
    rec = run(cfg)
    assert np.array_equal(rec.q_final.values, rec.q_init.values)


def test_phase1_contraction_factor():
    # Q[DD,D] approaches r_dd/(1-gamma) = 5 with factor 1 - alpha(1-gamma)
    cfg = RunConfig(epsilon=0.0, n_iter=1)
    rec = run(cfg)
    before = rec.q_init[State.DD, Action.D]
    after = rec.q_final[State.DD, Action.D]
    assert after - 5.0 == pytest.approx(0.96 * (before - 5.0), abs=1e-12)


def test_preset_run_reaches_pavlov_and_stays():
    rec = run(RunConfig(n_iter=2000))
    assert rec.final_policy == PAVLOV
    assert rec.t1 == 10
    assert rec.t2 is not None and rec.t1 < rec.t2
    assert all(int(b) == BITS_PAVLOV for b in rec.policy_bits[rec.t2:])


def test_pavlov_fixed_point_is_absorbing():
    m = payoff_from_g(1.8)
    q_star = solve_fixed_point(PolicyProfile.pavlov(), m, 0.6).q_star
    cfg = RunConfig(q_init=q_star, epsilon=0.0, n_iter=500)
    rec = run(cfg)
    assert rec.t2 == 0
    assert rec.final_policy == PAVLOV
    # the table starts at the fixed point and never moves away from it
    assert np.max(np.abs(rec.q_final.values - q_star.values)) <= 1e-12


def test_determinism_bit_identical():
    cfg = RunConfig(epsilon=0.05, seed=99, n_iter=500)
    a = run(cfg)
    b = run(cfg)
    assert np.array_equal(a.snapshots, b.snapshots)
    assert np.array_equal(a.a1, b.a1)
    assert a.t1 == b.t1 and a.t2 == b.t2


def test_run_matches_repeated_step():
    cfg = RunConfig(epsilon=0.1, seed=17, n_iter=200)
    rec = run(cfg)
    q = cfg.resolve_q_init()
    rng = RandomStream(cfg.seed, 0)
    prev = (cfg.s0.own_prev, cfg.s0.opp_prev)
    for t in range(1, cfg.n_iter + 1):
        q, prev, log = step(q, prev, cfg, rng)
        assert np.array_equal(q.values, rec.snapshots[t])


def test_diagonal_symmetry_without_exploration():
    rec = run(RunConfig(epsilon=0.0, n_iter=300))
    assert np.array_equal(rec.a1, rec.a2)


def test_both_perspectives_coincides_on_diagonal_greedy_runs():
    a = run(RunConfig(epsilon=0.0, n_iter=300, update_mode="p1_only"))
    b = run(RunConfig(epsilon=0.0, n_iter=300, update_mode="both_perspectives"))
    assert np.array_equal(a.snapshots, b.snapshots)


def test_both_perspectives_updates_two_entries_off_diagonal():
    cfg = RunConfig(epsilon=0.0, n_iter=1, s0=State.CD,
                    update_mode="both_perspectives")
    rec = run(cfg)
    assert len(rec.updated[0]) == 2


def test_per_step_change_bound_smoke():
    # |dQ| <= delta_r * alpha / (1 - gamma) = 0.5 at the defaults
    cfg = RunConfig(epsilon=0.1, alpha=0.1, n_iter=2000)
    for j in range(20):
        rec = run(cfg, run_index=j)
        assert float(np.max(rec.step_change)) <= 0.5 + 1e-12


def test_entries_stay_inside_the_value_band():
    # band [r_min/(1-gamma) - B0, r_max/(1-gamma) + B0], with B0 the largest
    # initial deviation from the band (0.5 for the preset: 4.0 vs 4.5)
    cfg = RunConfig(epsilon=0.1, alpha=0.1, n_iter=2000)
    m, gamma = cfg.payoff, cfg.gamma
    lo = m.r_min / (1.0 - gamma)
    hi = m.r_max / (1.0 - gamma)
    q0 = cfg.resolve_q_init().values
    b0 = max(float(np.max(q0 - hi)), float(np.max(lo - q0)), 0.0)
    assert b0 == 0.5
    for j in range(20):
        rec = run(cfg, run_index=j)
        assert float(np.min(rec.snapshots)) >= lo - b0 - 1e-12
        assert float(np.max(rec.snapshots)) <= hi + b0 + 1e-12


def test_cooperation_probability_deterministic_case():
    est, ci = cooperation_probability(RunConfig(epsilon=0.0, n_iter=2000), 10)
    assert est == 1.0
    assert ci == 0.0


def test_mild_exploration_almost_recovers_the_greedy_case():
    cfg = RunConfig(epsilon=0.01, alpha=0.1, n_iter=2000, seed=21,
                    snapshot_stride=2000)
    est, _ = cooperation_probability(cfg, 100)
    assert est >= 0.9


def test_parallel_batch_matches_serial():
    cfg = RunConfig(epsilon=0.1, seed=5, n_iter=400)
    serial = run_batch(cfg, 12, n_jobs=1)
    parallel = run_batch(cfg, 12, n_jobs=3)
    assert serial == parallel


def test_zero_iterations_classifies_initial_table():
    rec = run(RunConfig(n_iter=0))
    assert rec.n_steps == 0
    assert rec.final_policy == "always_defect"
    assert list(rec.snapshot_times) == [0]


def test_pavlov_init_time_zero():
    q = QTable.from_profile(PolicyProfile.pavlov())
    rec = run(RunConfig(q_init=q, n_iter=0))
    assert rec.t2 == 0


def test_snapshot_stride_default_switches_for_long_runs():
    assert RunConfig(n_iter=2000).effective_stride() == 1
    assert RunConfig(n_iter=20_000).effective_stride() == 10
    assert RunConfig(n_iter=20_000, snapshot_stride=1).effective_stride() == 1


def test_config_validation():
    with pytest.raises(ValueError, match="gamma"):
        RunConfig(gamma=1.0)
    with pytest.raises(ValueError, match="alpha"):
        RunConfig(alpha=1.5)
    with pytest.raises(ValueError, match="epsilon"):
        RunConfig(epsilon=0.6)
    with pytest.raises(ValueError, match="update_mode"):
        RunConfig(update_mode="p2_only")


def test_config_json_round_trip():
    cfg = RunConfig(epsilon=0.05, seed=11, n_iter=123)
    again = RunConfig.from_json_dict(cfg.to_json_dict())
    assert again == cfg
    explicit = RunConfig.from_json_dict(
        {"g": 1.5, "gamma": 0.7, "q_init": optimistic_default_qtable().to_json_dict()})
    assert explicit.payoff.g == 1.5
    assert explicit.resolve_q_init() == optimistic_default_qtable()


def test_summary_contains_required_fields():
    rec = run(RunConfig(n_iter=100))
    summary = rec.summary_json_dict()
    for key in ("final_policy", "t1", "t2", "seed", "config"):
        assert key in summary


def test_record_pickles_for_worker_pools():
    rec = run(RunConfig(n_iter=50))
    clone = pickle.loads(pickle.dumps(rec))
    assert clone.final_policy == rec.final_policy
