import numpy as np
import pytest

from selfplay_ipd.equilibria import (
    is_subgame_perfect,
    joint_return,
    pavlov_epsilon_threshold,
    phase2_eigen,
    always_defect_closed_form,
    pavlov_closed_form,
    solve_fixed_point,
)
from selfplay_ipd.game import Action, State, payoff_from_g
from selfplay_ipd.policy import PolicyProfile

M18 = payoff_from_g(1.8)
GAMMA = 0.6


def test_always_defect_fixed_point_values():
    sol = solve_fixed_point(PolicyProfile.always_defect(), M18, GAMMA)
    assert sol.is_consistent
    assert sol.residual <= 1e-12
    for s in State:
        assert sol.q_star[s, Action.D] == pytest.approx(5.0, abs=1e-10)
        assert sol.q_star[s, Action.C] == pytest.approx(4.8, abs=1e-10)


def test_pavlov_fixed_point_values():
    sol = solve_fixed_point(PolicyProfile.pavlov(), M18, GAMMA)
    assert sol.is_consistent
    q = sol.q_star
    assert q[State.CC, Action.C] == pytest.approx(9.0, abs=1e-10)
    assert q[State.DD, Action.C] == pytest.approx(9.0, abs=1e-10)
    assert q[State.CC, Action.D] == pytest.approx(8.24, abs=1e-10)
    assert q[State.DD, Action.D] == pytest.approx(8.24, abs=1e-10)
    assert q[State.CD, Action.D] == pytest.approx(7.4, abs=1e-10)
    assert q[State.DC, Action.D] == pytest.approx(7.4, abs=1e-10)
    assert q[State.CD, Action.C] == pytest.approx(6.24, abs=1e-10)
    assert q[State.DC, Action.C] == pytest.approx(6.24, abs=1e-10)


def test_fixed_point_table_column():
    assert solve_fixed_point(PolicyProfile.grim_trigger(), M18, GAMMA).is_consistent
    assert not solve_fixed_point(PolicyProfile.lose_shift(), M18, GAMMA).is_consistent
    assert not solve_fixed_point(PolicyProfile.tit_for_tat(), M18, GAMMA).is_consistent


@pytest.mark.parametrize("epsilon", [0.0, 0.01, 0.05])
def test_all_16_profiles_solve_with_tiny_residual(epsilon):
    consistent = set()
    for profile in PolicyProfile.all_profiles(epsilon):
        sol = solve_fixed_point(profile, M18, GAMMA)
        assert sol.residual <= 1e-12
        if sol.is_consistent:
            consistent.add(profile.name)
    assert consistent == {"always_defect", "grim_trigger", "pavlov"}


def test_pavlov_symmetries_in_solver_output():
    for epsilon in (0.0, 0.05, 0.2):
        q = solve_fixed_point(PolicyProfile.pavlov(epsilon), M18, GAMMA).q_star
        assert q[State.CC, Action.C] == pytest.approx(q[State.DD, Action.C], abs=1e-12)
        assert q[State.CC, Action.D] == pytest.approx(q[State.DD, Action.D], abs=1e-12)
        assert q[State.CD, Action.C] == pytest.approx(q[State.DC, Action.C], abs=1e-12)
        assert q[State.CD, Action.D] == pytest.approx(q[State.DC, Action.D], abs=1e-12)


def test_always_defect_closed_form_no_exploration():
    q = always_defect_closed_form(M18, GAMMA, 0.0)
    for s in State:
        assert q[s, Action.D] == pytest.approx(5.0, abs=1e-12)
        assert q[s, Action.C] == pytest.approx(4.8, abs=1e-12)


def test_always_defect_closed_form_with_exploration():
    q = always_defect_closed_form(M18, GAMMA, 0.1)
    assert q[State.DD, Action.D] == pytest.approx(5.45, abs=1e-12)


def test_defect_closed_form_matches_solver_on_grid():
    for g in (1.2, 1.5, 1.8):
        m = payoff_from_g(g)
        for gamma in (0.2, 0.4, 0.6, 0.8):
            for eps in (0.0, 0.05, 0.1, 0.3):
                closed = always_defect_closed_form(m, gamma, eps)
                sol = solve_fixed_point(PolicyProfile.always_defect(eps), m, gamma)
                assert np.max(np.abs(closed.values - sol.q_star.values)) <= 1e-12
                # defect keeps a strictly positive advantage
                assert closed[State.DD, Action.D] > closed[State.DD, Action.C]


def test_pavlov_closed_form_values_no_exploration():
    r = pavlov_closed_form(M18, GAMMA, 0.0)
    assert r.exists
    assert r.q_cc_c == pytest.approx(9.0, abs=1e-12)
    assert r.q_cd_d == pytest.approx(7.4, abs=1e-12)
    full = r.full_qtable(M18, GAMMA, 0.0)
    sol = solve_fixed_point(PolicyProfile.pavlov(), M18, GAMMA)
    assert np.max(np.abs(full.values - sol.q_star.values)) <= 1e-10


def test_pavlov_closed_form_no_fixed_point_at_low_gamma():
    # the existence threshold is (r_dc - r_cc)/(r_cc - r_dd) = 0.125 at g=1.8
    assert not pavlov_closed_form(M18, 0.1, 0.0).exists
    assert not pavlov_closed_form(M18, 0.124, 0.0).exists
    assert pavlov_closed_form(M18, 0.126, 0.0).exists


def test_pavlov_existence_monotone_in_gamma():
    flips = 0
    prev = None
    for i in range(1, 100):
        gamma = i / 100.0
        now = pavlov_closed_form(M18, gamma, 0.0).exists
        if prev is not None and now != prev:
            flips += 1
            assert abs(gamma - 0.125) <= 0.01
        prev = now
    assert flips == 1


def test_pavlov_exists_matches_solver_consistency():
    for eps in (0.0, 0.05, 0.1, 0.2, 0.24, 0.3, 0.4, 0.45):
        r = pavlov_closed_form(M18, GAMMA, eps)
        sol = solve_fixed_point(PolicyProfile.pavlov(eps), M18, GAMMA)
        assert r.exists == sol.is_consistent
        # the sign expressions agree with the solver's greedy gaps
        q = sol.q_star
        assert r.dd_gap == pytest.approx(
            q[State.DD, Action.C] - q[State.DD, Action.D], abs=1e-10)
        assert r.cd_gap == pytest.approx(
            q[State.CD, Action.D] - q[State.CD, Action.C], abs=1e-10)


def test_dd_gap_alternate_form_disagrees_with_exact_gap():
    # the sign-flipped variant never matches the exact gap; both are
    # exposed so the discrepancy stays observable
    r = pavlov_closed_form(M18, GAMMA, 0.0)
    assert r.dd_gap_alternate is not None
    assert abs(r.dd_gap_alternate - r.dd_gap) > 1.0
    assert r.dd_gap == pytest.approx(0.76, abs=1e-12)
    assert r.dd_gap_alternate == pytest.approx(2.76, abs=1e-12)


def test_pavlov_epsilon_threshold_is_exposed():
    thr = pavlov_epsilon_threshold(M18, GAMMA)
    assert 0.25 < thr < 0.26
    assert pavlov_closed_form(M18, GAMMA, thr - 1e-6).exists
    assert not pavlov_closed_form(M18, GAMMA, thr + 1e-6).exists
    # no fixed point anywhere when gamma is below the structural threshold
    assert pavlov_epsilon_threshold(M18, 0.1) == 0.0


def test_spe_always_defect_for_all_gamma():
    for i in range(5, 100, 5):
        assert is_subgame_perfect(PolicyProfile.always_defect(), M18, i / 100.0)


def test_spe_pavlov_threshold():
    assert is_subgame_perfect(PolicyProfile.pavlov(), M18, 0.6)
    assert not is_subgame_perfect(PolicyProfile.pavlov(), M18, 0.1)
    boundary = (2.0 - 1.8) / (2.0 * (1.8 - 1.0))
    assert is_subgame_perfect(PolicyProfile.pavlov(), M18, boundary)  # weak
    assert not is_subgame_perfect(PolicyProfile.pavlov(), M18, boundary - 1e-3)
    assert is_subgame_perfect(PolicyProfile.pavlov(), M18, boundary + 1e-3)


def test_spe_requires_deterministic_profile():
    with pytest.raises(ValueError, match="deterministic"):
        is_subgame_perfect(PolicyProfile.pavlov(0.1), M18, 0.6)


def test_joint_return_mutual_pavlov_from_cc():
    j1, j2 = joint_return(PolicyProfile.pavlov(), PolicyProfile.pavlov(),
                          M18, GAMMA, [0, 1, 0, 0])
    assert j1 == pytest.approx(9.0, abs=1e-10)
    assert j2 == pytest.approx(9.0, abs=1e-10)


def test_joint_return_mutual_defection_is_state_independent():
    alld = PolicyProfile.always_defect()
    for rho in ([1, 0, 0, 0], [0, 1, 0, 0], [0.25, 0.25, 0.25, 0.25]):
        j1, j2 = joint_return(alld, alld, M18, GAMMA, rho)
        assert j1 == pytest.approx(5.0, abs=1e-10)
        assert j2 == pytest.approx(5.0, abs=1e-10)


def test_joint_return_pavlov_against_defector_cycles():
    # from DD: pavlov cooperates into (C,D), then defects into (D,D), repeat
    j1, j2 = joint_return(PolicyProfile.pavlov(), PolicyProfile.always_defect(),
                          M18, GAMMA, [1, 0, 0, 0])
    expected = (M18.r_cd + GAMMA * M18.r_dd) / (1.0 - GAMMA * GAMMA)
    assert j1 == pytest.approx(expected, abs=1e-10)
    expected2 = (M18.r_dc + GAMMA * M18.r_dd) / (1.0 - GAMMA * GAMMA)
    assert j2 == pytest.approx(expected2, abs=1e-10)


def test_joint_return_rejects_bad_distribution():
    p = PolicyProfile.pavlov()
    with pytest.raises(ValueError, match="sum to 1"):
        joint_return(p, p, M18, GAMMA, [0.5, 0.6, 0, 0])


def test_phase2_eigenvalues_at_defaults():
    rep = phase2_eigen(0.1, 0.6)
    assert rep.lambda_plus == pytest.approx(0.95875, abs=1e-4)
    assert rep.lambda_minus == pytest.approx(0.84485, abs=1e-4)


def test_phase2_eigenvalues_approach_one_for_vanishing_alpha():
    rep = phase2_eigen(1e-9, 0.6)
    assert rep.lambda_plus == pytest.approx(1.0, abs=1e-6)
    assert rep.lambda_minus == pytest.approx(1.0, abs=1e-6)


def test_phase2_eigenvalues_inside_unit_interval_on_grid():
    for i in range(1, 20):
        for j in range(1, 20):
            rep = phase2_eigen(i / 20.0, j / 20.0)
            assert 0.0 < rep.lambda_minus < rep.lambda_plus < 1.0


def test_solver_validates_inputs():
    with pytest.raises(ValueError, match="gamma"):
        solve_fixed_point(PolicyProfile.pavlov(), M18, 1.0)
    with pytest.raises(ValueError, match="epsilon"):
        solve_fixed_point(PolicyProfile.pavlov(0.5), M18, 0.6)
