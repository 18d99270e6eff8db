"""Exact fixed points of the self-play Bellman equation and equilibrium checks.

The source of truth is a generic 8x8 linear solve per candidate profile (the
successor max frozen at the profile's greedy choice, the opponent epsilon-
greedy on the swapped state); the closed forms act as validators against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .game import ACTIONS, Action, PayoffMatrix, STATES, State, next_state
from .policy import PolicyProfile, QTable, classify


@dataclass
class BellmanSolution:
    q_star: QTable
    policy: PolicyProfile
    is_consistent: bool  # greedy(q_star) reproduces the profile
    residual: float      # max |Q - T_profile(Q)| of the solved system


@dataclass
class EigenReport:
    """Eigenvalues of the coupled two-entry contraction of the middle phase."""

    lambda_plus: float
    lambda_minus: float
    matrix: np.ndarray


@dataclass
class PavlovClosedForm:
    """Closed-form Pavlov fixed-point values and existence test.

    ``dd_gap`` expands Q[DD,C] - Q[DD,D] from the expected-reward differences
    and agrees with the exact solver. ``dd_gap_alternate`` is the same coupled
    term with the myopic defection penalty's sign flipped; it disagrees with
    the exact gap everywhere and is exposed only so the two stay comparable
    in reports. Existence uses the solver-consistent form.
    """

    q_cc_c: float  # == q_dd_c
    q_cd_d: float  # == q_dc_d
    dd_gap: float
    cd_gap: float
    dd_gap_alternate: float | None
    exists: bool

    def full_qtable(self, m: PayoffMatrix, gamma: float, epsilon: float) -> QTable:
        """All 8 entries implied by the two boxed values."""
        e_dd_r_d = (1 - epsilon) * m.r_dc + epsilon * m.r_dd
        e_cd_r_c = (1 - epsilon) * m.r_cd + epsilon * m.r_cc
        q_dd_d = gamma * (1 - epsilon) * self.q_cd_d + gamma * epsilon * self.q_cc_c + e_dd_r_d
        q_cd_c = gamma * (1 - epsilon) * self.q_cd_d + gamma * epsilon * self.q_cc_c + e_cd_r_c
        q = QTable()
        for s in (State.CC, State.DD):
            q[s, Action.C] = self.q_cc_c
            q[s, Action.D] = q_dd_d
        for s in (State.CD, State.DC):
            q[s, Action.D] = self.q_cd_d
            q[s, Action.C] = q_cd_c
        return q


def _opponent_dist(profile: PolicyProfile, s: State, epsilon: float):
    """Opponent's action distribution given player 1's state s."""
    greedy = profile.action(s.swap())
    return ((greedy, 1.0 - epsilon), (greedy.other, epsilon))


def solve_fixed_point(profile: PolicyProfile, m: PayoffMatrix,
                      gamma: float) -> BellmanSolution:
    """Solve the 8x8 self-play Bellman system induced by an epsilon-greedy
    profile and report whether the solution is greedy-consistent with it."""
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma={gamma} outside (0, 1)")
    if not (0.0 <= profile.epsilon < 0.5):
        raise ValueError(f"profile.epsilon={profile.epsilon} outside [0, 1/2)")

    idx = {(s, a): 2 * int(s) + int(a) for s in STATES for a in ACTIONS}
    A = np.eye(8)
    b = np.zeros(8)
    for s in STATES:
        for a1 in ACTIONS:
            i = idx[(s, a1)]
            for a2, p in _opponent_dist(profile, s, profile.epsilon):
                ns = next_state(a1, a2)
                b[i] += p * m.reward(a1, a2)
                A[i, idx[(ns, profile.action(ns))]] -= gamma * p

    try:
        q_vec = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:  # cannot occur for gamma < 1
        raise RuntimeError(f"singular Bellman system: {exc}") from exc

    residual = float(np.max(np.abs(A @ q_vec - b)))
    q_star = QTable(q_vec.reshape(4, 2))
    is_consistent = classify(q_star).greedy_action == profile.greedy_action
    return BellmanSolution(q_star=q_star, policy=profile,
                           is_consistent=is_consistent, residual=residual)


def always_defect_closed_form(m: PayoffMatrix, gamma: float, epsilon: float = 0.0) -> QTable:
    """Always-defect fixed point: Q[s,D] = E r_{D,.}/(1-gamma) for every state,
    Q[s,C] lower by the one-step expected reward loss of cooperating."""
    if not (0.0 <= epsilon < 0.5):
        raise ValueError(f"epsilon={epsilon} outside [0, 1/2)")
    e_r_d = (1 - epsilon) * m.r_dd + epsilon * m.r_dc
    e_r_c = (1 - epsilon) * m.r_cd + epsilon * m.r_cc
    q_d = e_r_d / (1.0 - gamma)
    q_c = q_d - (e_r_d - e_r_c)
    q = QTable()
    for s in STATES:
        q[s, Action.D] = q_d
        q[s, Action.C] = q_c
    return q


def pavlov_closed_form(m: PayoffMatrix, gamma: float, epsilon: float = 0.0) -> PavlovClosedForm:
    """Pavlov fixed-point values via the reduced 2x2 system (determinant
    1-gamma), plus the two greedy-gap sign expressions deciding existence."""
    if not (0.0 <= epsilon < 0.5):
        raise ValueError(f"epsilon={epsilon} outside [0, 1/2)")
    e_cc_r_c = (1 - epsilon) * m.r_cc + epsilon * m.r_cd
    e_cd_r_d = (1 - epsilon) * m.r_dd + epsilon * m.r_dc
    e_cd_r_c = (1 - epsilon) * m.r_cd + epsilon * m.r_cc
    e_dd_r_c = e_cc_r_c
    e_dd_r_d = (1 - epsilon) * m.r_dc + epsilon * m.r_dd

    q_cc_c = ((1 - gamma * epsilon) * e_cc_r_c + gamma * epsilon * e_cd_r_d) / (1.0 - gamma)
    q_cd_d = (gamma * (1 - epsilon) * e_cc_r_c
              + (1 - gamma * (1 - epsilon)) * e_cd_r_d) / (1.0 - gamma)

    coupled = gamma * (1 - 2 * epsilon) * (e_cc_r_c - e_cd_r_d)
    cd_gap = coupled + (e_cd_r_d - e_cd_r_c)
    dd_gap = coupled + (e_dd_r_c - e_dd_r_d)

    printed = None
    if m.g is not None:
        g = m.g
        printed = 2 * gamma * (1 - 2 * epsilon) * ((g - 1) - g * epsilon) + g

    return PavlovClosedForm(
        q_cc_c=q_cc_c,
        q_cd_d=q_cd_d,
        dd_gap=dd_gap,
        cd_gap=cd_gap,
        dd_gap_alternate=printed,
        exists=bool(dd_gap > 0.0 and cd_gap > 0.0),
    )


def pavlov_epsilon_threshold(m: PayoffMatrix, gamma: float, tol: float = 1e-12) -> float:
    """Largest exploration rate below which the Pavlov fixed point exists,
    found by bisection on pavlov_closed_form(...).exists over [0, 1/2)."""
    if not pavlov_closed_form(m, gamma, 0.0).exists:
        return 0.0
    lo, hi = 0.0, 0.5 - 1e-15
    if pavlov_closed_form(m, gamma, hi).exists:
        return 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pavlov_closed_form(m, gamma, mid).exists:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _deterministic_values(profile: PolicyProfile, m: PayoffMatrix, gamma: float):
    """State values when both players follow a deterministic profile."""
    P = np.zeros((4, 4))
    r = np.zeros(4)
    for s in STATES:
        a1 = profile.action(s)
        a2 = profile.action(s.swap())
        P[int(s), int(next_state(a1, a2))] = 1.0
        r[int(s)] = m.reward(a1, a2)
    v = np.linalg.solve(np.eye(4) - gamma * P, r)
    return v


def is_subgame_perfect(profile: PolicyProfile, m: PayoffMatrix, gamma: float,
                       tol: float = 1e-9) -> bool:
    """One-deviation principle with exact cycle returns: from each of the four
    states, a single deviation followed by the profile must not strictly
    improve on following it throughout."""
    if profile.epsilon != 0.0:
        raise ValueError("subgame perfection is checked for deterministic profiles")
    v = _deterministic_values(profile, m, gamma)
    for s in STATES:
        a1 = profile.action(s)
        a2 = profile.action(s.swap())
        v_follow = v[int(s)]
        dev = a1.other
        v_dev = m.reward(dev, a2) + gamma * v[int(next_state(dev, a2))]
        if v_dev > v_follow + tol:
            return False
    return True


def joint_return(profile1: PolicyProfile, profile2: PolicyProfile,
                 m: PayoffMatrix, gamma: float, rho) -> tuple[float, float]:
    """Exact expected discounted returns of a (possibly asymmetric) profile
    pair from an initial state distribution, via the 4-state reward chain."""
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma={gamma} outside (0, 1)")
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (4,):
        raise ValueError("rho must be a distribution over the 4 states (DD, CC, CD, DC)")
    if abs(float(rho.sum()) - 1.0) > 1e-12 or np.any(rho < -1e-15):
        raise ValueError(f"rho must sum to 1 within 1e-12, got sum={rho.sum()}")

    P = np.zeros((4, 4))
    r1 = np.zeros(4)
    r2 = np.zeros(4)
    for s in STATES:
        for a1 in ACTIONS:
            p1 = (1.0 - profile1.epsilon) if a1 is profile1.action(s) else profile1.epsilon
            if p1 == 0.0:
                continue
            for a2 in ACTIONS:
                p2 = (1.0 - profile2.epsilon) if a2 is profile2.action(s.swap()) else profile2.epsilon
                p = p1 * p2
                if p == 0.0:
                    continue
                P[int(s), int(next_state(a1, a2))] += p
                r1[int(s)] += p * m.reward(a1, a2)
                r2[int(s)] += p * m.reward(a2, a1)

    v1 = np.linalg.solve(np.eye(4) - gamma * P, r1)
    v2 = np.linalg.solve(np.eye(4) - gamma * P, r2)
    return float(rho @ v1), float(rho @ v2)


def phase2_eigen(alpha: float, gamma: float) -> EigenReport:
    """Eigenvalues of the 2x2 map driving the coupled (Q[CC,D], Q[DD,C])
    recursion, in closed form, cross-checked against a direct eigensolve."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha={alpha} outside (0, 1)")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma={gamma} outside (0, 1)")
    ag = alpha * gamma
    root = math.sqrt(1.0 - alpha + ag * ag / 4.0)
    lam_p = 1.0 - alpha + ag * (ag / 2.0 + root)
    lam_m = 1.0 - alpha + ag * (ag / 2.0 - root)
    M = np.array([
        [1.0 - alpha, -ag],
        [-ag * (1.0 - alpha), 1.0 - alpha + ag * ag],
    ])
    direct = np.sort(np.linalg.eigvals(M).real)
    if abs(direct[1] - lam_p) > 1e-12 or abs(direct[0] - lam_m) > 1e-12:
        raise RuntimeError("closed-form eigenvalues disagree with direct solve")
    return EigenReport(lambda_plus=lam_p, lambda_minus=lam_m, matrix=M)
