"""Machine checks for the convergence analysis.

Covers: validation of the optimistic-initialization brackets, the exact
three-phase oracle for the no-exploration dynamics, hitting-time scaling in
1/alpha, the exact exploration-event probability with its lower bound, and
the per-trajectory bound checks for the stochastic convergence argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .engine import RunConfig, TrajectoryRecord, run, run_batch
from .equilibria import phase2_eigen
from .game import Action, PayoffMatrix, State
from .policy import ALWAYS_DEFECT, QTable, classify


# ---------------------------------------------------------------------------
# initialization brackets

@dataclass
class BracketReport:
    """Signed slacks of the optimistic-initialization brackets.

    floor: the defect fixed value sits below Q0[DD,C]; window: Q0[DD,C] sits
    below the lose-shift stall value, which sits below Q0[CC,C], and
    Q0[DD,D] < Q0[CC,C]; ceiling: Q0[CC,C] sits below the Pavlov ceiling.
    The initial greedy policy must also read always-defect.
    """

    floor_ok: bool
    window_ok: bool
    ceiling_ok: bool
    initial_policy_is_alld: bool
    margins: dict
    defect_value: float      # r_dd / (1 - gamma)
    stall_value: float       # (r_dd + gamma*r_cc) / (1 - gamma^2)
    pavlov_ceiling: float    # r_cc / (1 - gamma)

    def all_ok(self) -> bool:
        return (self.floor_ok and self.window_ok and self.ceiling_ok
                and self.initial_policy_is_alld)


def check_initialization_brackets(q0: QTable, m: PayoffMatrix, gamma: float) -> BracketReport:
    """Evaluate the three initialization brackets plus the implicit
    always-defect start, reporting the signed distance to every bound."""
    defect_value = m.r_dd / (1.0 - gamma)
    # two algebraic forms of the same middle bound; assert the identity
    mid = m.r_cc / (1.0 - gamma) - (m.r_cc - m.r_dd) / (1.0 - gamma * gamma)
    stall = (m.r_dd + gamma * m.r_cc) / (1.0 - gamma * gamma)
    if abs(mid - stall) > 1e-9 * max(1.0, abs(stall)):
        raise RuntimeError("bracket identity violated; check payoff/gamma inputs")
    ceiling = m.r_cc / (1.0 - gamma)

    q_dd_c = q0[State.DD, Action.C]
    q_dd_d = q0[State.DD, Action.D]
    q_cc_c = q0[State.CC, Action.C]

    margins = {
        "floor": q_dd_c - defect_value,
        "window_low": mid - q_dd_c,
        "window_high": q_cc_c - mid,
        "window_defect": q_cc_c - q_dd_d,
        "ceiling": ceiling - q_cc_c,
        "initial_alld": min(
            q0[s, Action.D] - q0[s, Action.C] for s in State
        ),
    }
    return BracketReport(
        floor_ok=margins["floor"] > 0.0,
        window_ok=margins["window_low"] > 0.0 and margins["window_high"] > 0.0
        and margins["window_defect"] > 0.0,
        ceiling_ok=margins["ceiling"] > 0.0,
        initial_policy_is_alld=classify(q0).name == ALWAYS_DEFECT,
        margins=margins,
        defect_value=defect_value,
        stall_value=stall,
        pavlov_ceiling=ceiling,
    )


# ---------------------------------------------------------------------------
# deterministic three-phase oracle

def phase1_hitting_time(q0_dd_d: float, q0_dd_c: float, target: float,
                        alpha: float, gamma: float) -> int:
    """First t with target + rho^t (q0_dd_d - target) strictly below q0_dd_c,
    rho = 1 - alpha(1 - gamma); closed form with an exactness guard."""
    rho = 1.0 - alpha * (1.0 - gamma)
    num = q0_dd_c - target
    den = q0_dd_d - target
    if num <= 0 or den <= 0:
        raise ValueError("hitting time undefined: initialization outside the brackets")
    t = max(0, math.ceil(math.log(num / den) / math.log(rho)))
    while rho ** t * den >= num:
        t += 1
    while t > 0 and rho ** (t - 1) * den < num:
        t -= 1
    return t


def phase1_time_limit(q0_dd_d: float, q0_dd_c: float, target: float,
                      gamma: float) -> float:
    """Limit of alpha * t1 as alpha -> 0."""
    return (math.log(q0_dd_d - target) - math.log(q0_dd_c - target)) / (1.0 - gamma)


@dataclass
class PhaseOracle:
    """Exact no-exploration trajectory built from the per-phase recursions.

    Phase 1 contracts Q[DD,D] toward the defect value; phase 2 alternates the
    coupled Q[DD,C] / Q[CC,D] updates toward (v*, u*); phase 3 contracts
    Q[CC,C] toward the Pavlov ceiling. Only the active entry of each phase
    moves, so the tables are exact.
    """

    t1_pred: int
    t2_pred: int | None
    u_star: float  # lose-shift stall value of Q[CC,D]
    v_star: float  # lose-shift stall value of Q[DD,C]
    defect_value: float
    pavlov_ceiling: float
    tables: np.ndarray  # (n_iter + 1, 4, 2)

    def q_at(self, t: int) -> QTable:
        return QTable(self.tables[t])


def deterministic_oracle(q0: QTable, cfg: RunConfig) -> PhaseOracle:
    """Emit the exact per-step tables for the three-phase trajectory.

    Requires cfg.epsilon == 0 and an initialization satisfying all brackets
    (raises ValueError otherwise). The oracle never calls the simulator; it
    iterates only the active closed-form recursion of each phase.
    """
    if cfg.epsilon != 0.0:
        raise ValueError("the deterministic oracle requires epsilon = 0")
    if cfg.s0 is not State.DD:
        raise ValueError("the deterministic oracle starts from the DD state")
    report = check_initialization_brackets(q0, cfg.payoff, cfg.gamma)
    if not report.all_ok():
        raise ValueError(f"initialization brackets violated: {report.margins}")

    m, gamma, alpha, n = cfg.payoff, cfg.gamma, cfg.alpha, cfg.n_iter
    rho = 1.0 - alpha * (1.0 - gamma)
    q_star_d = report.defect_value
    u_star = report.stall_value                      # Q[CC,D] target
    v_star = m.r_cc + gamma * u_star                 # Q[DD,C] target

    q0_dd_d = q0[State.DD, Action.D]
    q0_dd_c = q0[State.DD, Action.C]
    q0_cc_c = q0[State.CC, Action.C]

    t1 = phase1_hitting_time(q0_dd_d, q0_dd_c, q_star_d, alpha, gamma) if alpha > 0 else None
    tables = np.empty((n + 1, 4, 2))
    tables[0] = q0.values
    u = q0[State.CC, Action.D]
    v = q0_dd_c
    c = q0_cc_c
    t2 = None

    for t in range(1, n + 1):
        tables[t] = tables[t - 1]
        if alpha == 0.0:
            continue
        if t <= t1:
            # phase 1: only Q[DD,D] moves, linear contraction
            tables[t, 0, 0] = q_star_d + rho ** t * (q0_dd_d - q_star_d)
        elif t2 is None:
            # phase 2: DD-state cooperation then CC-state defection, alternating
            if (t - t1) % 2 == 1:
                v = (1.0 - alpha) * v + alpha * (m.r_cc + gamma * u)
                tables[t, 0, 1] = v
            else:
                u = (1.0 - alpha) * u + alpha * (m.r_dd + gamma * v)
                tables[t, 1, 0] = u
                if u < q0_cc_c:
                    t2 = t
        elif t == t2 + 1:
            # transition step: one last DD-state update, now bootstrapping on Q[CC,C]
            v = (1.0 - alpha) * v + alpha * (m.r_cc + gamma * c)
            tables[t, 0, 1] = v
        else:
            # phase 3: only Q[CC,C] moves
            c = (1.0 - alpha) * c + alpha * (m.r_cc + gamma * c)
            tables[t, 1, 1] = c

    return PhaseOracle(
        t1_pred=t1,
        t2_pred=t2,
        u_star=u_star,
        v_star=v_star,
        defect_value=q_star_d,
        pavlov_ceiling=report.pavlov_ceiling,
        tables=tables,
    )


# ---------------------------------------------------------------------------
# bound checks

@dataclass
class BoundCheck:
    """Outcome of one inequality check over a trajectory segment. ``lhs`` and
    ``rhs`` record the worst-margin instance; ``applicable`` is False when the
    check's event precondition failed (then ``holds`` is vacuous).

    ``direction`` is "le" when the claim is lhs <= rhs and "ge" when it is
    lhs >= rhs, so ``margin`` is positive exactly when the claim is satisfied.
    """

    name: str
    holds: bool
    lhs: float
    rhs: float
    context: str = ""
    applicable: bool = True
    direction: str = "le"

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs if self.direction == "le" else self.lhs - self.rhs

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "holds": self.holds,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "applicable": self.applicable,
            "context": self.context,
        }


def _require_dense(traj: TrajectoryRecord):
    if not traj.recorded or traj.config.effective_stride() != 1:
        raise ValueError("bound checks require a fully recorded trajectory (stride 1)")


def check_phase2_exit_direction(traj: TrajectoryRecord) -> BoundCheck:
    """Exit-direction check for the middle phase: while Q[CC,D] still exceeds
    the initial Q[CC,C] bar, the current DD entries must keep cooperation
    greedy (Q[DD,C] > Q[DD,D]), so the lose-shift region can only be left
    through the CC entry, landing in Pavlov.

    Premise: the initial Q[CC,C] sits between the lose-shift stall value and
    the Pavlov ceiling; outside that bracket the check is not applicable.
    """
    _require_dense(traj)
    m, gamma = traj.config.payoff, traj.config.gamma
    q0 = traj.q_init
    stall = (m.r_dd + gamma * m.r_cc) / (1.0 - gamma * gamma)
    bar_cc = q0[State.CC, Action.C]
    ctx = f"seed={traj.config.seed}"

    if not (stall < bar_cc <= m.r_cc / (1.0 - gamma)):
        return BoundCheck("phase2_exit_direction", holds=True, lhs=stall, rhs=bar_cc,
                          context=ctx + " premise violated", applicable=False)
    if traj.t1 is None:
        return BoundCheck("phase2_exit_direction", holds=True, lhs=math.inf, rhs=0.0,
                          context=ctx + " no phase-2 segment", applicable=True)

    end = traj.t2 if traj.t2 is not None else traj.n_steps
    worst = math.inf
    holds = True
    for t in range(traj.t1, end + 1):
        snap = traj.snapshots[t]
        if snap[1, 0] > bar_cc:  # Q[CC,D] above the bar: still in the phase
            margin = snap[0, 1] - snap[0, 0]
            worst = min(worst, margin)
            if margin <= 0:
                holds = False
    return BoundCheck("phase2_exit_direction", holds=holds, lhs=worst, rhs=0.0, context=ctx,
                      direction="ge")


def _exploration_count(traj: TrajectoryRecord, start: int, end: int) -> int:
    """Steps in (start, end] where either agent took the non-greedy branch."""
    if end <= start:
        return 0
    e = traj.explore1[start:end] | traj.explore2[start:end]
    return int(np.count_nonzero(e))


def check_phase1_bounds(traj: TrajectoryRecord, k: int, T: int) -> list[BoundCheck]:
    """Bound checks for the first (always-defect) phase.

    The per-step change bound is universal and always evaluated. The drift,
    envelope and greedy-persistence checks hold on the event of at most k
    exploratory steps among the first T; trajectories with more realized
    explorations report them as not applicable. They are evaluated on the
    realized phase-1 segment (up to the lose-shift hitting time), where their
    update-count accounting applies; the crossing check is evaluated at the
    literal horizon T.
    """
    _require_dense(traj)
    cfg = traj.config
    if T > traj.n_steps:
        raise ValueError(f"T={T} exceeds the trajectory length {traj.n_steps}")
    m, gamma, alpha = cfg.payoff, cfg.gamma, cfg.alpha
    drift = m.delta_r() * alpha / (1.0 - gamma)
    rho = 1.0 - alpha * (1.0 - gamma)
    q0 = traj.q_init
    q_star_d = m.r_dd / (1.0 - gamma)
    ctx = f"seed={cfg.seed}"
    tol = 1e-12

    kappa = _exploration_count(traj, 0, T)
    on_event = kappa <= k
    ctx_k = ctx + f" kappa={kappa} k={k} T={T}"
    checks = []

    # (b) universal per-step change bound
    max_change = float(np.max(traj.step_change[:T])) if T > 0 else 0.0
    checks.append(BoundCheck("phase1_per_step", holds=max_change <= drift + tol,
                             lhs=max_change, rhs=drift, context=ctx_k))

    t1_end = min(T, traj.t1) if traj.t1 is not None else T

    # (c) bounded drift of every entry except (DD,D) during phase 1
    seg = traj.snapshots[: t1_end + 1]
    dev = np.abs(seg - traj.snapshots[0])
    dev[:, 0, 0] = 0.0  # exclude (DD,D)
    lhs_c = float(np.max(dev)) if len(seg) else 0.0
    checks.append(BoundCheck("phase1_nongreedy_drift",
                             holds=(not on_event) or lhs_c <= 2 * k * drift + tol,
                             lhs=lhs_c, rhs=2 * k * drift, context=ctx_k,
                             applicable=on_event))

    # (d) geometric-plus-drift envelope on Q[DD,D]
    worst_margin = -math.inf
    lhs_d = rhs_d = 0.0
    for t in range(t1_end + 1):
        lhs_t = traj.snapshots[t, 0, 0] - q_star_d
        rhs_t = rho ** max(t - 2 * k, 0) * (q0[State.DD, Action.D] - q_star_d) \
            + 2 * k * drift
        if lhs_t - rhs_t > worst_margin:
            worst_margin = lhs_t - rhs_t
            lhs_d, rhs_d = lhs_t, rhs_t
    checks.append(BoundCheck("phase1_defect_envelope",
                             holds=(not on_event) or worst_margin <= tol,
                             lhs=lhs_d, rhs=rhs_d, context=ctx_k,
                             applicable=on_event))

    # (e) defect stays greedy outside DD for small k
    gaps0 = [q0[s, Action.D] - q0[s, Action.C]
             for s in (State.CC, State.CD, State.DC)]
    threshold = (1.0 - gamma) * min(gaps0) / (2.0 * alpha * m.delta_r())
    applicable_e = on_event and k < threshold
    lhs_e = math.inf
    for t in range(t1_end + 1):
        snap = traj.snapshots[t]
        lhs_e = min(lhs_e, min(snap[1, 0] - snap[1, 1], snap[2, 0] - snap[2, 1],
                               snap[3, 0] - snap[3, 1]))
    checks.append(BoundCheck("phase1_greedy_persistence",
                             holds=(not applicable_e) or lhs_e > 0.0,
                             lhs=lhs_e, rhs=0.0,
                             context=ctx_k + f" k_threshold={threshold:.6g}",
                             applicable=applicable_e, direction="ge"))

    # (f) crossing of the DD entries by the prescribed horizon
    log_arg = q0[State.DD, Action.C] - q_star_d - 4 * k * drift
    applicable_f = on_event and log_arg > 0.0
    if applicable_f:
        t_min = 2 * k + (math.log(log_arg)
                         - math.log(q0[State.DD, Action.D] - q_star_d)) / math.log(rho)
        applicable_f = T > t_min
    snap_T = traj.snapshots[T]
    checks.append(BoundCheck("phase1_crossing",
                             holds=(not applicable_f) or snap_T[0, 0] < snap_T[0, 1],
                             lhs=float(snap_T[0, 0]), rhs=float(snap_T[0, 1]),
                             context=ctx_k, applicable=applicable_f))
    return checks


def _pair_update_matrix(alpha: float, gamma: float) -> np.ndarray:
    """One full phase-2 alternation (DD update, then CC update) acting on the
    deviations (u - u*, v - v*) with u = Q[CC,D], v = Q[DD,C]."""
    ag = alpha * gamma
    return np.array([
        [1.0 - alpha + ag * ag, ag * (1.0 - alpha)],
        [ag, 1.0 - alpha],
    ])


def phase2_envelope_constants(u0_dev: float, v0_dev: float, alpha: float,
                              gamma: float):
    """Decompose the phase-2 entry deviations in the eigenbasis of the pair
    map: returns (c1, lambda1, c2, lambda2) with u_j - u* = c1 l1^j + c2 l2^j
    when no exploration perturbs the alternation."""
    M = _pair_update_matrix(alpha, gamma)
    lam, P = np.linalg.eig(M)
    order = np.argsort(lam.real)[::-1]
    lam = lam.real[order]
    P = P.real[:, order]
    delta = np.linalg.solve(P, np.array([u0_dev, v0_dev]))
    c1 = float(delta[0] * P[0, 0])
    c2 = float(delta[1] * P[0, 1])
    # the pair map must share its spectrum with the closed-form eigenvalues
    ref = phase2_eigen(alpha, gamma)
    if abs(lam[0] - ref.lambda_plus) > 1e-10 or abs(lam[1] - ref.lambda_minus) > 1e-10:
        raise RuntimeError("pair-map spectrum mismatch")
    return c1, float(lam[0]), c2, float(lam[1])


def check_phase2_bounds(traj: TrajectoryRecord, k: int, T: int) -> list[BoundCheck]:
    """Phase-2 analogues of the bound checks, on the segment starting at the
    lose-shift hitting time t1.

    The eigen-envelope is indexed by updates of the Q[CC,D] entry (the proof's
    pair clock), so exploration-induced excursions only perturb values, never
    the alignment; each perturbed update is absorbed by the drift term and the
    k-shifted exponent.
    """
    _require_dense(traj)
    cfg = traj.config
    if traj.t1 is None:
        raise ValueError("phase-2 checks require a lose-shift segment (t1 defined)")
    m, gamma, alpha = cfg.payoff, cfg.gamma, cfg.alpha
    drift = m.delta_r() * alpha / (1.0 - gamma)
    t1 = traj.t1
    # the claims concern the lose-shift phase: cap the window at the first
    # Pavlov hitting time (beyond it other entries legitimately move)
    seg_end = min(t1 + T, traj.n_steps)
    if traj.t2 is not None and traj.t2 >= t1:
        seg_end = min(seg_end, traj.t2)
    ctx = f"seed={cfg.seed}"
    tol = 1e-12

    kappa = _exploration_count(traj, t1, seg_end)
    on_event = kappa <= k
    ctx_k = ctx + f" kappa={kappa} k={k} T={T} t1={t1}"
    checks = []

    # per-step bound on the segment (same universal bound as phase 1)
    max_change = float(np.max(traj.step_change[t1:seg_end])) if seg_end > t1 else 0.0
    checks.append(BoundCheck("phase2_per_step", holds=max_change <= drift + tol,
                             lhs=max_change, rhs=drift, context=ctx_k))

    # drift of every entry except (DD,C) and (CC,D)
    seg = traj.snapshots[t1: seg_end + 1]
    dev = np.abs(seg - traj.snapshots[t1])
    dev[:, 0, 1] = 0.0
    dev[:, 1, 0] = 0.0
    lhs_b = float(np.max(dev)) if len(seg) else 0.0
    checks.append(BoundCheck("phase2_nongreedy_drift",
                             holds=(not on_event) or lhs_b <= 2 * k * drift + tol,
                             lhs=lhs_b, rhs=2 * k * drift, context=ctx_k,
                             applicable=on_event))

    # eigen envelope on Q[CC,D], indexed by that entry's update count
    u_star = (m.r_dd + gamma * m.r_cc) / (1.0 - gamma * gamma)
    v_star = m.r_cc + gamma * u_star
    u0 = float(traj.snapshots[t1, 1, 0])
    v0 = float(traj.snapshots[t1, 0, 1])
    c1, lam1, c2, lam2 = phase2_envelope_constants(u0 - u_star, v0 - v_star,
                                                   alpha, gamma)
    u_series = [float(traj.snapshots[t, 1, 0])
                for t in range(t1 + 1, seg_end + 1)
                if any(e == (1, 0) for e in traj.updated[t - 1])]
    worst = -math.inf
    lhs_c = rhs_c = 0.0
    for j, u_j in enumerate(u_series, start=1):
        env = c1 * lam1 ** (j - k) + c2 * lam2 ** (j - k) + 2 * k * drift
        if (u_j - u_star) - env > worst:
            worst = (u_j - u_star) - env
            lhs_c, rhs_c = u_j - u_star, env
    checks.append(BoundCheck("phase2_eigen_envelope",
                             holds=(not on_event) or worst <= 1e-9,
                             lhs=lhs_c, rhs=rhs_c, context=ctx_k,
                             applicable=on_event))

    # defect stays greedy in the mismatched states
    q0 = traj.q_init
    gaps0 = [q0[s, Action.D] - q0[s, Action.C] for s in (State.CD, State.DC)]
    threshold = (1.0 - gamma) * min(gaps0) / (2.0 * alpha * m.delta_r())
    applicable_d = on_event and k < threshold
    lhs_d = math.inf
    for t in range(t1, seg_end + 1):
        snap = traj.snapshots[t]
        lhs_d = min(lhs_d, min(snap[2, 0] - snap[2, 1], snap[3, 0] - snap[3, 1]))
    checks.append(BoundCheck("phase2_greedy_persistence",
                             holds=(not applicable_d) or lhs_d > 0.0,
                             lhs=lhs_d, rhs=0.0,
                             context=ctx_k + f" k_threshold={threshold:.6g}",
                             applicable=applicable_d, direction="ge"))

    # separation: the combined gap keeps the dynamics out of a direct
    # always-defect -> Pavlov shortcut until t2
    premise = (q0[State.CC, Action.D] - q0[State.CC, Action.C]) >= 4 * k * drift
    applicable_e = on_event and premise
    lhs_e = math.inf
    for t in range(t1, seg_end + 1):
        snap = traj.snapshots[t]
        combined = (snap[0, 1] - snap[0, 0]) + (snap[1, 0] - snap[1, 1])
        lhs_e = min(lhs_e, combined)
    checks.append(BoundCheck("phase2_separation",
                             holds=(not applicable_e) or lhs_e >= k * drift - tol,
                             lhs=lhs_e, rhs=k * drift, context=ctx_k,
                             applicable=applicable_e, direction="ge"))
    return checks


# ---------------------------------------------------------------------------
# exploration-event probability (exact, in rational arithmetic)

def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


def event_probability_exact(epsilon, k: int, T: int) -> tuple[Fraction, Fraction]:
    """Exact probability that at most k of T rounds contain a non-greedy draw
    by either agent, and the companion lower bound 1 - 2^T (2 eps)^(k+1).

    Rational arithmetic throughout (decimal epsilons are taken at face value),
    so the postcondition exact >= bound is checked without rounding.
    """
    if k > T:
        raise ValueError(f"k={k} exceeds T={T}")
    if k < 0 or T < 0:
        raise ValueError("k and T must be nonnegative")
    eps = _to_fraction(epsilon)
    if not (0 <= eps <= Fraction(1, 2)):
        raise ValueError(f"epsilon={epsilon} outside [0, 1/2]")
    p_greedy = (1 - eps) ** 2          # both agents greedy this round
    p_any = 2 * eps - eps * eps        # at least one non-greedy draw
    exact = Fraction(0)
    for i in range(k + 1):
        exact += math.comb(T, i) * p_greedy ** (T - i) * p_any ** i
    bound = 1 - Fraction(2) ** T * (2 * eps) ** (k + 1)
    return exact, bound


# ---------------------------------------------------------------------------
# hitting-time scaling

@dataclass
class RateRow:
    alpha: float
    t1: int | None
    t2: int | None
    t1_pred: int
    alpha_t1: float | None
    alpha_t2: float | None


def rate_scaling(alphas, base_cfg: RunConfig | None = None) -> list[RateRow]:
    """Simulated lose-shift/Pavlov hitting times across step sizes, with the
    closed-form phase-1 prediction; non-convergence within the budget is
    reported as None rather than raised."""
    if base_cfg is None:
        base_cfg = RunConfig()
    rows = []
    q0 = base_cfg.resolve_q_init()
    q_star_d = base_cfg.payoff.r_dd / (1.0 - base_cfg.gamma)
    for alpha in alphas:
        n_iter = max(base_cfg.n_iter, int(math.ceil(20.0 / (alpha * (1.0 - base_cfg.gamma)))))
        cfg = replace(base_cfg, alpha=alpha, epsilon=0.0, n_iter=n_iter,
                      snapshot_stride=n_iter)
        rec = run(cfg, light=True)
        pred = phase1_hitting_time(q0[State.DD, Action.D], q0[State.DD, Action.C],
                                   q_star_d, alpha, cfg.gamma)
        rows.append(RateRow(
            alpha=alpha,
            t1=rec.t1,
            t2=rec.t2,
            t1_pred=pred,
            alpha_t1=None if rec.t1 is None else alpha * rec.t1,
            alpha_t2=None if rec.t2 is None else alpha * rec.t2,
        ))
    return rows


# ---------------------------------------------------------------------------
# stochastic convergence, Monte Carlo

@dataclass
class SweepResult:
    """Aggregated Monte-Carlo statistics for one parameter-grid cell."""

    alpha: float
    epsilon: float
    g: float | None
    gamma: float
    n_runs: int
    n_iter: int
    coop_prob: float
    ci95: float
    oscillation_frac: float

    def csv_row(self) -> list:
        return [self.alpha, self.epsilon, self.g, self.gamma, self.n_runs,
                self.n_iter, self.coop_prob, self.ci95, self.oscillation_frac]


SWEEP_CSV_COLUMNS = ["alpha", "epsilon", "g", "gamma", "n_runs", "n_iters",
                     "coop_prob", "ci95", "oscillation_frac"]


@dataclass
class StochasticConvergenceReport:
    results: list
    horizon_constant: float  # the calibrated c in T(alpha) = c / alpha
    trend_ok: bool
    corner_estimate: float
    violations: list = field(default_factory=list)


def stochastic_convergence_monte_carlo(alphas, epsilons, base_cfg: RunConfig | None = None,
                         n_runs: int = 100, delta: float = 0.05,
                         safety: float = 3.0, n_jobs: int = 1) -> StochasticConvergenceReport:
    """Estimate P(cooperative policy within T(alpha) = c/alpha steps) on a
    grid and test the qualitative contract: the estimate approaches 1 as
    (alpha, epsilon) shrink.

    The horizon constant c is calibrated from the deterministic hitting time
    of the slowest grid step size, times a safety factor; the advertised
    constant itself is existential and not derivable, so only the trend and
    the small-parameter corner (>= 1 - delta) are asserted. A run counts as
    cooperative when a single cooperative class holds over a trailing settle
    window, so each run gets that constant window appended to its horizon
    (negligible relative to c/alpha as alpha shrinks).
    """
    if base_cfg is None:
        base_cfg = RunConfig()
    if n_runs < 30:
        raise ValueError("n_runs must be >= 30 for a meaningful estimate")
    alphas = sorted(set(alphas), reverse=True)
    epsilons = sorted(set(epsilons), reverse=True)

    q0 = base_cfg.resolve_q_init()
    c = 0.0
    for alpha in alphas:
        probe = replace(base_cfg, alpha=alpha, epsilon=0.0,
                        n_iter=int(math.ceil(40.0 / alpha)), snapshot_stride=10**9)
        oracle = deterministic_oracle(q0, probe)
        if oracle.t2_pred is None:
            raise RuntimeError(f"no deterministic Pavlov time at alpha={alpha}")
        c = max(c, safety * alpha * oracle.t2_pred)

    settle_window = 100
    results = []
    for alpha in alphas:
        for eps in epsilons:
            n_iter = int(math.ceil(c / alpha)) + settle_window
            cfg = replace(base_cfg, alpha=alpha, epsilon=eps, n_iter=n_iter,
                          snapshot_stride=n_iter)
            batch = run_batch(cfg, n_runs, n_jobs=n_jobs)
            results.append(SweepResult(
                alpha=alpha, epsilon=eps, g=base_cfg.payoff.g,
                gamma=base_cfg.gamma, n_runs=n_runs, n_iter=n_iter,
                coop_prob=batch.estimate, ci95=batch.ci95,
                oscillation_frac=batch.oscillation_frac,
            ))

    # monotone-trend test within Monte-Carlo slack along each axis
    slack = 0.15
    by_cell = {(r.alpha, r.epsilon): r.coop_prob for r in results}
    violations = []
    for eps in epsilons:
        for hi, lo in zip(alphas, alphas[1:]):  # alpha decreasing
            if by_cell[(lo, eps)] < by_cell[(hi, eps)] - slack:
                violations.append(("alpha", lo, hi, eps))
    for alpha in alphas:
        for hi, lo in zip(epsilons, epsilons[1:]):
            if by_cell[(alpha, lo)] < by_cell[(alpha, hi)] - slack:
                violations.append(("epsilon", lo, hi, alpha))
    corner = by_cell[(alphas[-1], epsilons[-1])]
    trend_ok = not violations and corner >= 1.0 - delta

    return StochasticConvergenceReport(results=results, horizon_constant=c, trend_ok=trend_ok,
                          corner_estimate=corner, violations=violations)
