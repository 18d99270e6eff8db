"""Self-play multi-agent Q-learning: one shared table, two perspectives.

Each step both agents draw an epsilon-greedy action from the same table (the
second agent sees the swapped state), then the table entry for the realized
state/action of player 1 is moved toward r + gamma * max_a Q[successor][a].
The optional ``both_perspectives`` mode also applies player 2's symmetric
update, with both TD targets taken from the pre-step table.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .game import Action, PayoffMatrix, State, payoff_from_g
from .policy import (
    ALWAYS_DEFECT,
    GRIM_TRIGGER,
    LOSE_SHIFT,
    PAVLOV,
    QTable,
    RandomStream,
    is_cooperative,
)

# classification codes: 4 bits in state order (DD, CC, CD, DC), 1 = C greedy
BITS_ALWAYS_DEFECT = 0b0000
BITS_LOSE_SHIFT = 0b1000
BITS_GRIM_TRIGGER = 0b0100
BITS_PAVLOV = 0b1100

_BIT_NAMES = {
    BITS_ALWAYS_DEFECT: ALWAYS_DEFECT,
    BITS_LOSE_SHIFT: LOSE_SHIFT,
    BITS_GRIM_TRIGGER: GRIM_TRIGGER,
    BITS_PAVLOV: PAVLOV,
}

# next-state index per (a1, a2) with D=0, C=1 and states (DD, CC, CD, DC)
_PAIR_STATE = ((0, 3), (2, 1))

OPTIMISTIC_DEFAULT = "optimistic-default"

# Satisfies the optimistic-initialization brackets at g=1.8, gamma=0.6:
# 5 < Q0[DD,C]=6.0 < 6.5 < Q0[CC,C]=7.0 < 9, Q0[DD,D]=6.5 < 7.0, argmax=D
# everywhere. Validated by theory.check_initialization_brackets in the test suite.
_OPTIMISTIC_VALUES = {
    "DD": {"D": 6.5, "C": 6.0},
    "CC": {"D": 7.5, "C": 7.0},
    "CD": {"D": 5.0, "C": 4.0},
    "DC": {"D": 5.0, "C": 4.0},
}


class EngineError(RuntimeError):
    """Numerical failure during simulation (non-finite Q entry)."""


def bits_name(bits: int) -> str:
    name = _BIT_NAMES.get(bits)
    if name is not None:
        return name
    return "other:" + format(bits, "04b")


def optimistic_default_qtable() -> QTable:
    return QTable.from_json_dict(_OPTIMISTIC_VALUES)


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a single self-play Q-learning run."""

    payoff: PayoffMatrix = field(default_factory=lambda: payoff_from_g(1.8))
    gamma: float = 0.6
    alpha: float = 0.1
    epsilon: float = 0.0
    n_iter: int = 2000
    s0: State = State.DD
    q_init: object = OPTIMISTIC_DEFAULT  # QTable or preset name
    seed: int = 0
    update_mode: str = "p1_only"  # or "both_perspectives"
    snapshot_stride: int | None = None  # default: 1 if n_iter <= 1e4 else 10

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma={self.gamma} outside (0, 1)")
        # alpha = 0 is admitted as the degenerate no-op (convergence needs > 0)
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha={self.alpha} outside [0, 1]")
        if not (0.0 <= self.epsilon <= 0.5):
            raise ValueError(f"epsilon={self.epsilon} outside [0, 1/2]")
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")
        if self.update_mode not in ("p1_only", "both_perspectives"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.snapshot_stride is not None and self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    def resolve_q_init(self) -> QTable:
        if isinstance(self.q_init, QTable):
            return self.q_init.copy()
        if self.q_init == OPTIMISTIC_DEFAULT:
            return optimistic_default_qtable()
        if isinstance(self.q_init, dict):
            return QTable.from_json_dict(self.q_init)
        raise ValueError(f"unknown q_init {self.q_init!r}")

    def effective_stride(self) -> int:
        if self.snapshot_stride is not None:
            return self.snapshot_stride
        return 1 if self.n_iter <= 10_000 else 10

    def to_json_dict(self) -> dict:
        q = self.q_init
        return {
            "payoff": self.payoff.to_json_dict(),
            "gamma": self.gamma,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "n_iter": self.n_iter,
            "s0": self.s0.name,
            "q_init": q if isinstance(q, str) else
                      (q.to_json_dict() if isinstance(q, QTable) else q),
            "seed": self.seed,
            "update_mode": self.update_mode,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        kw = {}
        if "payoff" in d:
            kw["payoff"] = PayoffMatrix.from_json_dict(d["payoff"])
        elif "g" in d:
            kw["payoff"] = payoff_from_g(float(d["g"]))
        for k in ("gamma", "alpha", "epsilon"):
            if k in d:
                kw[k] = float(d[k])
        for k in ("n_iter", "seed", "snapshot_stride"):
            if k in d and d[k] is not None:
                kw[k] = int(d[k])
        if "s0" in d:
            kw["s0"] = State[d["s0"]]
        if "q_init" in d:
            kw["q_init"] = d["q_init"]
        if "update_mode" in d:
            kw["update_mode"] = d["update_mode"]
        return cls(**kw)


@dataclass
class StepLog:
    """What happened in one step: realized state, actions, rewards,
    exploration flags, entries written, and the largest entry change."""

    state: State
    a1: Action
    a2: Action
    r1: float
    r2: float
    explored1: bool
    explored2: bool
    updated: tuple
    change: float


@dataclass
class TrajectoryRecord:
    """Per-step log of a run plus the detected policy-phase hitting times.

    ``policy_bits[t]`` is the greedy-policy code after t updates (index 0 is
    the initial table). t1 is the first time the classification reads
    lose-shift given an always-defect start; t2 the first time it reads
    Pavlov. Snapshots are the full table every ``snapshot_stride`` steps.
    """

    config: RunConfig
    n_steps: int
    states: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    explore1: np.ndarray
    explore2: np.ndarray
    updated: list
    step_change: np.ndarray
    policy_bits: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    q_init: QTable
    q_final: QTable
    t1: int | None
    t2: int | None
    final_policy: str
    settled_policy: str | None
    policy_mode_last100: str
    oscillated: bool
    recorded: bool = True

    def policy_name_at(self, t: int) -> str:
        return bits_name(int(self.policy_bits[t]))

    def q_at(self, t: int) -> QTable:
        """Table after t updates; requires t to be a snapshot time."""
        pos = np.searchsorted(self.snapshot_times, t)
        if pos >= len(self.snapshot_times) or self.snapshot_times[pos] != t:
            raise KeyError(f"no snapshot at t={t} (stride {self.config.effective_stride()})")
        return QTable(self.snapshots[pos])

    @property
    def is_cooperative(self) -> bool:
        """Whether the run settled on a cooperative policy.

        Under exploration the step-by-step classification is noisy and passes
        through lose-shift transiently, so a run counts as cooperative only
        when a single cooperative class held over the whole trailing window
        (see ``settled_policy``). With epsilon=0 this coincides with the
        final-table classification once the run has converged.
        """
        return self.settled_policy is not None and is_cooperative(self.settled_policy)

    def summary_json_dict(self) -> dict:
        return {
            "final_policy": self.final_policy,
            "settled_policy": self.settled_policy,
            "t1": self.t1,
            "t2": self.t2,
            "policy_mode_last100": self.policy_mode_last100,
            "oscillated": self.oscillated,
            "seed": self.config.seed,
            "config": self.config.to_json_dict(),
        }


def _classify_bits(q) -> int:
    return (
        ((q[0][1] > q[0][0]) << 3)
        | ((q[1][1] > q[1][0]) << 2)
        | ((q[2][1] > q[2][0]) << 1)
        | (q[3][1] > q[3][0])
    )


def step(q: QTable, prev_actions: tuple[Action, Action], cfg: RunConfig,
         rng: RandomStream) -> tuple[QTable, tuple[Action, Action], StepLog]:
    """One literal algorithm step: select both actions from the shared table,
    then update the realized entry (entries, in both_perspectives mode).

    Mutates and returns ``q``. Exploration draws are consumed in agent order
    (player 1 first), one per agent, only when epsilon > 0.
    """
    m = cfg.payoff
    a1p, a2p = prev_actions
    s1 = _PAIR_STATE[int(a1p)][int(a2p)]
    s2 = _PAIR_STATE[int(a2p)][int(a1p)]
    eps = cfg.epsilon

    g1 = 1 if q.values[s1, 1] > q.values[s1, 0] else 0
    g2 = 1 if q.values[s2, 1] > q.values[s2, 0] else 0
    e1 = eps > 0.0 and rng.uniform() < eps
    e2 = eps > 0.0 and rng.uniform() < eps
    a1 = g1 ^ 1 if e1 else g1
    a2 = g2 ^ 1 if e2 else g2

    r1 = m.reward(Action(a1), Action(a2))
    r2 = m.reward(Action(a2), Action(a1))
    ns1 = _PAIR_STATE[a1][a2]

    max1 = max(q.values[ns1, 0], q.values[ns1, 1])
    old1 = q.values[s1, a1]
    new1 = old1 + cfg.alpha * (r1 + cfg.gamma * max1 - old1)
    updated = [(State(s1), Action(a1))]
    change = abs(new1 - old1)

    new2 = None
    if cfg.update_mode == "both_perspectives" and (s2, a2) != (s1, a1):
        ns2 = _PAIR_STATE[a2][a1]
        max2 = max(q.values[ns2, 0], q.values[ns2, 1])
        old2 = q.values[s2, a2]
        new2 = old2 + cfg.alpha * (r2 + cfg.gamma * max2 - old2)
        updated.append((State(s2), Action(a2)))
        change = max(change, abs(new2 - old2))

    q.values[s1, a1] = new1
    if new2 is not None:
        q.values[s2, a2] = new2
        if not math.isfinite(new2):
            raise EngineError(f"non-finite Q after update (alpha={cfg.alpha}, gamma={cfg.gamma})")
    if not math.isfinite(new1):
        raise EngineError(f"non-finite Q after update (alpha={cfg.alpha}, gamma={cfg.gamma})")

    log = StepLog(
        state=State(s1), a1=Action(a1), a2=Action(a2), r1=r1, r2=r2,
        explored1=bool(e1), explored2=bool(e2), updated=tuple(updated), change=change,
    )
    return q, (Action(a1), Action(a2)), log


def run(cfg: RunConfig, run_index: int = 0, light: bool = False) -> TrajectoryRecord:
    """Iterate the step rule n_iter times from cfg.s0 and record the trajectory.

    The random stream is pinned by (cfg.seed, run_index) so batches are
    reproducible regardless of scheduling. ``light`` skips per-step arrays and
    intermediate snapshots (summary fields are still computed).
    """
    m = cfg.payoff
    gamma, alpha, eps, n_iter = cfg.gamma, cfg.alpha, cfg.epsilon, cfg.n_iter
    both = cfg.update_mode == "both_perspectives"
    q0 = cfg.resolve_q_init()
    rng = RandomStream(cfg.seed, run_index)

    q = [[float(q0.values[s, 0]), float(q0.values[s, 1])] for s in range(4)]
    R = ((m.r_dd, m.r_dc), (m.r_cd, m.r_cc))  # R[a1][a2]
    PS = _PAIR_STATE
    uniform = rng.uniform

    a1p = int(cfg.s0.own_prev)
    a2p = int(cfg.s0.opp_prev)

    stride = cfg.effective_stride()
    record = not light
    states, a1s, a2s, r1s, r2s = [], [], [], [], []
    ex1s, ex2s, updated_log, changes = [], [], [], []
    snap_times, snaps = [0], [np.array(q, dtype=np.float64)]

    bits = _classify_bits(q)
    policies = [bits]
    started_alld = bits == BITS_ALWAYS_DEFECT
    t1 = None
    t2 = 0 if bits == BITS_PAVLOV else None
    oscillated = False

    for t in range(1, n_iter + 1):
        s1 = PS[a1p][a2p]
        s2 = PS[a2p][a1p]
        row1 = q[s1]
        row2 = q[s2]
        g1 = 1 if row1[1] > row1[0] else 0
        g2 = 1 if row2[1] > row2[0] else 0
        if eps > 0.0:
            e1 = uniform() < eps
            e2 = uniform() < eps
        else:
            e1 = e2 = False
        a1 = g1 ^ 1 if e1 else g1
        a2 = g2 ^ 1 if e2 else g2

        r1 = R[a1][a2]
        r2 = R[a2][a1]
        ns1 = PS[a1][a2]
        nrow = q[ns1]
        max1 = nrow[0] if nrow[0] >= nrow[1] else nrow[1]
        old1 = q[s1][a1]
        new1 = old1 + alpha * (r1 + gamma * max1 - old1)
        change = new1 - old1 if new1 >= old1 else old1 - new1
        entries = ((s1, a1),)

        if both and (s2 != s1 or a2 != a1):
            ns2 = PS[a2][a1]
            nrow2 = q[ns2]
            max2 = nrow2[0] if nrow2[0] >= nrow2[1] else nrow2[1]
            old2 = q[s2][a2]
            new2 = old2 + alpha * (r2 + gamma * max2 - old2)
            q[s1][a1] = new1
            q[s2][a2] = new2
            c2 = new2 - old2 if new2 >= old2 else old2 - new2
            if c2 > change:
                change = c2
            entries = ((s1, a1), (s2, a2))
            if not math.isfinite(new2):
                raise EngineError(
                    f"non-finite Q at step {t} (alpha={alpha}, gamma={gamma})")
        else:
            q[s1][a1] = new1
        if not math.isfinite(new1):
            raise EngineError(f"non-finite Q at step {t} (alpha={alpha}, gamma={gamma})")

        bits = _classify_bits(q)
        policies.append(bits)
        if started_alld and t1 is None and bits == BITS_LOSE_SHIFT:
            t1 = t
        if t2 is None and bits == BITS_PAVLOV:
            t2 = t
        if t1 is not None and not oscillated and bits == BITS_ALWAYS_DEFECT:
            oscillated = True

        if record:
            states.append(s1)
            a1s.append(a1)
            a2s.append(a2)
            r1s.append(r1)
            r2s.append(r2)
            ex1s.append(e1)
            ex2s.append(e2)
            updated_log.append(entries)
            changes.append(change)
        if (record and t % stride == 0) or t == n_iter:
            snap_times.append(t)
            snaps.append(np.array(q, dtype=np.float64))

        a1p = a1
        a2p = a2

    policy_arr = np.array(policies, dtype=np.int8)
    last = policy_arr[-100:]
    counts = Counter(int(b) for b in last)
    best = max(counts.values())
    # among equally common codes, prefer the most recently seen
    mode_bits = next(int(b) for b in last[::-1] if counts[int(b)] == best)
    settled = bits_name(int(last[0])) if len(counts) == 1 else None

    q_final = QTable(np.array(q, dtype=np.float64))
    return TrajectoryRecord(
        config=cfg,
        n_steps=n_iter,
        states=np.array(states, dtype=np.int8),
        a1=np.array(a1s, dtype=np.int8),
        a2=np.array(a2s, dtype=np.int8),
        r1=np.array(r1s, dtype=np.float64),
        r2=np.array(r2s, dtype=np.float64),
        explore1=np.array(ex1s, dtype=bool),
        explore2=np.array(ex2s, dtype=bool),
        updated=updated_log,
        step_change=np.array(changes, dtype=np.float64),
        policy_bits=policy_arr,
        snapshot_times=np.array(snap_times, dtype=np.int64),
        snapshots=np.array(snaps, dtype=np.float64),
        q_init=q0,
        q_final=q_final,
        t1=t1,
        t2=t2,
        final_policy=bits_name(int(policy_arr[-1])),
        settled_policy=settled,
        policy_mode_last100=bits_name(mode_bits),
        oscillated=oscillated,
        recorded=record,
    )


@dataclass
class BatchResult:
    """Aggregate of n independent seeded runs of one configuration."""

    n_runs: int
    estimate: float
    ci95: float
    oscillation_frac: float
    final_policies: dict
    t1_values: list
    t2_values: list


def _batch_worker(args):
    cfg, j = args
    rec = run(cfg, run_index=j, light=True)
    return (rec.is_cooperative, rec.oscillated, rec.t1, rec.t2, rec.final_policy)


def run_batch(cfg: RunConfig, n_runs: int, n_jobs: int = 1) -> BatchResult:
    """n_runs independent trajectories with streams (cfg.seed, j); results are
    identical whether executed serially or on a worker pool."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(cfg, j) for j in range(n_runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_batch_worker, jobs, chunksize=max(1, n_runs // (4 * n_jobs))))
    else:
        results = [_batch_worker(a) for a in jobs]

    coop = sum(1 for r in results if r[0])
    osc = sum(1 for r in results if r[1])
    p = coop / n_runs
    ci95 = 1.96 * math.sqrt(p * (1.0 - p) / n_runs)
    return BatchResult(
        n_runs=n_runs,
        estimate=p,
        ci95=ci95,
        oscillation_frac=osc / n_runs,
        final_policies=dict(Counter(r[4] for r in results)),
        t1_values=[r[2] for r in results],
        t2_values=[r[3] for r in results],
    )


def cooperation_probability(cfg: RunConfig, n_runs: int,
                            n_jobs: int = 1) -> tuple[float, float]:
    """Fraction of runs that settled on a cooperative policy (Pavlov or
    lose-shift held over the whole trailing window; see
    TrajectoryRecord.is_cooperative), with a 95% normal confidence half-width
    1.96*sqrt(p(1-p)/n)."""
    b = run_batch(cfg, n_runs, n_jobs=n_jobs)
    return b.estimate, b.ci95
