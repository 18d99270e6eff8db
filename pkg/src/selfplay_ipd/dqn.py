"""Minimal deep Q-network for the one-step-memory dilemma, from scratch.

Two-layer ReLU perceptron over one-hot states, uniform replay, Huber loss,
plain SGD, and a soft-updated target copy. Backpropagation is written out by
hand; the finite-difference oracle in the test suite is the correctness gate.
Training first plays a uniformly random opponent (which drives the values
toward the always-defect fixed point), then switches to self-play with
linearly decaying exploration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .game import Action, PayoffMatrix, State, payoff_from_g
from .policy import PolicyProfile, QTable, RandomStream, classify

_EYE4 = np.eye(4)


class DqnError(RuntimeError):
    """Training diverged (non-finite loss or weights)."""


@dataclass
class MlpQNet:
    """4 -> hidden -> 2 perceptron; output column index equals Action value
    (0 = D, 1 = C)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, hidden: int, rng: RandomStream) -> "MlpQNet":
        w1 = rng.normals((hidden, 4), scale=math.sqrt(2.0 / 4.0))
        w2 = rng.normals((2, hidden), scale=math.sqrt(2.0 / hidden))
        return cls(w1=w1, b1=np.zeros(hidden), w2=w2, b2=np.zeros(2))

    @classmethod
    def zeros(cls, hidden: int) -> "MlpQNet":
        return cls(w1=np.zeros((hidden, 4)), b1=np.zeros(hidden),
                   w2=np.zeros((2, hidden)), b2=np.zeros(2))

    def copy(self) -> "MlpQNet":
        return MlpQNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def batch_outputs(self, x: np.ndarray) -> np.ndarray:
        """(B, 4) one-hot rows -> (B, 2) action values [q_d, q_c]."""
        z1 = x @ self.w1.T + self.b1
        h = np.maximum(z1, 0.0)
        return h @ self.w2.T + self.b2

    def state_outputs(self) -> np.ndarray:
        """(4, 2) action values for the four states, QTable layout."""
        return self.batch_outputs(_EYE4)

    def greedy(self, s: State) -> Action:
        out = self.batch_outputs(_EYE4[int(s)][None, :])[0]
        return Action.C if out[1] > out[0] else Action.D

    def to_qtable(self) -> QTable:
        return QTable(self.state_outputs())


def forward(net: MlpQNet, s: State) -> tuple[float, float]:
    """Action values (q_c, q_d) of one state."""
    out = net.batch_outputs(_EYE4[int(s)][None, :])[0]
    return float(out[1]), float(out[0])


def huber(err: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


def batch_loss(net: MlpQNet, x: np.ndarray, actions: np.ndarray,
               targets: np.ndarray, delta: float = 1.0) -> float:
    pred = net.batch_outputs(x)[np.arange(len(actions)), actions]
    return float(np.mean(huber(pred - targets, delta)))


def batch_loss_and_grads(net: MlpQNet, x: np.ndarray, actions: np.ndarray,
                         targets: np.ndarray, delta: float = 1.0):
    """Mean Huber loss on the chosen-action outputs and its gradients."""
    n = len(actions)
    z1 = x @ net.w1.T + net.b1
    h = np.maximum(z1, 0.0)
    out = h @ net.w2.T + net.b2
    pred = out[np.arange(n), actions]
    err = pred - targets
    loss = float(np.mean(huber(err, delta)))

    dpred = np.clip(err, -delta, delta) / n
    dout = np.zeros_like(out)
    dout[np.arange(n), actions] = dpred
    dw2 = dout.T @ h
    db2 = dout.sum(axis=0)
    dh = dout @ net.w2
    dz1 = dh * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return loss, [dw1, db1, dw2, db2]


class ReplayBuffer:
    """Ring buffer of (state, action, reward, next state); at capacity the
    oldest entries are overwritten. Sampling is uniform with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros(capacity, dtype=np.int8)
        self.actions = np.zeros(capacity, dtype=np.int8)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros(capacity, dtype=np.int8)
        self.size = 0
        self._pos = 0

    def push(self, s: int, a: int, r: float, ns: int) -> None:
        i = self._pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = ns
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: RandomStream):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx])


@dataclass
class DqnConfig:
    """Training hyperparameters. Full scale uses batch 16384; the desk
    default shrinks it to 256 (set paper_scale=True to restore)."""

    payoff: PayoffMatrix = field(default_factory=lambda: payoff_from_g(1.8))
    gamma: float = 0.8
    tau: float = 0.01
    eps_start: float = 0.5
    eps_end: float = 0.01
    eps_decay_steps: int = 600
    pretrain_iters: int = 600
    num_iters: int = 10000
    batch_size: int = 256
    lr: float = 0.06
    hidden: int = 32
    buffer_capacity: int = 1_000_000
    huber_delta: float = 1.0
    seed: int = 8
    paper_scale: bool = False

    def __post_init__(self):
        if not (0.0 <= self.eps_end <= self.eps_start <= 0.5):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1/2")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.paper_scale:
            object.__setattr__(self, "batch_size", 16384)

    def epsilon_at(self, it: int) -> float:
        """eps_start through pretraining, then linear decay to eps_end."""
        if it < self.pretrain_iters:
            return self.eps_start
        frac = min(1.0, (it - self.pretrain_iters) / max(1, self.eps_decay_steps))
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def train_step(net: MlpQNet, target_net: MlpQNet, buffer: ReplayBuffer,
               cfg: DqnConfig, rng: RandomStream) -> float:
    """One optimization step: sample a batch, regress the chosen-action value
    onto r + gamma * max target(s'), SGD, then soft-update the target copy."""
    s, a, r, ns = buffer.sample(cfg.batch_size, rng)
    x = _EYE4[s]
    nx = _EYE4[ns]
    target_q = target_net.batch_outputs(nx)
    targets = r + cfg.gamma * target_q.max(axis=1)
    loss, grads = batch_loss_and_grads(net, x, a.astype(np.int64), targets,
                                       cfg.huber_delta)
    if not math.isfinite(loss):
        raise DqnError(f"non-finite loss (lr={cfg.lr}, batch={cfg.batch_size})")
    for p, gr in zip(net.parameters(), grads):
        p -= cfg.lr * gr
    for tp, p in zip(target_net.parameters(), net.parameters()):
        tp *= 1.0 - cfg.tau
        tp += cfg.tau * p
    return loss


_PAIR_STATE = ((0, 3), (2, 1))  # next-state index per (a1, a2), D=0 / C=1


@dataclass
class DqnRunLog:
    """Per-iteration exploration rate, cooperate probabilities per state, and
    loss, plus the greedy classifications after each phase."""

    config: DqnConfig
    epsilon: np.ndarray
    p_c: np.ndarray  # (num_iters, 4) in state order (DD, CC, CD, DC)
    loss: np.ndarray
    pretrain_policy: str
    final_policy: str
    final_profile: PolicyProfile
    net: MlpQNet

    def final_p_c(self) -> dict:
        return {s.name: float(self.p_c[-1, int(s)]) for s in State}


def selfplay_train(cfg: DqnConfig, run_index: int = 0) -> DqnRunLog:
    """Train against a random opponent for pretrain_iters, then in self-play
    (the opponent is the same network on the swapped state) with decaying
    exploration. Logs the epsilon-greedy cooperate probability per state."""
    rng = RandomStream(cfg.seed, run_index)
    net = MlpQNet.init(cfg.hidden, rng)
    target = net.copy()
    buffer = ReplayBuffer(cfg.buffer_capacity)
    m = cfg.payoff
    R = ((m.r_dd, m.r_dc), (m.r_cd, m.r_cc))

    a1p, a2p = 0, 0  # start from the DD state
    eps_log = np.zeros(cfg.num_iters)
    p_c_log = np.zeros((cfg.num_iters, 4))
    loss_log = np.zeros(cfg.num_iters)
    pretrain_policy = None

    for it in range(cfg.num_iters):
        eps = cfg.epsilon_at(it)
        s1 = _PAIR_STATE[a1p][a2p]
        s2 = _PAIR_STATE[a2p][a1p]
        outs = net.state_outputs()
        greedy = (outs[:, 1] > outs[:, 0]).astype(np.int64)

        a1 = int(greedy[s1])
        if rng.uniform() < eps:
            a1 = 1 - a1
        if it < cfg.pretrain_iters:
            a2 = int(rng.integers(0, 2))
        else:
            a2 = int(greedy[s2])
            if rng.uniform() < eps:
                a2 = 1 - a2

        buffer.push(s1, a1, R[a1][a2], _PAIR_STATE[a1][a2])
        loss_log[it] = train_step(net, target, buffer, cfg, rng)
        if not np.all(np.isfinite(net.w1)):
            raise DqnError(f"diverged at iteration {it} (seed={cfg.seed})")

        eps_log[it] = eps
        outs = net.state_outputs()
        greedy_c = outs[:, 1] > outs[:, 0]
        p_c_log[it] = np.where(greedy_c, 1.0 - eps, eps)
        a1p, a2p = a1, a2

        if it == cfg.pretrain_iters - 1:
            pretrain_policy = classify(net.to_qtable()).name

    profile = classify(net.to_qtable())
    return DqnRunLog(
        config=cfg,
        epsilon=eps_log,
        p_c=p_c_log,
        loss=loss_log,
        pretrain_policy=pretrain_policy if pretrain_policy is not None
        else classify(net.to_qtable()).name,
        final_policy=profile.name,
        final_profile=profile,
        net=net,
    )
