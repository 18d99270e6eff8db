"""Shared Q-table, epsilon-greedy selection, and greedy-policy classification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .game import ACTIONS, Action, STATES, State

ALWAYS_DEFECT = "always_defect"
LOSE_SHIFT = "lose_shift"
GRIM_TRIGGER = "grim_trigger"
PAVLOV = "pavlov"

COOPERATIVE_NAMES = frozenset({PAVLOV, LOSE_SHIFT})

# Greedy action per state in the order (DD, CC, CD, DC); True means C.
_NAMED_PROFILES = {
    (False, False, False, False): ALWAYS_DEFECT,
    (True, False, False, False): LOSE_SHIFT,
    (False, True, False, False): GRIM_TRIGGER,
    (True, True, False, False): PAVLOV,
}


class QTable:
    """8 shared action values indexed by (State, Action).

    Stored as a (4, 2) float array with rows in STATES order and columns in
    ACTIONS order (D first). All entries must be finite.
    """

    __slots__ = ("values",)

    def __init__(self, values=None):
        if values is None:
            arr = np.zeros((4, 2), dtype=np.float64)
        else:
            arr = np.array(values, dtype=np.float64).reshape(4, 2)
        if not np.all(np.isfinite(arr)):
            raise ValueError("QTable entries must all be finite")
        self.values = arr

    def __getitem__(self, key) -> float:
        s, a = key
        return float(self.values[int(s), int(a)])

    def __setitem__(self, key, value: float) -> None:
        s, a = key
        v = float(value)
        if not math.isfinite(v):
            raise ValueError("QTable entries must all be finite")
        self.values[int(s), int(a)] = v

    def copy(self) -> "QTable":
        return QTable(self.values.copy())

    def greedy(self, s: State) -> Action:
        """Argmax action in state s; ties broken toward D."""
        row = self.values[int(s)]
        return Action.C if row[int(Action.C)] > row[int(Action.D)] else Action.D

    def to_json_dict(self) -> dict:
        return {
            s.name: {"C": float(self.values[int(s), 1]), "D": float(self.values[int(s), 0])}
            for s in STATES
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "QTable":
        q = cls()
        for s in STATES:
            q[s, Action.C] = float(d[s.name]["C"])
            q[s, Action.D] = float(d[s.name]["D"])
        return q

    @classmethod
    def from_profile(cls, profile: "PolicyProfile") -> "QTable":
        """Indicator table: 1 on the profile's greedy action, 0 elsewhere."""
        q = cls()
        for s in STATES:
            q[s, profile.greedy_action[s]] = 1.0
        return q

    def __eq__(self, other) -> bool:
        return isinstance(other, QTable) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"QTable({self.to_json_dict()})"


@dataclass(frozen=True)
class PolicyProfile:
    """A deterministic memory-one policy plus an exploration rate."""

    greedy_action: tuple[Action, Action, Action, Action]  # indexed by State
    epsilon: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 0.5):
            raise ValueError(f"epsilon={self.epsilon} outside [0, 1/2]")

    @property
    def bits(self) -> tuple[bool, ...]:
        return tuple(a is Action.C for a in self.greedy_action)

    @property
    def name(self) -> str:
        named = _NAMED_PROFILES.get(self.bits)
        if named is not None:
            return named
        return "other:" + "".join("1" if b else "0" for b in self.bits)

    def action(self, s: State) -> Action:
        return self.greedy_action[int(s)]

    def prob_c(self, s: State) -> float:
        """Probability of cooperating in s under the epsilon-greedy policy."""
        greedy_is_c = self.greedy_action[int(s)] is Action.C
        return 1.0 - self.epsilon if greedy_is_c else self.epsilon

    @classmethod
    def from_bits(cls, bits, epsilon: float = 0.0) -> "PolicyProfile":
        return cls(tuple(Action.C if b else Action.D for b in bits), epsilon)

    @classmethod
    def named(cls, name: str, epsilon: float = 0.0) -> "PolicyProfile":
        for bits, nm in _NAMED_PROFILES.items():
            if nm == name:
                return cls.from_bits(bits, epsilon)
        raise ValueError(f"unknown policy name {name!r}")

    @classmethod
    def always_defect(cls, epsilon: float = 0.0) -> "PolicyProfile":
        return cls.named(ALWAYS_DEFECT, epsilon)

    @classmethod
    def lose_shift(cls, epsilon: float = 0.0) -> "PolicyProfile":
        return cls.named(LOSE_SHIFT, epsilon)

    @classmethod
    def grim_trigger(cls, epsilon: float = 0.0) -> "PolicyProfile":
        return cls.named(GRIM_TRIGGER, epsilon)

    @classmethod
    def pavlov(cls, epsilon: float = 0.0) -> "PolicyProfile":
        return cls.named(PAVLOV, epsilon)

    @classmethod
    def tit_for_tat(cls, epsilon: float = 0.0) -> "PolicyProfile":
        # Copy the opponent's previous action: C after CC/DC, D after DD/CD.
        return cls((Action.D, Action.C, Action.D, Action.C), epsilon)

    @classmethod
    def all_profiles(cls, epsilon: float = 0.0):
        """All 16 deterministic memory-one profiles."""
        out = []
        for mask in range(16):
            bits = tuple(bool((mask >> (3 - i)) & 1) for i in range(4))
            out.append(cls.from_bits(bits, epsilon))
        return out


class RandomStream:
    """Counter-based random stream.

    The pair (seed, counter) pins the stream exactly; distinct counters give
    statistically independent streams (Philox keyed on both words), so sweep
    cell i / run j is reproducible regardless of scheduling.
    """

    __slots__ = ("seed", "counter", "_gen")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed)
        self.counter = int(counter)
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.counter & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self) -> float:
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def normals(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)


def epsilon_greedy(q: QTable, s: State, epsilon: float, rng: RandomStream) -> Action:
    """Argmax action with probability 1-epsilon, the other action with
    probability epsilon (two actions exhaust the outcomes). Ties go to D.

    No draw is consumed when epsilon == 0.
    """
    if not (0.0 <= epsilon <= 0.5):
        raise ValueError(f"epsilon={epsilon} outside [0, 1/2]")
    greedy = q.greedy(s)
    if epsilon > 0.0 and rng.uniform() < epsilon:
        return greedy.other
    return greedy


def classify(q: QTable) -> PolicyProfile:
    """Greedy policy of a table (ties toward D), as a zero-exploration profile."""
    return PolicyProfile(tuple(q.greedy(s) for s in STATES), 0.0)


def is_cooperative(name: str) -> bool:
    """True exactly for the two cooperative outcomes the dynamics reach:
    Pavlov and lose-shift. Grim trigger counts as non-cooperative here and is
    reported separately in sweeps."""
    return name in COOPERATIVE_NAMES
