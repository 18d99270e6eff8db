"""Actions, one-step-memory states, and the prisoner's-dilemma payoff structure."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class Action(IntEnum):
    """Cooperate or defect. The order D < C is fixed so that iteration and
    tie-breaking deterministically favor defection."""

    D = 0
    C = 1

    @property
    def other(self) -> "Action":
        return Action.C if self is Action.D else Action.D

    def __str__(self) -> str:
        return self.name


ACTIONS = (Action.D, Action.C)


class State(IntEnum):
    """Joint previous action, seen from the acting player (own action first)."""

    DD = 0
    CC = 1
    CD = 2
    DC = 3

    @property
    def own_prev(self) -> Action:
        return _STATE_PAIR[self][0]

    @property
    def opp_prev(self) -> Action:
        return _STATE_PAIR[self][1]

    def swap(self) -> "State":
        """The same round seen from the other player; an involution."""
        return _SWAP[self]

    def __str__(self) -> str:
        return self.name


STATES = (State.DD, State.CC, State.CD, State.DC)

_STATE_PAIR = {
    State.DD: (Action.D, Action.D),
    State.CC: (Action.C, Action.C),
    State.CD: (Action.C, Action.D),
    State.DC: (Action.D, Action.C),
}
_SWAP = {State.DD: State.DD, State.CC: State.CC, State.CD: State.DC, State.DC: State.CD}
_PAIR_TO_STATE = {pair: s for s, pair in _STATE_PAIR.items()}


def next_state(a1: Action, a2: Action) -> State:
    """State reached after player 1 plays a1 and player 2 plays a2, from
    player 1's perspective. Player 2 perceives the swap."""
    return _PAIR_TO_STATE[(a1, a2)]


@dataclass(frozen=True)
class PayoffMatrix:
    """Symmetric 2x2 stage-game rewards.

    Must satisfy the dilemma ordering r_dc > r_cc > r_dd > r_cd and the
    efficiency condition 2*r_cc > r_cd + r_dc. ``g`` records the scalar
    parameterization when the matrix was built from one.
    """

    r_cc: float
    r_cd: float
    r_dc: float
    r_dd: float
    g: float | None = None

    def __post_init__(self):
        if not (self.r_dc > self.r_cc > self.r_dd > self.r_cd):
            raise ValueError(
                "dilemma ordering violated: need r_dc > r_cc > r_dd > r_cd, got "
                f"r_dc={self.r_dc}, r_cc={self.r_cc}, r_dd={self.r_dd}, r_cd={self.r_cd}"
            )
        if not (2.0 * self.r_cc > self.r_cd + self.r_dc):
            raise ValueError(
                "efficiency condition violated: need 2*r_cc > r_cd + r_dc, got "
                f"2*{self.r_cc} <= {self.r_cd} + {self.r_dc}"
            )

    def reward(self, a1: Action, a2: Action) -> float:
        """Player 1's stage reward; player 2 receives reward(a2, a1)."""
        if a1 is Action.C:
            return self.r_cc if a2 is Action.C else self.r_cd
        return self.r_dc if a2 is Action.C else self.r_dd

    def delta_r(self) -> float:
        """Spread between the best and worst stage reward (r_dc - r_cd).

        For g-parameterized rewards this is (2+g) - g = 2 identically; using
        the identity avoids float cancellation in the bound formulas.
        """
        if self.g is not None:
            return 2.0
        return self.r_dc - self.r_cd

    @property
    def r_max(self) -> float:
        return self.r_dc

    @property
    def r_min(self) -> float:
        return self.r_cd

    def to_json_dict(self) -> dict:
        if self.g is not None:
            return {"g": self.g}
        return {"r_cc": self.r_cc, "r_cd": self.r_cd, "r_dc": self.r_dc, "r_dd": self.r_dd}

    @classmethod
    def from_json_dict(cls, d: dict) -> "PayoffMatrix":
        if "g" in d:
            return payoff_from_g(float(d["g"]))
        return cls(
            r_cc=float(d["r_cc"]),
            r_cd=float(d["r_cd"]),
            r_dc=float(d["r_dc"]),
            r_dd=float(d["r_dd"]),
        )


def payoff_from_g(g: float) -> PayoffMatrix:
    """Single-scalar reward parameterization: r_cc=2g, r_cd=g, r_dc=2+g, r_dd=2.

    Requires 1 < g < 2; both payoff invariants then hold automatically.
    """
    if g <= 1.0:
        raise ValueError(f"incentive to cooperate g={g} violates the lower bound g > 1")
    if g >= 2.0:
        raise ValueError(f"incentive to cooperate g={g} violates the upper bound g < 2")
    return PayoffMatrix(r_cc=2.0 * g, r_cd=g, r_dc=2.0 + g, r_dd=2.0, g=g)


def reward(m: PayoffMatrix, a1: Action, a2: Action) -> float:
    """Module-level alias for PayoffMatrix.reward."""
    return m.reward(a1, a2)
