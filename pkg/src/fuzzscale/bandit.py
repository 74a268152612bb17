"""Reward arithmetic and epsilon-greedy arm selection.

Everything here is a pure function over value types. The only stateful input
is the caller's random generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

COLD_START_REWARD = math.inf


class ColdStart(ValueError):
    """Raised when a reward is requested for an arm with no history."""


@dataclass
class Arm:
    """Bandit state of one fuzzed program.

    ``cov_history[i]`` is the coverage gained during the ``i``-th episode and
    ``time_history[i]`` its length in slices.
    """

    program_id: Hashable
    cov_history: list[float] = field(default_factory=list)
    time_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.cov_history) != len(self.time_history):
            raise ValueError("cov_history and time_history must have equal length")
        if any(c < 0 for c in self.cov_history):
            raise ValueError("coverage increments must be non-negative")
        if any(t <= 0 for t in self.time_history):
            raise ValueError("episode durations must be positive")

    def append(self, cov: float, time: float = 1) -> None:
        if cov < 0:
            raise ValueError(f"negative coverage increment {cov!r}")
        if time <= 0:
            raise ValueError(f"non-positive episode duration {time!r}")
        self.cov_history.append(cov)
        self.time_history.append(time)

    def __len__(self) -> int:
        return len(self.cov_history)

    @property
    def total_coverage(self) -> float:
        return sum(self.cov_history)

    @property
    def total_time(self) -> float:
        return sum(self.time_history)


@dataclass
class BanditParams:
    epsilon: float = 0.1
    gamma: float = 1.0
    gamma_cycle: tuple[float, ...] = (0.9, 0.99, 0.999)
    epsilon_min: float = 0.0
    epsilon_max: float = 0.75

    def __post_init__(self) -> None:
        self.gamma_cycle = tuple(self.gamma_cycle)
        if not 0 <= self.epsilon_min <= self.epsilon <= self.epsilon_max < 1:
            raise ValueError(
                "need 0 <= epsilon_min <= epsilon <= epsilon_max < 1, got "
                f"{self.epsilon_min}, {self.epsilon}, {self.epsilon_max}"
            )
        _check_gamma(self.gamma)
        for g in self.gamma_cycle:
            _check_gamma(g)


def _check_gamma(gamma: float) -> None:
    if not 0 < gamma <= 1:
        raise ValueError(f"discount factor must lie in (0, 1], got {gamma!r}")


def simple_reward(arm: Arm) -> float:
    """Total coverage divided by total fuzz time."""
    if not arm.time_history:
        raise ColdStart(f"arm {arm.program_id!r} has no history")
    cov = 0.0
    time = 0.0
    for c, t in zip(arm.cov_history, arm.time_history):
        cov += c
        time += t
    return cov / time


def discounted_reward(arm: Arm, gamma: float) -> float:
    """Coverage rate with the episode ``k`` steps before the newest weighted by ``gamma**k``.

    The sums are accumulated oldest-first as ``s = s * gamma + x``, so with
    ``gamma == 1`` the arithmetic is the same as :func:`simple_reward`.
    """
    _check_gamma(gamma)
    if not arm.time_history:
        raise ColdStart(f"arm {arm.program_id!r} has no history")
    cov = 0.0
    time = 0.0
    for c, t in zip(arm.cov_history, arm.time_history):
        cov = cov * gamma + c
        time = time * gamma + t
    return cov / time


def reward_or_cold_start(arm: Arm, reward_fn: Callable[[Arm], float]) -> float:
    """``reward_fn(arm)``, or +inf for an arm that has never run."""
    if not arm.time_history:
        return COLD_START_REWARD
    return reward_fn(arm)


def select_epsilon_greedy(
    candidates: Sequence[Arm],
    params: BanditParams,
    reward_fn: Callable[[Arm], float],
    rng: np.random.Generator,
) -> Hashable:
    """Pick a uniformly random candidate with probability epsilon, else the best one.

    Exactly one float is drawn per call, plus one integer when exploring.
    Ties on reward go to the lowest ``program_id``.
    """
    if not candidates:
        raise ValueError("no candidate arms")
    if rng.random() < params.epsilon:
        return candidates[int(rng.integers(len(candidates)))].program_id
    best_id = None
    best = -math.inf
    for arm in candidates:
        r = reward_or_cold_start(arm, reward_fn)
        if best_id is None or r > best or (r == best and arm.program_id < best_id):
            best, best_id = r, arm.program_id
    return best_id


def ramp_epsilon(params: BanditParams, t: int, horizon: int) -> float:
    """Linear ramp from ``epsilon_min`` at slice 0 to ``epsilon_max`` at ``horizon``, then flat."""
    if t < 0:
        raise ValueError("slice index must be non-negative")
    if t >= horizon:
        return params.epsilon_max
    frac = t / horizon
    return params.epsilon_min + (params.epsilon_max - params.epsilon_min) * frac


def cycle_gamma(params: BanditParams, t: int, period: int) -> float:
    if not params.gamma_cycle:
        raise ValueError("gamma_cycle is empty")
    if period <= 0:
        raise ValueError("gamma period must be positive")
    return params.gamma_cycle[(t // period) % len(params.gamma_cycle)]
