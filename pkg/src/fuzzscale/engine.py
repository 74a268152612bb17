"""Per-slice scheduling loop.

At every slice boundary the engine credits the previous slice to the running
programs, stops the one that has run longest, and asks the policy which
stopped program to resume. The run list is newest-first, so the program to
stop always sits at the end.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Hashable, Iterable, Mapping, Sequence

import numpy as np

from fuzzscale.bandit import Arm, BanditParams, cycle_gamma, ramp_epsilon
from fuzzscale.coverage import CoverageSample

logger = logging.getLogger(__name__)

POLICY_NAMES = ("round_robin", "simple_mab", "discounted_mab", "boian")
DEFAULT_GAMMA_PERIOD = 600


@dataclass
class Actions:
    """What the executor must do at one slice boundary."""

    slice_index: int
    stops: tuple = ()
    starts: tuple = ()

    @property
    def stop(self):
        return self.stops[0] if self.stops else None

    @property
    def start(self):
        return self.starts[0] if self.starts else None


@dataclass
class SchedulerState:
    cores: int
    run_list: list
    stop_list: list
    arms: dict
    slice_index: int = 0
    # slice boundary at which each program was last stopped; absent if never stopped
    last_run: dict = field(default_factory=dict)
    # slice boundary at which the current run began (0 for startup programs)
    run_started: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    fuzz_slices: dict = field(default_factory=dict)
    dead: set = field(default_factory=set)

    @property
    def programs(self) -> list:
        return list(self.arms)

    @property
    def live_count(self) -> int:
        return len(self.run_list) + len(self.stop_list)

    def check_invariants(self) -> None:
        running = set(self.run_list)
        stopped = set(self.stop_list)
        assert len(running) == len(self.run_list), "duplicate in run_list"
        assert len(stopped) == len(self.stop_list), "duplicate in stop_list"
        assert not running & stopped, "run_list and stop_list overlap"
        assert running | stopped == set(self.arms) - self.dead, "program lost"
        assert len(self.run_list) == min(self.cores, self.live_count)


def startup(programs: Sequence[Hashable], cores: int) -> SchedulerState:
    """Start the first ``cores`` programs in manifest order; pause the rest.

    The first program is placed last in the run list so startup runs are
    staggered: program ``k`` (1-based) is stopped at boundary ``k``.
    """
    if not programs:
        raise ValueError("empty program list")
    if cores < 1:
        raise ValueError("need at least one core")
    if len(set(programs)) != len(programs):
        raise ValueError("duplicate program ids")
    first = list(programs[:cores])
    state = SchedulerState(
        cores=cores,
        run_list=first[::-1],
        stop_list=list(programs[cores:]),
        arms={pid: Arm(pid) for pid in programs},
    )
    for pid in programs:
        state.coverage[pid] = 0
        state.fuzz_slices[pid] = 0
    for pid in first:
        state.run_started[pid] = 0
    return state


def select_round_robin(state: SchedulerState):
    """The stopped program paused the longest; never-run programs first, ties by id."""
    if not state.stop_list:
        raise ValueError("no stopped programs")
    return min(state.stop_list, key=lambda pid: (state.last_run.get(pid, -1), pid))


class Policy:
    """Base class for selection policies. Hooks default to no-ops."""

    name = "policy"

    def attach(self, state: SchedulerState) -> None:
        pass

    def observe(self, pid, units: float) -> None:
        pass

    def advance(self, t: int) -> None:
        pass

    def on_stop(self, pid) -> None:
        pass

    def on_start(self, pid) -> None:
        pass

    def on_remove(self, pid) -> None:
        pass

    def select(self, state: SchedulerState, rng: np.random.Generator):
        raise NotImplementedError


class RoundRobinPolicy(Policy):
    """Cycles through the programs; same choice as :func:`select_round_robin` in O(1)."""

    name = "round_robin"

    def attach(self, state):
        key = lambda pid: (state.last_run.get(pid, -1), pid)  # noqa: E731
        self._queue = OrderedDict((pid, None) for pid in sorted(state.stop_list, key=key))

    def on_stop(self, pid):
        self._queue[pid] = None

    def on_start(self, pid):
        del self._queue[pid]

    def on_remove(self, pid):
        self._queue.pop(pid, None)

    def select(self, state, rng):
        return next(iter(self._queue))


class MabPolicy(Policy):
    """Epsilon-greedy over discounted coverage rates.

    Discounted numerators and denominators are kept for every discount factor
    the policy can switch to, so a change of gamma costs nothing. Updates use
    the same recurrence as :func:`fuzzscale.bandit.discounted_reward` and give
    bit-identical rewards.
    """

    name = "mab"

    def __init__(self, params: BanditParams, gammas: Sequence[float]):
        self.params = params
        self.gammas = tuple(gammas)
        self.epsilon = params.epsilon
        self.gamma_index = 0

    @property
    def gamma(self) -> float:
        return self.gammas[self.gamma_index]

    def attach(self, state):
        ids = list(state.arms)
        self._index = {pid: i for i, pid in enumerate(ids)}
        self._ids = ids
        rank = {pid: r for r, pid in enumerate(sorted(ids))}
        self._rank = np.array([rank[pid] for pid in ids])
        n = len(ids)
        self._num = [[0.0] * n for _ in self.gammas]
        self._den = [[0.0] * n for _ in self.gammas]
        self._reward = np.full((len(self.gammas), n), math.inf)
        for pid, arm in state.arms.items():
            for c, t in zip(arm.cov_history, arm.time_history):
                self._push(self._index[pid], c, t)

    def _push(self, i: int, units: float, time: float) -> None:
        for k, g in enumerate(self.gammas):
            num = self._num[k][i] * g + units
            den = self._den[k][i] * g + time
            self._num[k][i] = num
            self._den[k][i] = den
            self._reward[k, i] = num / den

    def observe(self, pid, units):
        self._push(self._index[pid], float(units), 1.0)

    def reward(self, pid) -> float:
        return float(self._reward[self.gamma_index, self._index[pid]])

    def select(self, state, rng):
        stopped = state.stop_list
        if rng.random() < self.epsilon:
            return stopped[int(rng.integers(len(stopped)))]
        idx = np.fromiter((self._index[pid] for pid in stopped), dtype=np.intp, count=len(stopped))
        rewards = self._reward[self.gamma_index, idx]
        best = idx[rewards == rewards.max()]
        if len(best) > 1:
            best = best[np.argmin(self._rank[best])]
            return self._ids[int(best)]
        return self._ids[int(best[0])]


class SimpleMabPolicy(MabPolicy):
    name = "simple_mab"

    def __init__(self, params: BanditParams):
        super().__init__(params, (1.0,))


class DiscountedMabPolicy(MabPolicy):
    name = "discounted_mab"

    def __init__(self, params: BanditParams):
        super().__init__(params, (params.gamma,))


class BoianPolicy(MabPolicy):
    """Discounted MAB whose gamma cycles and whose epsilon ramps up with time."""

    name = "boian"

    def __init__(self, params: BanditParams, horizon: int, gamma_period: int = DEFAULT_GAMMA_PERIOD):
        super().__init__(params, params.gamma_cycle)
        self.horizon = horizon
        self.gamma_period = gamma_period
        self.epsilon = params.epsilon_min

    def advance(self, t):
        self.epsilon = ramp_epsilon(self.params, t, self.horizon)
        self.gamma_index = self.gammas.index(cycle_gamma(self.params, t, self.gamma_period))


def make_policy(
    name: str,
    params: BanditParams | None = None,
    *,
    horizon: int = 10_000,
    gamma_period: int = DEFAULT_GAMMA_PERIOD,
) -> Policy:
    params = params if params is not None else BanditParams()
    if name == "round_robin":
        return RoundRobinPolicy()
    if name == "simple_mab":
        return SimpleMabPolicy(params)
    if name == "discounted_mab":
        return DiscountedMabPolicy(params)
    if name == "boian":
        return BoianPolicy(params, horizon=horizon, gamma_period=gamma_period)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


def _batch_units(state: SchedulerState, batch) -> dict:
    if isinstance(batch, Mapping):
        samples = [CoverageSample(pid, state.slice_index, units) for pid, units in batch.items()]
    else:
        samples = list(batch)
    running = set(state.run_list)
    units = {}
    for s in samples:
        if s.program_id not in running:
            raise ValueError(f"coverage sample for non-running program {s.program_id!r}")
        if s.slice_index != state.slice_index:
            raise ValueError(
                f"sample for slice {s.slice_index}, expected slice {state.slice_index}"
            )
        if s.program_id in units:
            raise ValueError(f"duplicate sample for {s.program_id!r}")
        if s.new_units < 0:
            raise ValueError(f"negative coverage increment for {s.program_id!r}")
        units[s.program_id] = s.new_units
    return units


def tick(
    state: SchedulerState,
    policy: Policy,
    coverage_batch: Iterable[CoverageSample] | Mapping,
    rng: np.random.Generator,
) -> Actions:
    """Advance ``state`` by one slice boundary in place and return the executor actions.

    ``coverage_batch`` holds the previous slice's increments for the running
    programs, either as samples or as a ``{program_id: units}`` mapping. A
    running program without a sample is credited 0.
    """
    units = _batch_units(state, coverage_batch)
    for pid in state.run_list:
        if pid not in units:
            logger.warning("no coverage sample for %r at slice %d; crediting 0", pid, state.slice_index)
        u = units.get(pid, 0)
        state.arms[pid].append(u, 1)
        state.coverage[pid] += u
        state.fuzz_slices[pid] += 1
        policy.observe(pid, u)

    state.slice_index += 1
    t = state.slice_index
    policy.advance(t)

    stops = []
    starts = []
    if state.stop_list:
        if len(state.run_list) == state.cores:
            last = state.run_list.pop()
            state.stop_list.append(last)
            state.last_run[last] = t
            del state.run_started[last]
            policy.on_stop(last)
            stops.append(last)
        while len(state.run_list) < state.cores and state.stop_list:
            new = policy.select(state, rng)
            state.stop_list.remove(new)
            state.run_list.insert(0, new)
            state.run_started[new] = t
            policy.on_start(new)
            starts.append(new)
    return Actions(t, tuple(stops), tuple(starts))


def remove_program(state: SchedulerState, policy: Policy, pid) -> None:
    """Drop a dead program from scheduling; its arm is kept but never updated again."""
    if pid in state.dead:
        return
    if pid in state.run_list:
        state.run_list.remove(pid)
        state.run_started.pop(pid, None)
    elif pid in state.stop_list:
        state.stop_list.remove(pid)
    else:
        raise KeyError(pid)
    state.dead.add(pid)
    policy.on_remove(pid)


class EventLog:
    """Line-delimited JSON log with one record per slice boundary.

    Each tick record carries the programs credited at that boundary together
    with their cumulative fuzz slices and coverage, so the final per-program
    totals can be rebuilt from the log alone.
    """

    def __init__(self, stream: IO[str]):
        self.stream = stream

    def _write(self, record: dict) -> None:
        self.stream.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")

    def header(self, **meta) -> None:
        self._write({"type": "header", **meta})

    def tick(self, state: SchedulerState, actions: Actions, credited: Iterable) -> None:
        self._write(
            {
                "type": "tick",
                "slice": actions.slice_index,
                "stop": list(actions.stops),
                "start": list(actions.starts),
                "credit": {
                    str(pid): [state.fuzz_slices[pid], state.coverage[pid]] for pid in credited
                },
            }
        )

    def event(self, kind: str, **fields) -> None:
        self._write({"type": kind, **fields})
