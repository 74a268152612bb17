"""Per-slice coverage increments from fuzzer stats files or from the simulator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoverageSample:
    program_id: object
    slice_index: int
    new_units: int
    degraded: bool = False

    def __post_init__(self) -> None:
        if self.new_units < 0:
            raise ValueError("new_units must be non-negative")


class StatsParseError(ValueError):
    pass


def adapter_parse_stats(text: str, key: str = "edges_found") -> int:
    """Read an integer counter from AFL-style ``key : value`` stats text.

    If the key appears more than once the last occurrence wins.
    """
    value = None
    for line in text.splitlines():
        name, sep, raw = line.partition(":")
        if not sep or name.strip() != key:
            continue
        raw = raw.strip()
        # some fuzzers print "123 (45.6%)" style values
        token = raw.split()[0] if raw else ""
        try:
            value = int(token)
        except ValueError as exc:
            raise StatsParseError(f"non-integer value for {key!r}: {raw!r}") from exc
    if value is None:
        raise StatsParseError(f"key {key!r} not found in stats")
    return value


class CumulativeTracker:
    """Turns a monotone cumulative counter into per-poll increments.

    A reading below the previous maximum (counter reset, partial write) gives a
    zero increment and does not lower the baseline, so increments always
    telescope to the largest value seen.
    """

    def __init__(self) -> None:
        self._last: dict = {}

    def update(self, program_id, cumulative: int) -> int:
        prev = self._last.get(program_id, 0)
        if cumulative <= prev:
            return 0
        self._last[program_id] = cumulative
        return cumulative - prev

    def total(self, program_id) -> int:
        return self._last.get(program_id, 0)


class StatsFileProvider:
    """Polls a stats file per program, e.g. AFL's ``fuzzer_stats``.

    ``path_template`` may use ``{program_id}`` and ``{campaign}``.
    """

    def __init__(self, path_template: str, counter_key: str = "edges_found", campaign: str | Path = "."):
        self.path_template = path_template
        self.counter_key = counter_key
        self.campaign = str(campaign)
        self._tracker = CumulativeTracker()

    def path_for(self, program_id) -> Path:
        return Path(self.path_template.format(program_id=program_id, campaign=self.campaign))

    def poll(self, program_id, since_slice: int) -> CoverageSample:
        path = self.path_for(program_id)
        try:
            cumulative = adapter_parse_stats(path.read_text(), self.counter_key)
        except (OSError, StatsParseError) as exc:
            logger.warning("degraded coverage feed for %r: %s", program_id, exc)
            return CoverageSample(program_id, since_slice, 0, degraded=True)
        return CoverageSample(program_id, since_slice, self._tracker.update(program_id, cumulative))

    def total(self, program_id) -> int:
        return self._tracker.total(program_id)


class SimulatedProvider:
    """Feeds coverage from synthetic programs; one slice of fuzzing per poll."""

    def __init__(self, programs: dict):
        from fuzzscale.simulator import SimProgramState

        self.states = {pid: SimProgramState(prog) for pid, prog in programs.items()}

    def poll(self, program_id, since_slice: int) -> CoverageSample:
        return CoverageSample(program_id, since_slice, self.states[program_id].advance(1))

    def total(self, program_id) -> int:
        return self.states[program_id].cumulative
