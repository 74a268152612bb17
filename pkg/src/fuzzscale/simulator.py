"""Synthetic fuzzing targets with saturating coverage curves.

Each program's cumulative coverage after ``T`` fuzzed slices is
``c_max * (1 - exp(-T / tau))``, scaled by ``1 + noise_amp * u(T)``, rounded,
and clamped so it never decreases. ``u`` is a seeded sequence in (-1, 1),
either independent per slice or a smooth AR(1) walk squashed by ``tanh``; the
walk makes coverage arrive in bursts separated by plateaus. ``u(T)`` depends
on ``T`` alone, so coverage depends only on how much time a program got and
not on how its runs were interleaved.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

_NOISE_BLOCK = 256


@dataclass(frozen=True)
class SyntheticProgram:
    c_max: float
    tau: float
    noise_amp: float = 0.0
    seed: int = 0
    # correlation length of the noise in slices; 0 draws independent noise per slice
    noise_corr: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_corr < 0:
            raise ValueError("noise_corr must be non-negative")
        if self.c_max <= 0:
            raise ValueError("c_max must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 <= self.noise_amp < 1:
            raise ValueError("noise_amp must lie in [0, 1)")

    def expected(self, slices: float) -> float:
        """Noise-free cumulative coverage after ``slices`` slices."""
        return self.c_max * -math.expm1(-slices / self.tau)


class SimProgramState:
    """Mutable fuzzing progress of one synthetic program."""

    def __init__(self, program: SyntheticProgram):
        self.program = program
        self.slices = 0
        self.cumulative = 0
        self._rng = np.random.default_rng(program.seed)
        self._noise = np.empty(0)
        self._ar = 0.0
        self._rho = math.exp(-1.0 / program.noise_corr) if program.noise_corr > 0 else 0.0

    def _noise_at(self, k: int) -> float:
        # noise in (-1, 1) for the k-th slice (0-based); drawn in blocks, always in order
        while k >= len(self._noise):
            self._noise = np.concatenate([self._noise, self._draw_block()])
        return float(self._noise[k])

    def _draw_block(self) -> np.ndarray:
        if not self._rho:
            return self._rng.uniform(-1.0, 1.0, _NOISE_BLOCK)
        shocks = self._rng.standard_normal(_NOISE_BLOCK) * math.sqrt(1.0 - self._rho**2)
        out = np.empty(_NOISE_BLOCK)
        x = self._ar
        for i, e in enumerate(shocks):
            x = self._rho * x + e
            out[i] = x
        self._ar = x
        return np.tanh(out)

    def advance(self, slices_fuzzed: int = 1) -> int:
        """Fuzz for ``slices_fuzzed`` more slices; return the coverage gained."""
        if slices_fuzzed < 1:
            raise ValueError("slices_fuzzed must be >= 1")
        prog = self.program
        before = self.cumulative
        for _ in range(slices_fuzzed):
            k = self.slices
            self.slices += 1
            level = prog.expected(self.slices)
            if prog.noise_amp:
                level *= 1.0 + prog.noise_amp * self._noise_at(k)
            observed = int(round(level))
            if observed > self.cumulative:
                self.cumulative = observed
        return self.cumulative - before


def advance(state: SimProgramState, slices_fuzzed: int = 1) -> int:
    return state.advance(slices_fuzzed)


@dataclass
class WorkloadSpec:
    """Distribution of synthetic programs. Ranges are sampled log-uniformly."""

    n: int = 200
    c_max_range: tuple[float, float] = (200.0, 20000.0)
    tau_range: tuple[float, float] = (20.0, 5000.0)
    noise_amp: float = 0.2
    noise_corr: float = 50.0
    seed: int = 0
    id_prefix: str = "P"

    def __post_init__(self) -> None:
        self.c_max_range = tuple(self.c_max_range)
        self.tau_range = tuple(self.tau_range)
        if self.n < 1:
            raise ValueError("workload needs n >= 1")
        for name in ("c_max_range", "tau_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if not 0 <= self.noise_amp < 1:
            raise ValueError("noise_amp must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_max_range"] = list(self.c_max_range)
        d["tau_range"] = list(self.tau_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "WorkloadSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    if lo == hi:
        return np.full(n, float(lo))
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


def generate_workload(spec: WorkloadSpec) -> dict[str, SyntheticProgram]:
    """Draw ``spec.n`` programs keyed by zero-padded ids; same spec, same workload."""
    rng = np.random.default_rng(spec.seed)
    c_max = _log_uniform(rng, *spec.c_max_range, spec.n)
    tau = _log_uniform(rng, *spec.tau_range, spec.n)
    seeds = rng.integers(0, 2**63 - 1, spec.n)
    width = max(4, len(str(spec.n - 1)))
    return {
        f"{spec.id_prefix}{i:0{width}d}": SyntheticProgram(
            float(c_max[i]), float(tau[i]), spec.noise_amp, int(seeds[i]), spec.noise_corr
        )
        for i in range(spec.n)
    }


@dataclass
class OracleAllocation:
    slices: dict = field(default_factory=dict)
    expected_coverage: float = 0.0


def oracle_allocation(programs: dict[str, SyntheticProgram], cores: int, total_slices: int) -> OracleAllocation:
    """Clairvoyant upper bound: give each of the ``cores * total_slices`` slices to
    the program with the largest noise-free marginal gain.

    A program can occupy at most one core, so it gets at most ``total_slices``.
    Gains of a saturating exponential shrink geometrically, which makes the
    greedy allocation optimal for the noise-free curves.
    """
    heap = []
    for pid, prog in programs.items():
        heap.append((-prog.expected(1), pid))
    heapq.heapify(heap)
    alloc = dict.fromkeys(programs, 0)
    budget = cores * total_slices
    while budget and heap:
        _, pid = heapq.heappop(heap)
        alloc[pid] += 1
        budget -= 1
        k = alloc[pid]
        if k < total_slices:
            prog = programs[pid]
            gain = prog.expected(k + 1) - prog.expected(k)
            heapq.heappush(heap, (-gain, pid))
    total = math.fsum(programs[pid].expected(k) for pid, k in alloc.items())
    return OracleAllocation(alloc, total)
