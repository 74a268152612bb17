"""Campaign drivers: the simulated backend and the real-process backend."""

from __future__ import annotations

import contextlib
import io
import logging
import queue
import time
from pathlib import Path
from typing import IO

import numpy as np

from fuzzscale.engine import EventLog, Policy, remove_program, startup, tick
from fuzzscale.metrics import CampaignResult
from fuzzscale.simulator import SimProgramState, SyntheticProgram

logger = logging.getLogger(__name__)


def run_simulated(
    programs: dict[str, SyntheticProgram],
    cores: int,
    policy: Policy,
    total_slices: int,
    seed: int = 0,
    log: IO[str] | None = None,
    meta: dict | None = None,
) -> CampaignResult:
    """Schedule ``programs`` for ``total_slices`` slices on ``cores`` simulated cores."""
    ids = list(programs)
    state = startup(ids, cores)
    policy.attach(state)
    rng = np.random.default_rng(seed)
    sims = {pid: SimProgramState(prog) for pid, prog in programs.items()}
    meta = {"policy": policy.name, "cores": cores, "slices": total_slices, "seed": seed, **(meta or {})}
    events = EventLog(log) if log is not None else None
    if events:
        events.header(programs=ids, **meta)
    for _ in range(total_slices):
        running = list(state.run_list)
        batch = {pid: sims[pid].advance(1) for pid in running}
        actions = tick(state, policy, batch, rng)
        if events:
            events.tick(state, actions, running)
    return CampaignResult(dict(state.coverage), dict(state.fuzz_slices), meta)


def run_simulated_to_dir(
    programs: dict[str, SyntheticProgram],
    cores: int,
    policy: Policy,
    total_slices: int,
    out_dir: str | Path,
    seed: int = 0,
    meta: dict | None = None,
) -> CampaignResult:
    """:func:`run_simulated` writing ``events.jsonl`` and ``result.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "events.jsonl", "w") as log:
        result = run_simulated(programs, cores, policy, total_slices, seed=seed, log=log, meta=meta)
    result.dump(out / "result.json")
    return result


def run_real(
    programs: list,
    cores: int,
    policy: Policy,
    total_slices: int,
    slice_ms: int,
    executor,
    provider,
    out_dir: str | Path,
    seed: int = 0,
    sweep_s: float = 1.0,
    meta: dict | None = None,
) -> CampaignResult:
    """Drive real fuzzer processes in wall-clock slices.

    ``executor`` realizes start/stop actions (see :class:`fuzzscale.executor.Executor`)
    and ``provider`` polls coverage at each slice boundary. Programs killed by
    the watchdog or failing to spawn are dropped from scheduling.
    """
    from fuzzscale.executor import Watchdog

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [p.program_id for p in programs]
    state = startup(ids, cores)
    policy.attach(state)
    rng = np.random.default_rng(seed)
    meta = {"policy": policy.name, "cores": cores, "slices": total_slices, "seed": seed,
            "slice_ms": slice_ms, "backend": "real", **(meta or {})}
    deaths: queue.Queue = queue.Queue()
    watchdog = Watchdog(executor, deaths, period_s=sweep_s)
    slice_s = slice_ms / 1000.0

    def drop(pid, reason):
        if pid in state.dead:
            return
        remove_program(state, policy, pid)
        events.event("dead", slice=state.slice_index, program=str(pid), reason=reason)

    with open(out / "events.jsonl", "w") as log, contextlib.ExitStack() as stack:
        stack.callback(executor.shutdown)
        events = EventLog(log)
        events.header(programs=ids, **meta)
        for pid in list(state.run_list):
            if not executor.start(pid):
                drop(pid, "spawn failed")
        watchdog.start()
        stack.callback(watchdog.stop)
        deadline = time.monotonic()
        for _ in range(total_slices):
            deadline += slice_s
            pause = deadline - time.monotonic()
            if pause > 0:
                time.sleep(pause)
            while True:
                try:
                    pid, reason = deaths.get_nowait()
                except queue.Empty:
                    break
                drop(pid, reason)
            if not state.run_list and not state.stop_list:
                logger.error("every program is dead; ending campaign early")
                break
            running = list(state.run_list)
            batch = [provider.poll(pid, state.slice_index) for pid in running]
            actions = tick(state, policy, batch, rng)
            events.tick(state, actions, running)
            for pid in actions.stops:
                if pid not in actions.starts:
                    executor.stop(pid)
            for pid in actions.starts:
                if pid not in actions.stops and not executor.start(pid):
                    drop(pid, "start failed")
    result = CampaignResult(dict(state.coverage), dict(state.fuzz_slices), meta)
    result.dump(out / "result.json")
    return result


def event_log_text(programs, cores, policy, total_slices, seed=0) -> str:
    """Event log of a simulated campaign as a string (handy for determinism checks)."""
    buf = io.StringIO()
    run_simulated(programs, cores, policy, total_slices, seed=seed, log=buf)
    return buf.getvalue()
