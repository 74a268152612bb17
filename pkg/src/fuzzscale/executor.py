"""Real fuzzer processes: spawn, pause/resume by signal, CPU pinning, watchdog.

Every fuzzer runs in its own session so stop/continue signals reach the whole
process group, including the targets the fuzzer forks.
"""

from __future__ import annotations

import enum
import logging
import os
import shlex
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil

logger = logging.getLogger(__name__)


class ProcState(enum.Enum):
    NOT_STARTED = "not_started"
    RUNNING = "running"
    PAUSED = "paused"
    DEAD = "dead"


class InvalidTransition(RuntimeError):
    pass


@dataclass
class Limits:
    rss_limit_bytes: int | None = None
    max_descendants: int | None = None
    # cores' worth of CPU a tree may burn between sweeps before it is killed
    cpu_share_limit: float | None = None


@dataclass
class ProgramSpec:
    program_id: str
    command: str
    target_binary: str = ""
    target_args: str = ""
    input_dir: str = ""
    workdir: str | None = None


def render_command(template: str, **values) -> list[str]:
    """Fill ``{input_dir}``-style placeholders and split into argv.

    Values are shell-quoted before substitution so paths with spaces survive;
    ``target_args`` is inserted verbatim since it holds several arguments.
    """
    quoted = {k: (v if k == "target_args" else shlex.quote(str(v))) for k, v in values.items()}
    return shlex.split(template.format(**quoted))


@dataclass
class TargetProcess:
    program_id: str
    argv: list[str]
    workdir: Path
    log_path: Path
    cpu_set: frozenset = frozenset()
    state: ProcState = ProcState.NOT_STARTED
    popen: subprocess.Popen | None = None
    error: str | None = None
    _cpu_mark: tuple | None = field(default=None, repr=False)

    @property
    def pid(self) -> int | None:
        return self.popen.pid if self.popen else None

    def _mark_dead(self, reason: str) -> None:
        self.state = ProcState.DEAD
        self.error = self.error or reason


def spawn(tp: TargetProcess) -> TargetProcess:
    """Start the process pinned to ``tp.cpu_set``; a failure marks it dead."""
    if tp.state is not ProcState.NOT_STARTED:
        raise InvalidTransition(f"{tp.program_id}: cannot spawn from {tp.state.value}")
    cpus = set(tp.cpu_set)

    def pin():
        if cpus:
            os.sched_setaffinity(0, cpus)

    try:
        tp.log_path.parent.mkdir(parents=True, exist_ok=True)
        log = open(tp.log_path, "ab")
        try:
            tp.popen = subprocess.Popen(
                tp.argv,
                cwd=tp.workdir,
                stdin=subprocess.DEVNULL,
                stdout=log,
                stderr=subprocess.STDOUT,
                start_new_session=True,
                preexec_fn=pin,
            )
        finally:
            log.close()
    except (OSError, subprocess.SubprocessError) as exc:
        tp._mark_dead(f"spawn failed: {exc}")
        logger.error("%s: %s", tp.program_id, tp.error)
        return tp
    tp.state = ProcState.RUNNING
    return tp


def _signal_group(tp: TargetProcess, sig: int) -> None:
    try:
        os.killpg(tp.popen.pid, sig)
    except (ProcessLookupError, PermissionError) as exc:
        tp._mark_dead(f"signal {sig} failed: {exc}")
        raise InvalidTransition(f"{tp.program_id}: {tp.error}") from exc


def pause(tp: TargetProcess) -> TargetProcess:
    if tp.state is not ProcState.RUNNING:
        raise InvalidTransition(f"{tp.program_id}: cannot pause from {tp.state.value}")
    _signal_group(tp, signal.SIGSTOP)
    tp.state = ProcState.PAUSED
    return tp


def resume(tp: TargetProcess) -> TargetProcess:
    if tp.state is not ProcState.PAUSED:
        raise InvalidTransition(f"{tp.program_id}: cannot resume from {tp.state.value}")
    _signal_group(tp, signal.SIGCONT)
    tp.state = ProcState.RUNNING
    return tp


def _tree(pid: int) -> list[psutil.Process]:
    try:
        root = psutil.Process(pid)
        return [root, *root.children(recursive=True)]
    except psutil.NoSuchProcess:
        return []


def kill(tp: TargetProcess, reason: str = "killed") -> TargetProcess:
    """Kill the whole process tree, including children that left the group."""
    if tp.popen is not None:
        procs = _tree(tp.popen.pid)
        try:
            os.killpg(tp.popen.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
        for p in procs:
            try:
                p.kill()
            except psutil.NoSuchProcess:
                pass
        try:
            tp.popen.wait(timeout=5)
        except subprocess.TimeoutExpired:
            logger.error("%s: process %d did not exit after SIGKILL", tp.program_id, tp.popen.pid)
        psutil.wait_procs(procs[1:], timeout=1)
    if tp.state is not ProcState.DEAD:
        tp._mark_dead(reason)
    return tp


def tree_usage(tp: TargetProcess) -> dict:
    """RSS, descendant count and total CPU seconds of the live process tree."""
    procs = _tree(tp.popen.pid) if tp.popen else []
    rss = 0
    cpu = 0.0
    alive = 0
    for p in procs:
        try:
            with p.oneshot():
                if p.status() == psutil.STATUS_ZOMBIE:
                    continue
                rss += p.memory_info().rss
                t = p.cpu_times()
                cpu += t.user + t.system
                alive += 1
        except (psutil.NoSuchProcess, psutil.AccessDenied):
            continue
    return {"rss": rss, "descendants": max(alive - 1, 0), "cpu": cpu}


@dataclass
class KillAction:
    program_id: str
    reason: str


def watchdog_sweep(processes, limits: Limits) -> list[KillAction]:
    """Kill every live process tree over its limits; return what was killed.

    Processes whose root has exited on its own are marked dead too.
    """
    actions = []
    now = time.monotonic()
    for tp in list(processes):
        if tp.state not in (ProcState.RUNNING, ProcState.PAUSED) or tp.popen is None:
            continue
        if tp.popen.poll() is not None:
            kill(tp, f"exited with status {tp.popen.returncode}")
            actions.append(KillAction(tp.program_id, tp.error))
            continue
        usage = tree_usage(tp)
        reason = None
        if limits.rss_limit_bytes is not None and usage["rss"] > limits.rss_limit_bytes:
            reason = f"rss {usage['rss']} > {limits.rss_limit_bytes}"
        elif limits.max_descendants is not None and usage["descendants"] > limits.max_descendants:
            reason = f"{usage['descendants']} descendants > {limits.max_descendants}"
        elif limits.cpu_share_limit is not None:
            if tp._cpu_mark is not None:
                cpu0, t0 = tp._cpu_mark
                share = (usage["cpu"] - cpu0) / max(now - t0, 1e-9)
                if share > limits.cpu_share_limit:
                    reason = f"cpu share {share:.2f} > {limits.cpu_share_limit}"
            tp._cpu_mark = (usage["cpu"], now)
        if reason:
            logger.warning("watchdog: killing %s (%s)", tp.program_id, reason)
            kill(tp, f"watchdog: {reason}")
            actions.append(KillAction(tp.program_id, reason))
    return actions


class Executor:
    """Realizes scheduler actions on real processes, one per program.

    Layout per program: ``<campaign>/<program_id>/{cmd.log, fuzzer_out/, crashes/}``.
    """

    def __init__(self, programs: list[ProgramSpec], campaign_dir, cpu_set=None, limits: Limits | None = None):
        self.campaign_dir = Path(campaign_dir)
        self.cpu_set = frozenset(cpu_set if cpu_set is not None else os.sched_getaffinity(0))
        self.limits = limits or Limits()
        self.processes: dict[str, TargetProcess] = {}
        self._lock = threading.RLock()
        for spec in programs:
            home = self.campaign_dir / spec.program_id
            argv = render_command(
                spec.command,
                input_dir=spec.input_dir,
                output_dir=home / "fuzzer_out",
                target_binary=spec.target_binary,
                target_args=spec.target_args,
                program_id=spec.program_id,
            )
            self.processes[spec.program_id] = TargetProcess(
                spec.program_id,
                argv,
                Path(spec.workdir) if spec.workdir else home,
                home / "cmd.log",
                self.cpu_set,
            )

    def start(self, program_id) -> bool:
        """Spawn on first use, resume afterwards. False if the program is dead."""
        with self._lock:
            tp = self.processes[program_id]
            if tp.state is ProcState.NOT_STARTED:
                home = self.campaign_dir / program_id
                for sub in ("fuzzer_out", "crashes"):
                    (home / sub).mkdir(parents=True, exist_ok=True)
                spawn(tp)
            elif tp.state is ProcState.PAUSED:
                try:
                    resume(tp)
                except InvalidTransition:
                    pass
            return tp.state is ProcState.RUNNING

    def stop(self, program_id) -> bool:
        with self._lock:
            tp = self.processes[program_id]
            if tp.state is not ProcState.RUNNING:
                return False
            try:
                pause(tp)
            except InvalidTransition:
                return False
            return True

    def sweep(self) -> list[KillAction]:
        with self._lock:
            return watchdog_sweep(self.processes.values(), self.limits)

    def running(self) -> set:
        return {pid for pid, tp in self.processes.items() if tp.state is ProcState.RUNNING}

    def shutdown(self) -> None:
        """Kill every child tree. Safe to call more than once."""
        with self._lock:
            for tp in self.processes.values():
                if tp.popen is not None and tp.popen.returncode is None:
                    kill(tp, "shutdown")


class Watchdog:
    """Background thread calling :meth:`Executor.sweep` every ``period_s`` seconds.

    Kills are reported as ``(program_id, reason)`` tuples on ``out_queue``.
    """

    def __init__(self, executor: Executor, out_queue, period_s: float = 1.0):
        self.executor = executor
        self.queue = out_queue
        self.period_s = period_s
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="watchdog", daemon=True)

    def _run(self) -> None:
        while not self._stop.wait(self.period_s):
            try:
                for action in self.executor.sweep():
                    self.queue.put((action.program_id, action.reason))
            except Exception:  # keep sweeping; a bad read must not stop the watchdog
                logger.exception("watchdog sweep failed")

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5)
