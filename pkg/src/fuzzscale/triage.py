"""Crash triage: re-run crashing inputs, trace them, dedupe by trace, classify by signal."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import shlex
import signal as _signal
import subprocess
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

DEFAULT_TRACER = "valgrind {argv}"
NONE_DESCRIPTION = "<none>"


class Outcome(enum.Enum):
    NOT_A_CRASH = "not_a_crash"
    HANG = "hang"


@dataclass
class CrashRecord:
    program_id: str
    input_file: str
    signal: int
    trace_hash: str | None = None
    raw_trace: str = ""
    description: str = NONE_DESCRIPTION
    frames: tuple = ()

    @property
    def traced(self) -> bool:
        return self.trace_hash is not None

    def dedupe_key(self) -> tuple:
        if self.traced:
            return (self.program_id, self.trace_hash)
        # no trace: the signal is all we know, so merge conservatively
        return (self.program_id, f"untraced:{self.signal}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames"] = [list(f) for f in self.frames]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CrashRecord":
        d = dict(d)
        d["frames"] = tuple(tuple(f) for f in d.get("frames", ()))
        return cls(**d)


def target_argv(target_binary: str, target_args: str, input_file) -> tuple[list[str], str | None]:
    """argv for one execution, AFL style: ``@@`` in the args is replaced by the
    input path, otherwise the input is fed on stdin (returned as second item)."""
    args = shlex.split(target_args or "")
    if "@@" in args:
        return [target_binary, *(str(input_file) if a == "@@" else a for a in args)], None
    return [target_binary, *args], str(input_file)


def _run(argv, stdin_path, timeout):
    stdin = open(stdin_path, "rb") if stdin_path else subprocess.DEVNULL
    try:
        proc = subprocess.Popen(
            argv, stdin=stdin, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, start_new_session=True
        )
        try:
            _, err = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            os.killpg(proc.pid, _signal.SIGKILL)
            proc.communicate()
            return None, ""
        return proc.returncode, err.decode(errors="replace")
    finally:
        if stdin_path:
            stdin.close()


def confirm(argv: list[str], stdin_path: str | None = None, timeout: float = 10.0) -> int | Outcome:
    """Re-execute and return the fatal signal number, or an :class:`Outcome`."""
    rc, _ = _run(argv, stdin_path, timeout)
    if rc is None:
        return Outcome.HANG
    if rc < 0:
        return -rc
    return Outcome.NOT_A_CRASH


def acquire_trace(tracer: str, argv: list[str], stdin_path: str | None = None, timeout: float = 60.0) -> str | None:
    """Run ``argv`` under the tracer command template and return its stderr.

    ``tracer`` receives the shell-joined target command as ``{argv}``.
    Returns ``None`` when the tracer cannot be run or times out.
    """
    cmd = shlex.split(tracer.format(argv=shlex.join(argv)))
    try:
        rc, err = _run(cmd, stdin_path, timeout)
    except OSError:
        return None
    if rc is None:
        return None
    return err


_VALGRIND_FRAME = re.compile(r"(?:at|by) 0x[0-9A-Fa-f]+: (?P<fn>.+?) \((?:in )?(?P<loc>[^()]*)\)\s*$")
_GDB_FRAME = re.compile(
    r"^#\d+\s+(?:0x[0-9a-fA-F]+ in )?(?P<fn>[^\s(]+)\s*\(.*?\)(?:\s+(?:at|from)\s+(?P<loc>\S+))?"
)
_ASAN_FRAME = re.compile(r"^\s*#\d+\s+0x[0-9a-fA-F]+ in (?P<fn>\S+)\s+(?P<loc>\S+)")
_VG_PREFIX = re.compile(r"^==\d+==\s?")
_FATAL = re.compile(r"Process terminating with default action of signal (\d+)")
_ADDRESS = re.compile(r"\s*(?:at address )?0x[0-9A-Fa-f]+")


def _module(loc: str) -> str:
    # "toy.c:4" -> "toy.c", "/usr/lib/libc.so.6" -> "libc.so.6", "(libfoo.so+0x12)" -> "libfoo.so"
    loc = loc.strip("()")
    loc = re.sub(r"\+0x[0-9a-fA-F]+$", "", loc)
    loc = re.sub(r"(:\d+)+$", "", loc)
    return os.path.basename(loc)


def normalize_trace(text: str, input_file: str | None = None) -> tuple[tuple, str]:
    """Address-free stack frames ``(function, module)`` and the fault description.

    For valgrind output only the fatal stack is used when present. Line
    numbers, addresses, pids and the input path are dropped.
    """
    if input_file:
        path = re.escape(str(input_file))
        text = re.sub(rf"(?<![\w./-]){path}(?![\w./-])", "<input>", text)
    lines = [_VG_PREFIX.sub("", ln).rstrip() for ln in text.splitlines()]
    start = 0
    description = NONE_DESCRIPTION
    for i, ln in enumerate(lines):
        if _FATAL.search(ln):
            start = i + 1
            nxt = lines[start].strip() if start < len(lines) else ""
            if nxt and not _VALGRIND_FRAME.search(nxt):
                description = _ADDRESS.sub("", nxt).strip() or NONE_DESCRIPTION
                start += 1
            break
    frames = []
    for ln in lines[start:]:
        m = _VALGRIND_FRAME.search(ln) or _GDB_FRAME.search(ln) or _ASAN_FRAME.search(ln)
        if m:
            frames.append((m.group("fn"), _module(m.group("loc") or "")))
        elif frames and start and not ln.strip():
            break
    return tuple(frames), description


def trace_hash(frames: Iterable[tuple]) -> str:
    blob = "\n".join(f"{fn}@{mod}" for fn, mod in frames)
    return hashlib.sha256(blob.encode()).hexdigest()


def make_record(program_id: str, input_file, sig: int, raw_trace: str | None) -> CrashRecord:
    rec = CrashRecord(str(program_id), str(input_file), sig)
    if raw_trace is not None:
        frames, description = normalize_trace(raw_trace, str(input_file))
        rec.raw_trace = raw_trace
        rec.description = description
        if frames:
            rec.frames = frames
            rec.trace_hash = trace_hash(frames)
    return rec


def dedupe(records: Iterable[CrashRecord]) -> list[CrashRecord]:
    """One record per distinct normalized trace (per program), sorted by hash.

    The representative of each group is the one with the smallest input path,
    so the result does not depend on input order.
    """
    groups: dict = {}
    for rec in records:
        key = rec.dedupe_key()
        best = groups.get(key)
        if best is None or rec.input_file < best.input_file:
            groups[key] = rec
    return [groups[k] for k in sorted(groups, key=lambda k: (k[1], k[0]))]


def signal_label(sig: int) -> str:
    if sig >= 32:
        return "OTHER"
    try:
        return _signal.Signals(sig).name
    except ValueError:
        return f"SIG{sig}"


def signal_counts(bugs: Iterable[CrashRecord]) -> Counter:
    """Bugs per signal number; signals 32 and above share the key ``"OTHER"``."""
    return Counter("OTHER" if b.signal >= 32 else b.signal for b in bugs)


def classify(bugs: Iterable[CrashRecord]) -> Counter:
    """Bugs per ``(signal label, tracer description)``."""
    return Counter((signal_label(b.signal), b.description or NONE_DESCRIPTION) for b in bugs)


def render_histogram(hist: Counter) -> str:
    if not hist:
        return "no bugs\n"
    rows = sorted(hist.items(), key=lambda kv: (_label_order(kv[0][0]), kv[0][1]))
    w = max(len(d) for (_, d), _ in rows)
    out = [f"{'Signal':<10} {'Description':<{w}} {'# bugs':>7}"]
    for (label, desc), n in rows:
        out.append(f"{label:<10} {desc:<{w}} {n:>7}")
    out.append(f"{'total':<10} {'':<{w}} {sum(hist.values()):>7}")
    return "\n".join(out) + "\n"


def _label_order(label: str) -> int:
    if label == "OTHER":
        return 1000
    try:
        return int(_signal.Signals[label])
    except KeyError:
        return 999


@dataclass
class TriageReport:
    bugs: list
    records: list
    hangs: list = field(default_factory=list)
    not_crashing: list = field(default_factory=list)

    def histogram(self) -> Counter:
        return classify(self.bugs)

    def to_dict(self) -> dict:
        return {
            "bug_count": len(self.bugs),
            "bugs": [b.to_dict() for b in self.bugs],
            "confirmed_crashes": len(self.records),
            "hangs": self.hangs,
            "not_crashing": self.not_crashing,
            "histogram": [
                {"signal": s, "description": d, "bugs": n} for (s, d), n in sorted(self.histogram().items())
            ],
        }


def triage_inputs(
    jobs: Iterable[tuple[str, str, str, str]],
    tracer: str = DEFAULT_TRACER,
    timeout: float = 10.0,
    trace_timeout: float = 60.0,
    workers: int | None = None,
) -> TriageReport:
    """Confirm, trace and dedupe ``(program_id, target_binary, target_args, input_file)`` jobs."""

    def one(job):
        program_id, binary, args, input_file = job
        argv, stdin_path = target_argv(binary, args, input_file)
        outcome = confirm(argv, stdin_path, timeout)
        if not isinstance(outcome, int):
            return job, outcome, None
        raw = acquire_trace(tracer, argv, stdin_path, trace_timeout) if tracer else None
        return job, outcome, make_record(program_id, input_file, outcome, raw)

    jobs = list(jobs)
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        results = list(pool.map(one, jobs))
    records, hangs, benign = [], [], []
    for (program_id, _, _, input_file), outcome, rec in results:
        if rec is not None:
            records.append(rec)
        elif outcome is Outcome.HANG:
            hangs.append([program_id, str(input_file)])
        else:
            benign.append([program_id, str(input_file)])
    records.sort(key=lambda r: (r.program_id, r.input_file))
    return TriageReport(dedupe(records), records, hangs, benign)


def crash_inputs(program_dir: Path) -> list[Path]:
    """Crashing inputs under ``crashes/`` and any fuzzer-managed ``crashes`` dirs."""
    found = set()
    for d in [program_dir / "crashes", *program_dir.glob("fuzzer_out/**/crashes")]:
        if d.is_dir():
            found.update(p for p in d.iterdir() if p.is_file() and not p.name.startswith("README"))
    return sorted(found)


def triage_campaign(campaign_dir, programs: dict, tracer: str = DEFAULT_TRACER, **kw) -> TriageReport:
    """Triage every program directory of a campaign and write ``bugs.json`` and ``signals.txt``.

    ``programs`` maps program id to ``(target_binary, target_args)``.
    """
    campaign = Path(campaign_dir)
    jobs = []
    for pid, (binary, args) in sorted(programs.items()):
        for inp in crash_inputs(campaign / pid):
            jobs.append((pid, binary, args, str(inp)))
    report = triage_inputs(jobs, tracer=tracer, **kw)
    (campaign / "bugs.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    (campaign / "signals.txt").write_text(render_histogram(report.histogram()))
    return report
