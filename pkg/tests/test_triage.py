import random
import shutil
from collections import Counter

import pytest

from fuzzscale.triage import (
    CrashRecord,
    Outcome,
    classify,
    confirm,
    dedupe,
    make_record,
    normalize_trace,
    render_histogram,
    signal_counts,
    target_argv,
    trace_hash,
    triage_campaign,
    triage_inputs,
)

needs_valgrind = pytest.mark.skipif(shutil.which("valgrind") is None, reason="valgrind not installed")

VG_SEGV = """==4242== Memcheck, a memory error detector
==4242== Invalid write of size 4
==4242==    at 0x109156: site_b (toy.c:6)
==4242==    by 0x1091A0: main (toy.c:12)
==4242==  Address 0x0 is not stack'd, malloc'd or (recently) free'd
==4242==
==4242== Process terminating with default action of signal 11 (SIGSEGV)
==4242==  Access not within mapped region at address 0x0
==4242==    at 0x109156: site_b (toy.c:6)
==4242==    by 0x1091A0: main (toy.c:12)
==4242==  If you believe this happened as a result of a stack
"""


def test_target_argv():
    assert target_argv("/t", "-x @@", "/in/1") == (["/t", "-x", "/in/1"], None)
    assert target_argv("/t", "", "/in/1") == (["/t"], "/in/1")


def test_normalize_valgrind_trace_is_address_free():
    frames, desc = normalize_trace(VG_SEGV)
    assert frames == (("site_b", "toy.c"), ("main", "toy.c"))
    assert desc == "Access not within mapped region"
    other = VG_SEGV.replace("4242", "777").replace("0x109156", "0x4001234").replace("toy.c:6", "toy.c:9")
    assert normalize_trace(other) == (frames, desc)


def test_input_path_does_not_leak_into_frames():
    gdb = "#0  site_b () at toy.c:6\n#1  main (argc=2, argv=0x7ff) at toy.c:12\n"
    assert normalize_trace(gdb, "b")[0] == (("site_b", "toy.c"), ("main", "toy.c"))


def rec(pid, inp, sig, frames):
    return CrashRecord(pid, inp, sig, trace_hash(frames) if frames else None, frames=frames)


def test_dedupe_groups_by_trace_and_program():
    fa, fb = (("site_a", "toy.c"),), (("site_b", "toy.c"),)
    recs = [rec("p", "i3", 6, fa), rec("p", "i1", 6, fa), rec("p", "i2", 11, fb), rec("q", "i9", 11, fb),
            rec("p", "u1", 11, ()), rec("p", "u2", 11, ())]
    bugs = dedupe(recs)
    assert len(bugs) == 4
    assert {b.input_file for b in bugs if b.frames == fa} == {"i1"}
    for _ in range(10):
        shuffled = random.sample(recs, len(recs))
        assert dedupe(shuffled) == bugs
    assert dedupe(bugs) == bugs


def test_signal_histogram():
    bugs = [rec("p", "a", 11, (("x", "m"),)), rec("p", "b", 11, (("y", "m"),)), rec("p", "c", 6, (("z", "m"),)),
            rec("p", "d", 34, (("w", "m"),))]
    assert signal_counts(bugs) == Counter({11: 2, 6: 1, "OTHER": 1})
    hist = classify(bugs)
    assert hist[("SIGSEGV", "<none>")] == 2 and hist[("OTHER", "<none>")] == 1
    text = render_histogram(hist)
    assert text.splitlines()[-1].split()[-1] == "4"
    assert text.index("SIGABRT") < text.index("SIGSEGV") < text.index("OTHER")
    assert render_histogram(Counter()) == "no bugs\n"


def test_record_round_trip():
    r = make_record("p", "/in/x", 11, VG_SEGV)
    assert r.traced and CrashRecord.from_dict(r.to_dict()) == r
    assert make_record("p", "/in/x", 11, None).dedupe_key() == ("p", "untraced:11")


def test_confirm_outcomes(toy_crasher, tmp_path):
    inputs = {c: tmp_path / c for c in "ABHN"}
    for c, path in inputs.items():
        path.write_bytes(c.encode())
    argv = lambda c: target_argv(str(toy_crasher), "@@", inputs[c])[0]  # noqa: E731
    assert confirm(argv("A")) == 6
    assert confirm(argv("B")) == 11
    assert confirm(argv("N")) is Outcome.NOT_A_CRASH
    assert confirm(argv("H"), timeout=0.5) is Outcome.HANG
    assert confirm(*target_argv(str(toy_crasher), "", inputs["B"])) == 11


def _campaign(tmp_path, toy_crasher):
    crashes = tmp_path / "camp" / "toy" / "crashes"
    crashes.mkdir(parents=True)
    for i in range(3):
        (crashes / f"id_a{i}").write_bytes(b"A" + bytes([i]) * i)
        (crashes / f"id_b{i}").write_bytes(b"B" + bytes([i]) * (i + 1))
    (crashes / "id_benign").write_bytes(b"N")
    return tmp_path / "camp", {"toy": (str(toy_crasher), "@@")}


@needs_valgrind
def test_triage_two_crash_sites_give_two_bugs(toy_crasher, tmp_path):
    camp, programs = _campaign(tmp_path, toy_crasher)
    report = triage_campaign(camp, programs, timeout=10, workers=4)
    assert len(report.records) == 6
    assert len(report.bugs) == 2
    assert sorted(b.signal for b in report.bugs) == [6, 11]
    segv = next(b for b in report.bugs if b.signal == 11)
    assert segv.frames[:2] == (("site_b", "toy.c"), ("main", "toy.c"))
    assert any(fn == "site_a" for fn, _ in next(b for b in report.bugs if b.signal == 6).frames)
    assert [p for _, p in report.not_crashing] == [str(camp / "toy" / "crashes" / "id_benign")]
    assert (camp / "bugs.json").exists() and "SIGSEGV" in (camp / "signals.txt").read_text()
    again = triage_campaign(camp, programs, timeout=10, workers=2)
    assert [b.trace_hash for b in again.bugs] == [b.trace_hash for b in report.bugs]


def test_triage_without_tracer_falls_back_to_signal(toy_crasher, tmp_path):
    camp, programs = _campaign(tmp_path, toy_crasher)
    jobs = [("toy", str(toy_crasher), "@@", str(p)) for p in sorted((camp / "toy" / "crashes").iterdir())]
    report = triage_inputs(jobs, tracer="", workers=4)
    assert len(report.bugs) == 2 and not any(b.traced for b in report.bugs)
    broken = triage_inputs(jobs[:2], tracer="/nonexistent-tracer {argv}", workers=2)
    assert len(broken.records) == 2 and not any(b.traced for b in broken.records)
