import shutil
import subprocess
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def toy_crasher(tmp_path_factory):
    """Tiny target with two distinct crash sites: 'A' aborts, 'B' segfaults, 'H' hangs."""
    cc = shutil.which("gcc") or shutil.which("cc") or shutil.which("clang")
    if cc is None:
        pytest.skip("no C compiler")
    out = tmp_path_factory.mktemp("toy") / "toy"
    subprocess.run([cc, "-g", "-O0", "-o", str(out), str(DATA / "toy.c")], check=True)
    return out


@pytest.fixture(scope="session")
def fake_fuzzer():
    return DATA / "fake_fuzzer.py"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
