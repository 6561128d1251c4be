import time

import pytest

from gmidflow import assets
from gmidflow.lut import build_lut_set
from gmidflow.netlist import parse_netlist

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def luts():
    return build_lut_set()


@pytest.fixture
def seed_doc():
    return parse_netlist(assets.data_path(assets.SEED_NETLIST).read_text())


@pytest.fixture
def seed_text():
    return assets.data_path(assets.SEED_NETLIST).read_text()


class Criterion:
    """Collects checks for one acceptance criterion and emits a single verdict line."""

    def __init__(self, sink: list, number: int, title: str, limit_s: float):
        self.sink, self.number, self.title, self.limit_s = sink, number, title, limit_s
        self.problems: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, msg: str) -> bool:
        if not ok:
            self.problems.append(msg)
        return ok

    def note(self, msg: str) -> None:
        self.notes.append(msg)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc is not None:
            self.problems.append(f"{exc_type.__name__}: {exc}")
        if elapsed > self.limit_s:
            self.problems.append(f"took {elapsed:.2f} s, limit {self.limit_s:g} s")
        verdict = "FAIL" if self.problems else "PASS"
        detail = "; ".join(self.problems or self.notes)
        line = f"criterion {self.number:>2} {verdict}  {self.title} ({elapsed:.2f} s)" + (f": {detail}" if detail else "")
        print(line)
        self.sink.append((self.number, line))
        if exc is not None:
            return False
        assert not self.problems, line
        return False


@pytest.fixture
def criterion(request):
    sink = request.config.stash.setdefault(_CRITERIA, [])

    def make(number: int, title: str, limit_s: float) -> Criterion:
        return Criterion(sink, number, title, limit_s)

    return make


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
