import contextlib
import time

import numpy as np
import pytest

_ACCEPTANCE_LINES: list[str] = []


@contextlib.contextmanager
def acceptance(label: str, max_seconds: float):
    """Time one acceptance criterion and record a PASS/FAIL summary line."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        first = str(exc).splitlines()[0] if str(exc) else ""
        _ACCEPTANCE_LINES.append(f"FAIL  {label}  ({elapsed:.2f}s): {type(exc).__name__}: {first}")
        print(_ACCEPTANCE_LINES[-1])
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= max_seconds:
        _ACCEPTANCE_LINES.append(f"FAIL  {label}  ({elapsed:.2f}s >= {max_seconds:g}s budget)")
        print(_ACCEPTANCE_LINES[-1])
        pytest.fail(f"{label} took {elapsed:.2f}s, budget {max_seconds:g}s")
    _ACCEPTANCE_LINES.append(f"PASS  {label}  ({elapsed:.2f}s)")
    print(_ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
