import numpy as np
import pytest

from physdiff import autograd as ag


@pytest.fixture(autouse=True)
def clean_tape():
    """Every test starts and ends with an empty tape."""
    ag.get_tape().clear()
    yield
    ag.get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


SEEDS = list(range(10))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """record(n, ok, detail) stores the summary line for acceptance check n."""

    def record(n: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{n:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
