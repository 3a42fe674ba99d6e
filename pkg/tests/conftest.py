import numpy as np
import pytest

from caan.training import TrainingConfig

# scaled-down model used across the training tests
TINY = dict(d=8, hidden=8, channels=(4, 4, 8, 8, 8), score_hidden=8)
SMALL = dict(d=64, hidden=64, channels=(8, 16, 32, 64, 128), score_hidden=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TrainingConfig(epochs=2, lr_generator=1e-3, lr_discriminator=1e-3, patience=0, **TINY)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Call ``criterion(ok, detail)`` once; the line is recorded and printed."""

    def record(ok, detail=""):
        name = request.node.get_closest_marker("criterion").args[0]
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
