import numpy as np
import pytest

from causalhrl.hrl import HrlHyper
from causalhrl.scm import ScmHyper
from causalhrl.driver import DriverSettings

# reduced-scale settings shared by the slower tests
DESK_SCM = dict(T=10, Fs=100, Qs=20, K=10, batch=64, hidden=32)
DESK_HRL = dict(T_goal=3000, eval_episodes=50)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def desk_hypers(max_iterations=8, **driver):
    return (ScmHyper(**DESK_SCM), HrlHyper(**DESK_HRL),
            DriverSettings(max_iterations=max_iterations, samples_per_var=512, **driver))


# one PASS/FAIL line per acceptance criterion, echoed at the end of the run
CRITERIA: dict[int, str] = {}


def record_criterion(k: int, passed: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if passed else 'FAIL'} ({detail})"
    CRITERIA[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
