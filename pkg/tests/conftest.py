import sys

import pytest

from lobsim import SimConfig

# Small market that stays active; pinned for the determinism regression.
PINNED = dict(n_agents=300, steps=1500, warmup_steps=100, phi_0=0.8, depth_every=50, seed=7)


@pytest.fixture
def small_config():
    return SimConfig(**PINNED)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if verdicts:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(verdicts):
            terminalreporter.write_line(line)
