import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        detail = "; ".join(("" if ok else "[not met] ") + d for ok, d in checks)
        terminalreporter.write_line(f"{status} criterion {k}: {detail}")
