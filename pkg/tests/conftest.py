import numpy as np
import pytest

from inrcodec.dwi import make_phantom, make_scheme


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scheme():
    return make_scheme(n_b0=1, shells={1000.0: 15})


@pytest.fixture(scope="session")
def small_phantom(scheme):
    """16x16x2 phantom, SNR 30: (Volume4D, TissueMask, TensorFit)."""
    return make_phantom((16, 16, 2), scheme, seed=3, snr=30.0)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line, echo it, and fail the test when it fails."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
