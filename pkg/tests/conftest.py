import os
import tempfile

import pytest

# hermetic cache unless the caller points at an existing one
if "SOLITONLAB_CACHE_DIR" not in os.environ:
    os.environ["SOLITONLAB_CACHE_DIR"] = tempfile.mkdtemp(prefix="solitonlab-test-cache-")

from solitonlab.ground_state import ModelParams, cached_profile  # noqa: E402
from solitonlab.kernel import cached_kernel, reference_clock  # noqa: E402

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line PASS/FAIL verdict for the terminal summary."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        store[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        terminalreporter.write_line(store[n])


@pytest.fixture(scope="session")
def profile_1d():
    return cached_profile(ModelParams(1, 3))


@pytest.fixture(scope="session")
def kernel_1d(profile_1d):
    return cached_kernel(profile_1d)


@pytest.fixture(scope="session")
def kernel_2d():
    return cached_kernel(cached_profile(ModelParams(2, 3)))


@pytest.fixture(scope="session")
def kernel_3d():
    return cached_kernel(cached_profile(ModelParams(3, 3)))


@pytest.fixture(scope="session")
def clock_2d(kernel_2d):
    return reference_clock(kernel_2d, s_max=2.0e4)


@pytest.fixture(scope="session")
def clock_3d(kernel_3d):
    return reference_clock(kernel_3d, s_max=2.0e3)
