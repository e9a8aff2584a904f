import pytest

from trajimpute import kernels
from trajimpute.config import RunConfig
from trajimpute.pipeline import prepare_sets
from trajimpute.synth import PersonaSpec, generate

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    prev = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(prev)


@pytest.fixture(scope="session")
def synthetic():
    return generate(PersonaSpec())


@pytest.fixture(scope="session")
def synthetic_sets(synthetic):
    return prepare_sets(synthetic.trajectories, RunConfig())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        line = f"criterion {n:2d}: {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
