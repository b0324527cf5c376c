import pytest

import ahmpc


@pytest.fixture(scope="session")
def lq():
    return ahmpc.scalar_lq()


@pytest.fixture(scope="session")
def lq_sys(lq):
    return ahmpc.lq_model(lq)


@pytest.fixture(scope="session")
def crane():
    return ahmpc.crane_model()


@pytest.fixture()
def lq_solver(lq_sys):
    return ahmpc.OcpSolver(lq_sys)


@pytest.fixture(scope="session")
def crane_rest():
    return ahmpc.benchmarks.CRANE_REST_STATE.copy()


@pytest.fixture(scope="session")
def crane_start():
    return ahmpc.benchmarks.CRANE_INITIAL_STATE.copy()
