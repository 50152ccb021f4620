import sys

import pytest

from fedsandbox.datanode import DataNodeStore
from fedsandbox.datanode.service import create_app
from fedsandbox.httpserv import serve
from helpers import build_topology


@pytest.fixture
def data_node():
    handle = serve(create_app(DataNodeStore()))
    yield handle
    handle.stop()


@pytest.fixture(scope="module")
def small_topology():
    topo = build_topology(notes=20)
    yield topo
    topo.stop()


@pytest.fixture(scope="session")
def python() -> str:
    return sys.executable



def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
