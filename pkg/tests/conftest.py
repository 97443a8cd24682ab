import pytest

from structedit.grammar import minilang
from structedit.tree import parse_tree


@pytest.fixture(scope="session")
def g():
    return minilang()


@pytest.fixture
def parse(g):
    return lambda text: parse_tree(g, text)


CALL_SRC = '(Assign (Name "x") (Call "foo" [(Name "a") (Name "b")]))'
CALL_TGT = '(Assign (Name "x") (Index (Name "a") (Name "b")))'


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
