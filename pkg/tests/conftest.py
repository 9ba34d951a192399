import pytest

from dlcoal_astral.trees import SpeciesTree

BALANCED = "((A:1,B:1):0.5,(C:1,D:1):0.5);"
CATERPILLAR = "(((A:1,B:1):0.2,C:1.2):0.2,D:1.4);"
FIVE = "((A:1.0,B:1.0):0.5,(C:1.0,(D:0.5,E:0.5):0.5):0.5);"


@pytest.fixture
def balanced():
    return SpeciesTree.from_newick(BALANCED)


@pytest.fixture
def caterpillar():
    return SpeciesTree.from_newick(CATERPILLAR)


@pytest.fixture
def five():
    return SpeciesTree.from_newick(FIVE)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
