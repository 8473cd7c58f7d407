import numpy as np
import pytest

from agentbandit.features import parse_lexicon

# Small pinned lexicon so feature tests do not move when the shipped data grows.
FROZEN_LEXICON_TEXT = """\
# test lexicon
[complexity]
how
why
explain
compare
mechanism
[drug]
aspirin
ibuprofen
warfarin
dose
[protein]
p53
brca1
kinase
[clinical]
trial
patients
"""


@pytest.fixture
def frozen_lexicon():
    return parse_lexicon(FROZEN_LEXICON_TEXT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
