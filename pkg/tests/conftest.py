from __future__ import annotations

import pytest

from radpretrain import corpus
from radpretrain.taxonomy import load_taxonomy
from radpretrain.tokenizer import load_base_vocab
from radpretrain.verify import build_fixture

# sentences quoted in the source discussion of masking
QUOTED = (
    "Streaky densities at the lung base might suggest pneumonia.",
    "Mild basilar atelectasis without definite focal consolidation.",
    "Findings are suggestive of mild pulmonary edema with basilar atelectasis.",
)


@pytest.fixture(scope="session")
def tax():
    return load_taxonomy()


@pytest.fixture(scope="session")
def base():
    return load_base_vocab()


@pytest.fixture(scope="session")
def rules():
    return corpus.load_rules()


@pytest.fixture(scope="session")
def headers():
    return corpus.load_headers()


@pytest.fixture(scope="session")
def fixture():
    """200 synthetic reports, preprocessed, plus the extended vocabulary."""
    return build_fixture(200)


@pytest.fixture(scope="session")
def vocab(fixture):
    return fixture.vocab


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
