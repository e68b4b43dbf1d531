import pytest
import torch

from cdsr.corpus import prepare_corpus
from cdsr.synth import SynthSpec, generate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    raw = generate(SynthSpec(users=40, items_per_domain=30, min_len=6, max_len=10, sequences_per_user=3, seed=3))
    corpus, _ = prepare_corpus(raw.records, min_interactions=0)
    return corpus


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
