import numpy as np
import pytest

from recipe_forge import promptkit, synth
from recipe_forge.toylm import data, model


@pytest.fixture(scope="session")
def bank():
    return promptkit.load_default_bank()


@pytest.fixture(scope="session")
def small_corpus():
    return synth.generate(60, seed=5)


@pytest.fixture(scope="session")
def small_vocab(small_corpus, bank):
    return data.corpus_vocab(small_corpus, bank)


@pytest.fixture(scope="session")
def small_encoded(small_corpus, bank, small_vocab):
    examples = promptkit.build_examples(bank, small_corpus, "S2", seed=0)
    records = [ex.record(i) for i, ex in enumerate(examples)]
    return data.encode_records(records, small_corpus.by_id(), small_vocab, small_corpus.d_vis, 128)


@pytest.fixture
def tiny_params(small_vocab, small_corpus):
    return model.init_model(small_vocab, 16, small_corpus.d_vis, 128, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
