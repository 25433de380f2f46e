import numpy as np
import pytest

from celt.data import Encoder
from celt.model import ModelConfig
from celt.synthetic import corpus_text, generate_synthetic_corpus
from celt.tokenizer import build_vocab

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(3, 30)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(corpus_text(small_corpus), 300)


@pytest.fixture(scope="session")
def small_config(small_corpus, small_vocab):
    return ModelConfig.for_corpus(small_corpus, len(small_vocab), hidden_size=16, ff_size=32, num_heads=2,
                                  num_layers=1, dropout_p=0.0)


@pytest.fixture(scope="session")
def small_inputs(small_corpus, small_vocab, small_config):
    return Encoder(small_vocab, small_corpus).build_all(small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
