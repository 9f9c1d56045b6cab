import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from blockprune import Corpus, ModelConfig, load_corpus
from blockprune.model import random_block_weights

DATA_DIR = Path(__file__).resolve().parent / "data"

# one line per acceptance criterion, echoed after the run so the verdicts
# stay visible without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus() -> Corpus:
    return load_corpus(DATA_DIR / "corpus.txt")


@pytest.fixture(scope="session")
def small_corpus(corpus) -> Corpus:
    return Corpus(data=corpus.data[:50_000], name="corpus-head")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d=8, n_heads=2, head_dim=4, ffn_hidden=16, n_blocks=1, causal=False)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_block(rng):
    cfg = tiny_config()
    return random_block_weights(cfg, rng), cfg
