import contextlib

import numpy as np
import pytest

from podkv.corpus import synthetic_corpus
from podkv.model import ModelConfig, init_model

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Context manager that records a named acceptance criterion as pass/fail."""

    @contextlib.contextmanager
    def _run(name):
        info = {}
        try:
            yield info
        except BaseException:
            _ACCEPTANCE.append((name, False, info.get("detail", "")))
            raise
        _ACCEPTANCE.append((name, True, info.get("detail", "")))

    return _run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_model():
    return init_model(ModelConfig.create(num_layers=2, num_heads=2, head_dim=4, vocab_size=11, seed=5))


@pytest.fixture(scope="session")
def toy_model():
    return init_model(ModelConfig.create(seed=1))


@pytest.fixture(scope="session")
def toy_corpus():
    return synthetic_corpus(1, 4, 96, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
