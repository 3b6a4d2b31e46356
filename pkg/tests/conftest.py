import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).resolve().parent))

from sern.model import SernConfig, init_params  # noqa: E402
from sern.synthetic import synthetic_dialogs  # noqa: E402
from sern.text import build_vocabulary, emotion_set, encode  # noqa: E402

settings.register_profile(
    "sern",
    deadline=None,
    max_examples=int(os.environ.get("SERN_HYPOTHESIS_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("sern")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus():
    return synthetic_dialogs()


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocabulary(corpus, 1)


@pytest.fixture(scope="session")
def encoded(corpus, vocab):
    return [encode(d, vocab, emotion_set(6)) for d in corpus]


def tiny_config(vocab_size, **kw):
    base = dict(vocab_size=vocab_size, d_emb=4, d_lstm=3, d_gru=3, d_attn=3)
    base.update(kw)
    return SernConfig(**base)


@pytest.fixture
def tiny_params(vocab):
    return init_params(tiny_config(len(vocab)), seed=3)


def random_dialog(rng, vocab_size, n_utts=None, max_len=5):
    """Token-id lists for a dialog of random utterances (ids avoid PAD)."""
    n = n_utts if n_utts is not None else int(rng.integers(1, 8))
    return [rng.integers(1, vocab_size, size=int(rng.integers(1, max_len + 1))) for _ in range(n)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
