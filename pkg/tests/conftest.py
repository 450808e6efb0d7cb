import numpy as np
import pytest

from wicrep.encoder import EncoderConfig, init_model
from wicrep.rng import Rng
from wicrep.tokenizer import Vocab, build_vocab


@pytest.fixture(scope="session")
def tiny_vocab() -> Vocab:
    return Vocab([f"w{i}" for i in range(20)])


@pytest.fixture(scope="session")
def tiny_model(tiny_vocab):
    # 2 layers / 16 dims keeps forward passes around a millisecond
    cfg = EncoderConfig(n_layers=2, d_model=16, n_heads=2, d_ffn=32, dropout=0.1)
    return init_model(cfg, tiny_vocab, seed=11)


@pytest.fixture(scope="session")
def small_corpus() -> list[str]:
    rng = Rng(999)
    words = [f"w{i}" for i in range(20)]
    out = []
    for _ in range(30):
        n = int(rng.integers(4, 9))
        idx = rng.integers(0, len(words), size=n)
        out.append(" ".join(words[int(i)] for i in idx))
    return out


@pytest.fixture(scope="session")
def small_corpus_vocab(small_corpus) -> Vocab:
    return build_vocab(small_corpus)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)
