import numpy as np
import pytest

from specverify.harness.corpus import synthetic_corpus
from specverify.lm_core import NGramModel, Vocabulary, tokenize

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def big_corpus_tokens():
    """The >= 1 MB synthetic corpus used for the end-to-end checks."""
    return tokenize(synthetic_corpus(1_100_000, seed=0))


@pytest.fixture(scope="session")
def ngram_trio(big_corpus_tokens):
    toks = big_corpus_tokens
    vocab = Vocabulary(toks)
    half = len(toks) // 2
    draft = NGramModel(2, 0.1, vocab).fit(toks[:half])
    companion = NGramModel(2, 0.1, vocab).fit(toks[half:])
    target = NGramModel(4, 0.1, vocab).fit(toks)
    return draft, companion, target


@pytest.fixture(scope="session")
def small_trio():
    """Five-token trio trained on a seeded random text; differs enough for rejections."""
    rng = np.random.default_rng(11)
    alphabet = list("abcde")
    # a biased second-order source so the 3-gram target beats the 2-grams
    trans = rng.dirichlet(np.ones(5) * 0.4, size=(5, 5))
    seq = [0, 1]
    for _ in range(6000):
        seq.append(int(rng.choice(5, p=trans[seq[-2], seq[-1]])))
    toks = [alphabet[i] for i in seq]
    vocab = Vocabulary(alphabet)
    half = len(toks) // 2
    draft = NGramModel(2, 0.5, vocab).fit(toks[:half])
    companion = NGramModel(2, 0.5, vocab).fit(toks[half:])
    target = NGramModel(3, 0.5, vocab).fit(toks)
    return draft, companion, target, vocab.encode(toks)
