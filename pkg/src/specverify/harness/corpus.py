"""Corpus helpers: a seeded synthetic text generator and prompt sampling."""

from __future__ import annotations

import numpy as np

_ONSETS = ["", "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
           "br", "ch", "cl", "dr", "fl", "gr", "pl", "pr", "sh", "sl", "sp", "st", "str", "th", "tr"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ea", "ee", "ie", "oa", "oo", "ou", "y"]
_CODAS = ["", "", "", "n", "r", "s", "t", "l", "m", "nd", "ng", "rt", "st", "ck", "sh", "x", "z"]

# Rare letters used only by bursty topic words.
_RARE = list("äöüßçñøåæœéèêëïîôûùÿžščřłđþðğışəæ") + list("αβγδεζηθικλμνξπρστυφχψω")

# Per-register surface conventions: word separators, sentence ends, extra symbols.
_REGISTERS = [
    {"sep": [" "], "end": [". ", "? ", "! "], "sym": [",", ";"], "cap": True},
    {"sep": ["_", ".", " "], "end": ["()\n", " = 0\n", ":\n    "], "sym": ["(", ")", "[", "]", "=", "+"], "cap": False},
    {"sep": [" ", "-"], "end": [".\n", "\n\n"], "sym": ["0", "1", "2", "3", "5", "7", "%", "$"], "cap": True},
    {"sep": [" "], "end": [". ", "; "], "sym": ["'", '"', ":"], "cap": False},
]


def _lexicon(rng, n_words, onsets, nuclei, codas):
    words: list[str] = []
    seen = set()
    while len(words) < n_words:
        n_syl = int(rng.choice([1, 1, 2, 2, 2, 3, 3, 4]))
        w = "".join(onsets[rng.integers(len(onsets))] + nuclei[rng.integers(len(nuclei))]
                    + codas[rng.integers(len(codas))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


class _Register:
    def __init__(self, rng, style, n_words, successors):
        # each register draws on its own slice of the syllable inventory
        on = [o for o in _ONSETS if rng.random() < 0.6] or _ONSETS
        nu = [v for v in _NUCLEI if rng.random() < 0.7] or _NUCLEI
        co = [c for c in _CODAS if rng.random() < 0.6] or _CODAS
        self.style = style
        self.words = _lexicon(rng, n_words, on, nu, co)
        zipf = 1.0 / np.arange(1, n_words + 1) ** 1.1
        self.zipf_cdf = np.cumsum(zipf / zipf.sum())
        self.succ = rng.integers(0, n_words, size=(n_words, successors))
        w = 1.0 / np.arange(1, successors + 1) ** 1.5
        self.succ_cdf = np.cumsum(w / w.sum())


def _topic_pool(rng, n_words):
    onsets = _ONSETS + _RARE
    nuclei = _NUCLEI + _RARE[:12]
    words = []
    while len(words) < n_words:
        w = "".join(onsets[rng.integers(len(onsets))] + nuclei[rng.integers(len(nuclei))]
                    for _ in range(int(rng.integers(2, 4))))
        if any(ch in _RARE for ch in w):
            words.append(w)
    return words


def synthetic_corpus(n_chars: int = 1_100_000, seed: int = 0, n_words: int = 1200, successors: int = 12,
                     follow: float = 0.7, n_registers: int = 4, drift: float = 0.7, n_topic_words: int = 3000,
                     topic_rate: float = 0.35) -> str:
    """Seeded pseudo-text made of documents in several registers.

    Each register has its own lexicon (built from a subset of a syllable
    inventory), a sparse word-bigram source with Zipfian word frequencies
    and its own separators and symbols. Documents of 1-20k characters are
    concatenated, and the register mix drifts from the start of the corpus
    to the end, so its two halves differ the way real corpora assembled from
    different sources do. Every document also repeats a handful of bursty
    topic words spelled with rare letters, giving the long, document-bound
    tail of real text.
    """
    rng = np.random.default_rng(seed)
    topics = _topic_pool(rng, n_topic_words)
    regs = [_Register(rng, _REGISTERS[i % len(_REGISTERS)], n_words, successors) for i in range(n_registers)]
    start_mix = rng.dirichlet(np.ones(n_registers) * drift)
    end_mix = rng.dirichlet(np.ones(n_registers) * drift)
    parts: list[str] = []
    size = 0
    while size < n_chars:
        t = size / n_chars
        mix = (1 - t) * start_mix + t * end_mix
        reg = regs[int(rng.choice(n_registers, p=mix / mix.sum()))]
        doc_len = int(rng.integers(1000, 20000))
        doc_topics = [topics[i] for i in rng.integers(0, len(topics), size=int(rng.integers(3, 12)))]
        doc = _document(reg, doc_len, rng, follow, doc_topics, topic_rate)
        parts.append(doc)
        size += len(doc)
    return "".join(parts)[:n_chars]


def _document(reg: _Register, n_chars: int, rng, follow: float, topics: list[str], topic_rate: float) -> str:
    st = reg.style
    out: list[str] = []
    size = 0
    prev = int(np.searchsorted(reg.zipf_cdf, rng.random()))
    sent_left = int(rng.integers(4, 14))
    capital = st["cap"]
    while size < n_chars:
        u_follow, u_pick, u_punct, u_sep = rng.random(4)
        n = len(reg.words)
        if u_follow < follow:
            w = int(reg.succ[prev, min(int(np.searchsorted(reg.succ_cdf, u_pick)), reg.succ.shape[1] - 1)])
        else:
            w = min(int(np.searchsorted(reg.zipf_cdf, u_pick)), n - 1)
        word = reg.words[w]
        if rng.random() < topic_rate:
            word = topics[int(u_pick * 7919) % len(topics)]
        if capital:
            word = word.capitalize()
            capital = False
        sent_left -= 1
        if sent_left == 0:
            word += st["end"][int(u_punct * len(st["end"]))]
            sent_left = 4 + int(u_sep * 10)
            capital = st["cap"]
        else:
            if u_punct < 0.08:
                word += st["sym"][int(u_punct / 0.08 * len(st["sym"]))]
            word += st["sep"][int(u_sep * len(st["sep"]))]
        out.append(word)
        size += len(word)
        prev = w
    return "".join(out)


def sample_prompts(ids: np.ndarray, n: int, prompt_len: int, seed: int) -> list[list[int]]:
    """``n`` random windows of ``prompt_len`` token ids, seed-deterministic."""
    ids = np.asarray(ids)
    if ids.size <= prompt_len:
        raise ValueError("corpus shorter than prompt length")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
    starts = rng.integers(0, ids.size - prompt_len, size=n)
    return [ids[s:s + prompt_len].tolist() for s in starts]
