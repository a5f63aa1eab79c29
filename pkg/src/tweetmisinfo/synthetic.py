"""Synthetic labelled tweet corpora for end-to-end checks without real data."""
from __future__ import annotations

import numpy as np

from .textnorm import Label, Tweet

_SYLLABLES = ["ka", "lo", "mi", "ru", "te", "zo", "ven", "dar", "pel", "sin", "bor", "qua"]
FILLER = ["the", "and", "today", "people", "news", "think", "really", "about", "just", "new"]


def class_vocab(label: Label, size: int = 12):
    """Nonsense words specific to one class (deterministic)."""
    rng = np.random.default_rng(1000 + int(label))
    return ["".join(rng.choice(_SYLLABLES, 3)) + str(int(label)) for _ in range(size)]


def make_corpus(n: int, labels=(Label.CONSPIRACY, Label.NON_CONSPIRACY), seed: int = 0,
                signal_words: int = 4, noise_words: int = 6, shuffle_labels: bool = False):
    """``n`` tweets split evenly across ``labels``.

    Each tweet mixes ``signal_words`` draws from its class vocabulary with
    ``noise_words`` shared filler words. With ``shuffle_labels`` the gold
    labels are permuted after generation, destroying the text/label link.
    """
    rng = np.random.default_rng(seed)
    vocabs = {lab: class_vocab(lab) for lab in labels}
    gold = [labels[i % len(labels)] for i in range(n)]
    tweets = []
    for i, lab in enumerate(gold):
        words = list(rng.choice(vocabs[lab], signal_words)) + list(rng.choice(FILLER, noise_words))
        rng.shuffle(words)
        tweets.append((f"t{i:05d}", " ".join(words)))
    if shuffle_labels:
        gold = [gold[j] for j in rng.permutation(n)]
    return [Tweet(tid, text, lab) for (tid, text), lab in zip(tweets, gold)]
