"""Synthetic token streams with repetition structure.

Uniform random tokens give featureless attention. Each sample here is built
from a small per-sample pool of motifs, so later positions can copy earlier
spans and attention has something to lock onto.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput


def synthetic_corpus(seed: int, num_samples: int, seq_len: int, vocab_size: int,
                     motif_len: int = 8, num_motifs: int = 4,
                     repeat_prob: float = 0.7) -> list[np.ndarray]:
    """Return ``num_samples`` int64 sequences of length ``seq_len``.

    Each chunk of ``motif_len`` tokens is, with probability ``repeat_prob``, a
    copy of one of the sample's motifs; otherwise it is fresh random tokens.
    """
    if num_samples < 1 or seq_len < 1:
        raise InvalidInput("need at least one sample of length >= 1")
    if motif_len < 1 or num_motifs < 1 or not 0.0 <= repeat_prob <= 1.0:
        raise InvalidInput("bad repetition parameters")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(num_samples):
        motifs = rng.integers(0, vocab_size, size=(num_motifs, motif_len))
        chunks = []
        total = 0
        while total < seq_len:
            if rng.random() < repeat_prob:
                chunk = motifs[rng.integers(num_motifs)]
            else:
                chunk = rng.integers(0, vocab_size, size=motif_len)
            chunks.append(chunk)
            total += motif_len
        samples.append(np.concatenate(chunks)[:seq_len].astype(np.int64))
    return samples
