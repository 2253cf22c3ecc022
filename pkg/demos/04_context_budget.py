"""Greedy agreement with dense attention under a limited context budget.

A streaming mask keeps a few sink tokens and a recent window. We measure how
often its next-token argmax matches the dense model over the last positions of
each sample, for increasing budgets. At the full sample length the two agree
exactly.
"""

from podkv import ModelConfig, init_model
from podkv.corpus import synthetic_corpus
from podkv.experiments import match_experiment

config = ModelConfig.create(num_layers=4, num_heads=4, head_dim=16, seed=0)
weights = init_model(config)
corpus = synthetic_corpus(seed=0, num_samples=4, seq_len=96, vocab_size=config.vocab_size)

curve = match_experiment(weights, corpus, budgets=[8, 16, 32, 64, 96], compare_last=16, n_s=4)
print(curve.to_csv())
