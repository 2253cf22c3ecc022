"""Skipping distant attention when the gate says it barely matters.

At layers that borrow distant scores, the gate is the weight the proximal half
receives. If it is at least a threshold tau, the distant half can be skipped.
tau = 0 skips every eligible head; a threshold above every observed gate skips
none and leaves the logits untouched. In between, skipping trades accuracy
for work.
"""

import numpy as np

from podkv import ModelConfig, PoDConfig, collect_traces, greedy_group, init_model, layer_similarity
from podkv.corpus import synthetic_corpus
from podkv.experiments import tau_sweep

config = ModelConfig.create(num_layers=8, num_heads=4, head_dim=16, seed=0)
weights = init_model(config)
corpus = synthetic_corpus(seed=0, num_samples=4, seq_len=96, vocab_size=config.vocab_size)
blocks = greedy_group(layer_similarity(collect_traces(weights, corpus)), 0.965)

pod = PoDConfig(blocks, n_s=4, n_r=16)
sweep = tau_sweep(weights, pod, corpus[0][:64], np.linspace(0, 1, 11), decode_steps=16)
print(f"largest gate seen: {sweep.max_gate:.3f}")
for p in sweep.points:
    print(f"tau={p.tau:.1f}  skipped {p.skipped:>4}/{p.eligible}  mean |logit diff| {p.logit_divergence:.2e}")
