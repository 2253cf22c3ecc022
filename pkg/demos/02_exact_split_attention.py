"""Split attention recombines into ordinary attention.

Attention over a sequence can be computed in two halves: the proximal tokens
(a few initial sink tokens plus a recent window) and everything in between.
Each half gives a softmax output and a log-sum-exp. A scalar gate built from
the two log-sum-exps mixes the halves back into the full softmax output.

When every head keeps its own keys (one layer per block), the whole model
therefore reproduces dense attention. We check that for prefill and for a few
greedy decode steps.
"""

import numpy as np

from podkv import HeadBlocks, ModelConfig, PoDConfig, forward_dense, generate, init_model

config = ModelConfig.create(num_layers=4, num_heads=2, head_dim=8, vocab_size=64, seed=1)
weights = init_model(config)
prompt = np.random.default_rng(1).integers(0, 64, size=40)

pod = PoDConfig(HeadBlocks.singletons(4, 2), n_s=2, n_r=8)
gen = generate(weights, pod, prompt, steps=8)

dense_logits, _ = forward_dense(weights, prompt)
print("max prefill logit difference:", np.abs(gen.prefill_logits - dense_logits).max())

# dense greedy decoding by recomputing the whole sequence each step
seq = list(prompt)
dense_tokens = []
for _ in range(8):
    nxt = int(forward_dense(weights, np.array(seq))[0][-1].argmax())
    dense_tokens.append(nxt)
    seq.append(nxt)
print("split-attention tokens:", gen.tokens)
print("dense tokens:          ", dense_tokens)
