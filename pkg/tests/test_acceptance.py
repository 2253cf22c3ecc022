"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from podkv import formats
from podkv.cli import main
from podkv.corpus import synthetic_corpus
from podkv.experiments import match_experiment, tau_sweep
from podkv.grouping import HeadBlocks, expected_key_entries, greedy_group, savings_rate, validate_blocks
from podkv.model import ModelConfig, forward_dense, init_model
from podkv.numerics import js_divergence
from podkv.runtime import PoDConfig, PoDKVCache, decode_step, gate_combine, generate, prefill, split_attention
from podkv.similarity import SimilarityTensor, collect_traces, layer_similarity


def test_exactness_of_gated_split(criterion):
    with criterion("1 gated split attention == dense softmax (1000 cases, err <= 1e-10, < 10 s)") as info:
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst = 0.0
        for case in range(1000):
            d = (2, 16, 64)[case % 3]
            n = int(rng.integers(4, 65))
            n_s = int(rng.integers(0, 4))
            n_r = int(rng.integers(1, max(2, n - n_s)))
            keys = rng.normal(size=(n, d)) * rng.uniform(0.2, 3.0)
            values = rng.normal(size=(n, d))
            q = rng.normal(size=d) * rng.uniform(0.2, 3.0)
            cfg = ModelConfig.create(num_layers=1, num_heads=1, head_dim=d)
            cache = PoDKVCache(cfg, PoDConfig(HeadBlocks.singletons(1, 1), n_s, n_r))
            for p in range(1, n + 1):
                cache.store(0, p, keys[p - 1][None], values[p - 1][None])
                cache.commit(p)
            out = gate_combine(split_attention(q, q, cache, 0, 0, n))
            scores = keys @ q / math.sqrt(d)
            w = np.exp(scores - scores.max())
            dense = (w / w.sum()) @ values
            worst = max(worst, float(np.abs(out - dense).max()))
        elapsed = time.perf_counter() - start
        info["detail"] = f"max err {worst:.2e}, {elapsed:.1f} s"
        assert worst <= 1e-10
        assert elapsed < 10


def dense_greedy(weights, prompt, steps):
    seq = list(prompt)
    out = []
    for _ in range(steps):
        t = int(np.argmax(forward_dense(weights, seq)[0][-1]))
        out.append(t)
        seq.append(t)
    return out


def test_end_to_end_dense_equivalence(criterion):
    with criterion("2 singleton-block PoD == dense: prefill <= 1e-8, 64 greedy tokens, 20 seeds, < 60 s") as info:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(20):
            w = init_model(ModelConfig.create(num_layers=8, num_heads=4, head_dim=16, seed=seed))
            prompt = synthetic_corpus(seed, 1, 64, 256)[0]
            pod = PoDConfig(HeadBlocks.singletons(8, 4), 4, 32, None)
            _, logits = prefill(w, pod, prompt)
            worst = max(worst, float(np.abs(logits - forward_dense(w, prompt)[0]).max()))
            gen = generate(w, pod, prompt, 64)
            assert gen.tokens == dense_greedy(w, prompt, 64), f"seed {seed}"
        elapsed = time.perf_counter() - start
        info["detail"] = f"max logit err {worst:.2e}, {elapsed:.1f} s"
        assert worst <= 1e-8
        assert elapsed < 60


def test_greedy_grouping_oracle(criterion):
    with criterion("3 greedy grouping passes exhaustive validation (200 tensors x 9 deltas, < 5 s)") as info:
        rng = np.random.default_rng(303)
        start = time.perf_counter()
        checked = 0
        for _ in range(200):
            L, H = int(rng.integers(1, 9)), int(rng.integers(1, 5))
            v = rng.random((H, L, L))
            v = (v + v.transpose(0, 2, 1)) / 2
            v[:, np.arange(L), np.arange(L)] = 1.0
            sim = SimilarityTensor(v)
            for delta in np.round(np.arange(1, 10) / 10, 1):
                blocks = greedy_group(sim, float(delta))
                assert not validate_blocks(blocks, sim).violations
                # independent all-pairs check of every block
                for h, head in enumerate(blocks.heads):
                    assert head[0][0] == 1 and head[-1][1] == L
                    assert all(b[0] == a[1] + 1 for a, b in zip(head, head[1:]))
                    for a, b in head:
                        block = v[h, a - 1:b, a - 1:b]
                        assert (block >= delta).all()
                checked += 1
        elapsed = time.perf_counter() - start
        info["detail"] = f"{checked} groupings, {elapsed:.2f} s"
        assert elapsed < 5


def test_js_properties(criterion):
    with criterion("4 JS symmetry/range/zero-iff-equal over 10000 pairs, JS([.5,.5],[1,0]) = 0.311278") as info:
        rng = np.random.default_rng(404)
        start = time.perf_counter()
        worst_asym = 0.0
        for _ in range(10_000):
            n = int(rng.integers(1, 17))
            p = rng.dirichlet(np.full(n, rng.uniform(0.05, 2)))
            q = rng.dirichlet(np.full(n, rng.uniform(0.05, 2)))
            if rng.random() < 0.2:
                p[rng.random(n) < 0.3] = 0.0
                p = p / p.sum() if p.sum() > 0 else np.eye(n)[0]
            a, b = js_divergence(p, q), js_divergence(q, p)
            worst_asym = max(worst_asym, abs(a - b))
            assert 0.0 <= a <= 1.0
            assert js_divergence(p, p) <= 1e-12
            if a <= 1e-12:
                np.testing.assert_allclose(p, q, atol=1e-6)
        hand = js_divergence([0.5, 0.5], [1.0, 0.0])
        elapsed = time.perf_counter() - start
        info["detail"] = f"max asymmetry {worst_asym:.1e}, hand value {hand:.6f}, {elapsed:.1f} s"
        assert worst_asym <= 1e-12
        assert abs(hand - 0.311278) <= 1e-5
        assert elapsed < 5


def test_savings_accounting(criterion):
    with criterion("5 35% accounting: within 2% at n=8192, 0.350 +- 0.001 at n=1e6, live counters exact at n=2048") as info:
        # 4 heads x 10 layers with 3 blocks each: sum_h (L - B_h) / (H L) = 28 / 40 = 0.7
        blocks = HeadBlocks.from_lists([[(1, 3), (4, 7), (8, 10)]] * 4, 0.5)
        n_s, n_r = 16, 128
        _, at_8192 = savings_rate(blocks, 8192, n_s, n_r)
        _, at_1e6 = savings_rate(blocks, 10**6, n_s, n_r)
        assert abs(at_8192 - 0.35) / 0.35 <= 0.02
        assert abs(at_1e6 - 0.35) <= 0.001

        w = init_model(ModelConfig.create(num_layers=10, num_heads=4, head_dim=16, seed=7))
        pod = PoDConfig(blocks, n_s, n_r)
        tokens = synthetic_corpus(7, 1, 2048, 256)[0]
        cache, _ = prefill(w, pod, tokens[:1984])
        H, L = 4, 10
        for t in tokens[1984:]:
            _, rep = decode_step(w, pod, cache, int(t))
            n = cache.length
            assert rep.key_entries == expected_key_entries(blocks, n, n_s, n_r)
            assert rep.value_entries == H * L * n
        assert cache.length == 2048
        cache.check_invariants()
        saved = H * L * 2048 - cache.key_entries()
        assert saved == sum(L - b for b in blocks.block_counts()) * (2048 - n_s - n_r)
        key_frac, total_frac = savings_rate(blocks, 2048, n_s, n_r)
        assert saved / (H * L * 2048) == key_frac
        info["detail"] = f"n=8192 -> {at_8192:.4f}, n=1e6 -> {at_1e6:.5f}, live n=2048 -> {total_frac:.4f}"


def test_skip_threshold(criterion):
    with criterion("6 skip counts monotone in tau, tau=0 skips all, disabled == unskipped, divergence 0 above gates (< 120 s)") as info:
        start = time.perf_counter()
        w = init_model(ModelConfig.create(seed=21))
        corpus = synthetic_corpus(21, 4, 128, 256)
        blocks = greedy_group(layer_similarity(collect_traces(w, corpus, 16)), 0.5)
        assert sum(blocks.block_counts()) < 32, "need shared layers for skipping"
        prompt = corpus[0][:64]
        pod = PoDConfig(blocks, 4, 32, None)
        ref = generate(w, pod, prompt, 256)
        unskipped = generate(w, pod.with_tau(2.0), prompt, 256)
        assert sum(int(r.skipped.sum()) for r in unskipped.reports) == 0
        diff = max(float(np.abs(a - b).max()) for a, b in zip(ref.step_logits, unskipped.step_logits))
        assert diff <= 1e-12

        taus = [round(0.1 * i, 1) for i in range(11)]
        sweep = tau_sweep(w, pod, prompt, taus, 256)
        skips = [p.skipped for p in sweep.points]
        assert skips == sorted(skips, reverse=True)
        assert sweep.points[0].skip_fraction == 1.0
        above = [p for p in sweep.points if p.tau > sweep.max_gate]
        assert above, "no tau above the largest observed gate"
        assert all(p.logit_divergence == 0.0 and p.skipped == 0 for p in above)
        elapsed = time.perf_counter() - start
        info["detail"] = (f"skips {skips}, max gate {sweep.max_gate:.3f}, "
                          f"divergence at 0.7 {sweep.points[7].logit_divergence:.2e}, {elapsed:.1f} s")
        assert elapsed < 120


def test_match_experiment(criterion, tmp_path):
    with criterion("7 match curve is exactly 1.0 at full context and byte-identical on rerun") as info:
        w = init_model(ModelConfig.create(seed=3))
        corpus = synthetic_corpus(3, 4, 96, 256)
        curve = match_experiment(w, corpus, [8, 16, 32, 64, 96], compare_last=16)
        assert curve.points[-1].budget == 96 and curve.points[-1].match_fraction == 1.0

        assert main(["gen", "--out", str(tmp_path / "m"), "--seed", "3", "--samples", "4", "--seq-len", "96"]) == 0
        args = ["experiment", "match", "--model", str(tmp_path / "m"), "--budgets", "8,16,32,64,96",
                "--compare-last", "16", "--out", str(tmp_path / "e")]
        assert main(args) == 0
        csv1 = (tmp_path / "e" / "match.csv").read_bytes()
        json1 = (tmp_path / "e" / "match.json").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "e" / "match.csv").read_bytes() == csv1
        assert (tmp_path / "e" / "match.json").read_bytes() == json1
        assert csv1 == curve.to_csv().encode()
        info["detail"] = "curve " + ", ".join(f"{p.budget}:{p.match_fraction:.3f}" for p in curve.points)


def test_pipeline_roundtrip(criterion, tmp_path):
    with criterion("8 on-disk analyze -> group -> run equals in-process (sim <= 1e-12, blocks and tokens exact)") as info:
        seed, samples, seq_len, q, delta = 12, 4, 96, 16, 0.965
        out = tmp_path
        assert main(["gen", "--out", str(out / "m"), "--seed", str(seed), "--samples", str(samples),
                     "--seq-len", str(seq_len)]) == 0
        assert main(["analyze", "--model", str(out / "m"), "--q", str(q), "--out", str(out / "a")]) == 0
        assert main(["group", "--similarity", str(out / "a" / "similarity.json"), "--delta", str(delta),
                     "--out", str(out / "g")]) == 0
        formats.write_tokens(out / "prompt.tok", [synthetic_corpus(seed, samples, seq_len, 256)[0][:64]])
        assert main(["run", "--model", str(out / "m"), "--blocks", str(out / "g" / "blocks.json"),
                     "--prompt", str(out / "prompt.tok"), "--steps", "32", "--tau", "0.3",
                     "--out", str(out / "r")]) == 0

        w = init_model(ModelConfig.create(seed=seed))
        corpus = synthetic_corpus(seed, samples, seq_len, 256)
        sim = layer_similarity(collect_traces(w, corpus, q))
        blocks = greedy_group(sim, delta)
        gen = generate(w, PoDConfig(blocks, 4, 32, 0.3), corpus[0][:64], 32)

        disk_sim = np.array(json.loads((out / "a" / "similarity.json").read_text())["values"])
        disk_blocks = HeadBlocks.from_dict(json.loads((out / "g" / "blocks.json").read_text()))
        disk_tokens = json.loads((out / "r" / "generation.json").read_text())["tokens"]
        err = float(np.abs(disk_sim - sim.values).max())
        info["detail"] = f"sim err {err:.1e}, blocks per head {blocks.block_counts()}"
        assert err <= 1e-12
        assert disk_blocks.heads == blocks.heads
        assert disk_tokens == gen.tokens
