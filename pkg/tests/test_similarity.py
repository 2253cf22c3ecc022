import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon

from podkv.errors import InvalidInput
from podkv.model import forward_dense
from podkv.similarity import AttentionTrace, SimilarityTensor, collect_traces, layer_similarity


def random_trace(rng, L, H, q, n, peaked=False):
    probs = np.zeros((L, H, q, n))
    for j in range(q):
        support = n - q + j + 1
        alpha = np.full(support, 0.1 if peaked else 1.0)
        probs[:, :, j, :support] = rng.dirichlet(alpha, size=(L, H))
    return AttentionTrace(probs)


def test_collect_traces_cardinality_and_oracle(toy_model, toy_corpus):
    traces = collect_traces(toy_model, toy_corpus[:3], q=8)
    assert len(traces) == 3
    for t, s in zip(traces, toy_corpus[:3]):
        assert t.probs.shape == (8, 4, 8, len(s))
        np.testing.assert_array_equal(t.probs, forward_dense(toy_model, s, trace_last_q=8)[1])


def test_collect_traces_identical_samples(toy_model, toy_corpus):
    a, b = collect_traces(toy_model, [toy_corpus[0], toy_corpus[0]], q=4)
    np.testing.assert_array_equal(a.probs, b.probs)


@pytest.mark.parametrize("q", [0, 97])
def test_collect_traces_q_range(toy_model, toy_corpus, q):
    with pytest.raises(InvalidInput):
        collect_traces(toy_model, toy_corpus, q=q)


def test_collect_traces_empty(toy_model):
    with pytest.raises(InvalidInput):
        collect_traces(toy_model, [], q=1)


def test_self_similarity_is_one(rng):
    t = random_trace(rng, 1, 2, 3, 6)
    doubled = AttentionTrace(np.concatenate([t.probs, t.probs]))
    sim = layer_similarity([doubled])
    np.testing.assert_allclose(sim.values, 1.0, atol=0)


def test_disjoint_layers_similarity_zero():
    probs = np.zeros((2, 1, 2, 2))
    probs[0, 0, :, 0] = 1.0
    probs[1, 0, :, 1] = 1.0
    # row 0 has causal support 1 only in a real trace; here both rows span 2 keys
    sim = layer_similarity([AttentionTrace(probs)])
    assert sim.values[0, 0, 1] == pytest.approx(0.0, abs=1e-15)


def test_matches_bruteforce_average(rng):
    traces = [random_trace(rng, 2, 1, 2, 5) for _ in range(2)]
    terms = [jensenshannon(t.probs[0, 0, j], t.probs[1, 0, j], base=2) ** 2
             for t in traces for j in range(2)]
    expected = 1 - sum(terms) / 4
    sim = layer_similarity(traces)
    assert sim.values[0, 0, 1] == pytest.approx(expected, abs=1e-12)
    assert sim.values[0, 1, 0] == sim.values[0, 0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(0, 3),
       st.integers(1, 3), st.integers(0, 2**32 - 1), st.booleans())
def test_invariants(L, H, q, extra, N, seed, peaked):
    rng = np.random.default_rng(seed)
    traces = [random_trace(rng, L, H, q, q + extra, peaked) for _ in range(N)]
    sim = layer_similarity(traces)
    sim.check()
    perm = layer_similarity(traces[::-1])
    np.testing.assert_allclose(perm.values, sim.values, atol=1e-12)
    doubled = layer_similarity([t for t in traces for _ in range(2)])
    np.testing.assert_allclose(doubled.values, sim.values, atol=1e-12)


def test_errors(rng):
    with pytest.raises(InvalidInput):
        layer_similarity([])
    with pytest.raises(InvalidInput):
        layer_similarity([random_trace(rng, 2, 1, 2, 4), random_trace(rng, 3, 1, 2, 4)])


def test_json_roundtrip(rng):
    sim = layer_similarity([random_trace(rng, 3, 2, 2, 4)])
    doc = sim.to_dict()
    assert set(doc) == {"L", "H", "values"}
    back = SimilarityTensor.from_dict(doc)
    np.testing.assert_array_equal(back.values, sim.values)
