"""Split proximal/distant attention with cross-layer sharing of distant scores.

Every query position splits its causal context into *proximal* tokens (the
first ``n_s`` plus the last ``n_r``) and *distant* tokens (everything else).
Proximal attention uses the layer's own queries and keys. Distant attention
reuses the scores of the lowest layer of the layer's block (per head) and
aggregates the layer's own values. The two halves are merged with the
parameter-free gate ``g = Z_P / (Z_P + Z_D)``, which makes the result exactly
dense attention whenever the distant scores are the layer's own.

Because distant keys are only ever read at block-lowest layers, the cache
drops them everywhere else. Positions in this module are 1-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheCorruption, ConfigMismatch, InvalidInput
from .grouping import HeadBlocks
from .model import (ModelConfig, ModelWeights, attn_out, embed_tokens, ffn,
                    qkv_heads, unembed, validate_tokens)
from .numerics import masked_softmax


@dataclass(frozen=True)
class PoDConfig:
    """Runtime settings. ``tau=None`` disables distant-attention skipping."""

    blocks: HeadBlocks
    n_s: int = 4
    n_r: int = 32
    tau: float | None = None

    def __post_init__(self):
        if self.n_s < 0 or self.n_r < 1:
            raise InvalidInput(f"need n_s >= 0 and n_r >= 1, got n_s={self.n_s}, n_r={self.n_r}")
        if self.tau is not None and not self.tau >= 0:
            raise InvalidInput(f"tau must be >= 0 or None, got {self.tau}")
        self.blocks.check_coverage()

    def check_model(self, config: ModelConfig) -> None:
        got = (self.blocks.num_layers, self.blocks.num_heads)
        want = (config.num_layers, config.num_heads)
        if got != want:
            raise ConfigMismatch(f"blocks have (L, H) = {got}, model has (L, H) = {want}")

    def with_tau(self, tau: float | None) -> "PoDConfig":
        return PoDConfig(self.blocks, self.n_s, self.n_r, tau)

    def to_dict(self) -> dict:
        return {"n_s": self.n_s, "n_r": self.n_r, "tau": self.tau, "blocks": self.blocks.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "PoDConfig":
        return cls(HeadBlocks.from_dict(data["blocks"]), int(data["n_s"]), int(data["n_r"]), data["tau"])


def classify_tokens(i: int, n_s: int, n_r: int) -> tuple[np.ndarray, np.ndarray]:
    """Split context ``1..i`` into sorted proximal and distant position arrays."""
    if i < 1:
        raise InvalidInput(f"position must be >= 1, got {i}")
    lo = max(1, i - n_r + 1)
    start = np.arange(1, min(n_s, i) + 1)
    recent = np.arange(max(lo, min(n_s, i) + 1), i + 1)
    distant = np.arange(n_s + 1, lo) if lo > n_s + 1 else np.arange(0)
    return np.concatenate([start, recent]).astype(np.int64), distant.astype(np.int64)


def build_split_mask(n: int, n_s: int, n_r: int) -> tuple[np.ndarray, np.ndarray]:
    """``(proximal, distant)`` boolean ``n x n`` masks; row ``i-1`` is query ``i``."""
    if n < 1:
        raise InvalidInput("n must be >= 1")
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    causal = j <= i
    proximal = causal & ((j <= n_s) | (j >= i - n_r + 1))
    return proximal, causal & ~proximal


class _Rows:
    """Append-only row store with amortized growth."""

    def __init__(self, width: int, capacity: int = 64):
        self._data = np.empty((capacity, width))
        self.size = 0

    def append(self, row: np.ndarray) -> None:
        if self.size == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self._data.shape[1]))
            grown[:self.size] = self._data[:self.size]
            self._data = grown
        self._data[self.size] = row
        self.size += 1

    def extend(self, rows: np.ndarray) -> None:
        for row in rows:
            self.append(row)

    def view(self) -> np.ndarray:
        return self._data[:self.size]


class PoDKVCache:
    """Key/value cache with distant keys kept only at block-lowest layers.

    Values are stored for every token at every layer. Keys are stored for
    every token at each head's block-lowest layers; at the other layers only
    keys of currently proximal tokens are kept, in a dict keyed by position.
    Queries are never stored.
    """

    def __init__(self, config: ModelConfig, pod: PoDConfig):
        pod.check_model(config)
        self.config = config
        self.n_s, self.n_r = pod.n_s, pod.n_r
        self.lowest = pod.blocks.lowest_layers()  # (H, L), 0-based
        L, H, d = config.num_layers, config.num_heads, config.head_dim
        self.length = 0
        self._values = [[_Rows(d) for _ in range(H)] for _ in range(L)]
        self._keys: list[list[_Rows | dict[int, np.ndarray]]] = [
            [_Rows(d) if self.is_lowest(l, h) else {} for h in range(H)] for l in range(L)
        ]

    def is_lowest(self, layer: int, head: int) -> bool:
        return self.lowest[head, layer] == layer

    def store(self, layer: int, position: int, keys: np.ndarray, values: np.ndarray) -> None:
        """Store the ``(H, d)`` key and value rows of the token at ``position``."""
        if position != self.length + 1:
            raise CacheCorruption(f"storing position {position} into cache of length {self.length}")
        for h in range(self.config.num_heads):
            vals = self._values[layer][h]
            if vals.size != position - 1:
                raise CacheCorruption(f"layer {layer} head {h}: value store out of step")
            vals.append(values[h])
            store = self._keys[layer][h]
            if isinstance(store, _Rows):
                store.append(keys[h])
            else:
                store[position] = np.array(keys[h])

    def commit(self, position: int) -> None:
        """Finish a token: bump the length and drop keys that just became distant."""
        for layer_vals in self._values:
            for vals in layer_vals:
                if vals.size != position:
                    raise CacheCorruption(f"commit of position {position} with a layer not stored")
        self.length = position
        leaving = position - self.n_r
        if leaving > self.n_s:
            for layer_keys in self._keys:
                for store in layer_keys:
                    if isinstance(store, dict):
                        store.pop(leaving, None)

    def keys(self, layer: int, head: int, positions: np.ndarray) -> np.ndarray:
        store = self._keys[layer][head]
        if isinstance(store, _Rows):
            if positions.size and (positions.min() < 1 or positions.max() > store.size):
                raise CacheCorruption(f"layer {layer} head {head}: key positions beyond {store.size}")
            return store.view()[positions - 1]
        try:
            return np.stack([store[int(p)] for p in positions]) if positions.size else np.empty((0, self.config.head_dim))
        except KeyError as exc:
            raise CacheCorruption(f"layer {layer} head {head}: no key for position {exc.args[0]}") from None

    def distant_keys(self, layer: int, head: int, first: int, last: int) -> np.ndarray:
        """Keys for the contiguous range ``first..last`` at a block-lowest layer."""
        store = self._keys[layer][head]
        if not isinstance(store, _Rows):
            raise CacheCorruption(f"layer {layer} head {head} is not block-lowest and holds no distant keys")
        if last > store.size:
            raise CacheCorruption(f"layer {layer} head {head}: key positions beyond {store.size}")
        return store.view()[first - 1:last]

    def values(self, layer: int, head: int) -> np.ndarray:
        return self._values[layer][head].view()

    def key_entries(self) -> int:
        return sum(s.size if isinstance(s, _Rows) else len(s) for layer in self._keys for s in layer)

    def value_entries(self) -> int:
        return sum(v.size for layer in self._values for v in layer)

    def check_invariants(self) -> None:
        n = self.length
        prox, _ = classify_tokens(n, self.n_s, self.n_r) if n else (np.arange(0), None)
        prox_set = set(prox.tolist())
        for l, layer_keys in enumerate(self._keys):
            for h, store in enumerate(layer_keys):
                if self._values[l][h].size != n:
                    raise CacheCorruption(f"layer {l} head {h}: {self._values[l][h].size} values, length {n}")
                if isinstance(store, _Rows):
                    if store.size != n:
                        raise CacheCorruption(f"layer {l} head {h}: {store.size} keys at lowest layer, length {n}")
                elif set(store) != prox_set:
                    raise CacheCorruption(f"layer {l} head {h}: key positions differ from the proximal set")


@dataclass
class SplitAttentionOutput:
    o_p: np.ndarray
    o_d: np.ndarray | None
    gate: float
    lse_p: float
    lse_d: float | None


def gate_from_lse(lse_p, lse_d):
    """``exp(lse_p) / (exp(lse_p) + exp(lse_d))`` evaluated in log space."""
    return np.exp(lse_p - np.logaddexp(lse_p, lse_d))


def gate_combine(split: SplitAttentionOutput) -> np.ndarray:
    if split.o_d is None:
        return split.o_p
    return split.gate * split.o_p + (1.0 - split.gate) * split.o_d


def _proximal_part(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: float):
    probs, lse = masked_softmax((keys @ q) * scale, np.ones(keys.shape[0], dtype=bool))
    return probs @ values, float(lse)


def _distant_scores(q_shared: np.ndarray, keys: np.ndarray, scale: float):
    probs, lse = masked_softmax((keys @ q_shared) * scale, np.ones(keys.shape[0], dtype=bool))
    return probs, float(lse)


def split_attention(q_own, q_shared, cache: PoDKVCache, layer: int, head: int,
                    position: int, shared: tuple[np.ndarray, float] | None = None) -> SplitAttentionOutput:
    """Proximal and distant attention halves for one (layer, head, position).

    ``layer`` and ``head`` are 0-based, ``position`` 1-based. Distant scores
    come from ``q_shared`` against the block-lowest layer's keys, unless
    ``shared = (probs, lse)`` supplies them already computed.
    """
    scale = 1.0 / math.sqrt(cache.config.head_dim)
    prox, dist = classify_tokens(position, cache.n_s, cache.n_r)
    values = cache.values(layer, head)
    if values.shape[0] < position:
        raise CacheCorruption(f"layer {layer} head {head}: no value for position {position}")
    o_p, lse_p = _proximal_part(np.asarray(q_own, dtype=np.float64),
                                cache.keys(layer, head, prox), values[prox - 1], scale)
    if dist.size == 0:
        return SplitAttentionOutput(o_p, None, 1.0, lse_p, None)
    if shared is None:
        lowest = int(cache.lowest[head, layer])
        keys_d = cache.distant_keys(lowest, head, int(dist[0]), int(dist[-1]))
        shared = _distant_scores(np.asarray(q_shared, dtype=np.float64), keys_d, scale)
    probs_d, lse_d = shared
    o_d = probs_d @ values[dist[0] - 1:dist[-1]]
    return SplitAttentionOutput(o_p, o_d, float(gate_from_lse(lse_p, lse_d)), lse_p, lse_d)


def prefill(weights: ModelWeights, pod: PoDConfig, tokens) -> tuple[PoDKVCache, np.ndarray]:
    """Run the prompt in parallel under split attention and build the cache.

    Each query position ``i`` uses its own proximal/distant split; the cache
    is left holding what decoding needs at the final position.
    """
    cfg = weights.config
    cache = PoDKVCache(cfg, pod)
    x = embed_tokens(weights, tokens)
    n = x.shape[0]
    positions = np.arange(n, dtype=np.float64)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    prox_mask, dist_mask = build_split_mask(n, pod.n_s, pod.n_r)
    has_dist = dist_mask.any(axis=1)
    any_dist = bool(has_dist.any())
    final_prox, _ = classify_tokens(n, pod.n_s, pod.n_r)
    shared: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    H = cfg.num_heads
    for li, layer in enumerate(weights.layers):
        q, k, v = qkv_heads(layer, cfg, x, positions)
        heads = np.empty_like(v)
        for h in range(H):
            scores = q[h] @ k[h].T * scale
            if any_dist and cache.is_lowest(li, h):
                shared[h] = masked_softmax(scores, dist_mask)
            probs_p, lse_p = masked_softmax(scores, prox_mask)
            o = probs_p @ v[h]
            if any_dist:
                probs_d, lse_d = shared[h]
                g = np.where(has_dist, gate_from_lse(lse_p, lse_d), 1.0)[:, None]
                o = g * o + (1.0 - g) * (probs_d @ v[h])
            heads[h] = o
            _fill_cache(cache, li, h, k[h], v[h], final_prox)
        x = x + attn_out(layer, heads)
        x = x + ffn(layer, x)
    cache.length = n
    return cache, unembed(weights, x)


def _fill_cache(cache: PoDKVCache, layer: int, head: int, keys: np.ndarray,
                values: np.ndarray, final_prox: np.ndarray) -> None:
    cache._values[layer][head].extend(values)
    store = cache._keys[layer][head]
    if isinstance(store, _Rows):
        store.extend(keys)
    else:
        for p in final_prox:
            store[int(p)] = keys[p - 1].copy()


@dataclass
class DecodeStepReport:
    """What happened at one decode step. Arrays are indexed ``[layer, head]``."""

    position: int
    gates: np.ndarray
    skipped: np.ndarray
    eligible: np.ndarray
    logits: np.ndarray
    key_entries: int
    value_entries: int

    def records(self, step: int) -> list[dict]:
        """One JSON-ready dict per (layer, head); layer and head are 1-based."""
        L, H = self.gates.shape
        return [
            {"step": step, "layer": l + 1, "head": h + 1, "gate": float(self.gates[l, h]),
             "skipped": bool(self.skipped[l, h]), "key_entries": self.key_entries,
             "value_entries": self.value_entries}
            for l in range(L) for h in range(H)
        ]


def decode_step(weights: ModelWeights, pod: PoDConfig, cache: PoDKVCache,
                token: int) -> tuple[np.ndarray, DecodeStepReport]:
    """Append one token and return its next-token logits.

    At a block-lowest layer the distant scores are computed once and kept for
    the rest of the layer sweep. At the layers above it, a gate ``>= tau``
    means distant aggregation is skipped and the proximal output is used
    alone.
    """
    cfg = weights.config
    validate_tokens([token], cfg.vocab_size)
    i = cache.length + 1
    _, dist = classify_tokens(i, pod.n_s, pod.n_r)
    has_dist = dist.size > 0
    L, H = cfg.num_layers, cfg.num_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    gates = np.ones((L, H))
    skipped = np.zeros((L, H), dtype=bool)
    eligible = np.zeros((L, H), dtype=bool)
    shared: dict[int, tuple[np.ndarray, float]] = {}
    x = embed_tokens(weights, [token])
    pos = np.array([i - 1], dtype=np.float64)
    for li, layer in enumerate(weights.layers):
        q, k, v = qkv_heads(layer, cfg, x, pos)
        cache.store(li, i, k[:, 0], v[:, 0])
        heads = np.empty((H, 1, cfg.head_dim))
        for h in range(H):
            lowest = cache.is_lowest(li, h)
            if has_dist and lowest:
                keys_d = cache.distant_keys(li, h, int(dist[0]), int(dist[-1]))
                shared[h] = _distant_scores(q[h, 0], keys_d, scale)
            if has_dist and not lowest and pod.tau is not None:
                # gate first; distant values are only touched if needed
                prox, _ = classify_tokens(i, pod.n_s, pod.n_r)
                vals = cache.values(li, h)
                o_p, lse_p = _proximal_part(q[h, 0], cache.keys(li, h, prox), vals[prox - 1], scale)
                g = float(gate_from_lse(lse_p, shared[h][1]))
                eligible[li, h] = True
                gates[li, h] = g
                if g >= pod.tau:
                    skipped[li, h] = True
                    heads[h, 0] = o_p
                else:
                    o_d = shared[h][0] @ vals[dist[0] - 1:dist[-1]]
                    heads[h, 0] = g * o_p + (1.0 - g) * o_d
                continue
            split = split_attention(q[h, 0], None, cache, li, h, i, shared.get(h) if has_dist else None)
            eligible[li, h] = has_dist and not lowest
            gates[li, h] = split.gate
            heads[h, 0] = gate_combine(split)
        x = x + attn_out(layer, heads)
        x = x + ffn(layer, x)
    cache.commit(i)
    logits = unembed(weights, x)[0]
    return logits, DecodeStepReport(i, gates, skipped, eligible, logits,
                                    cache.key_entries(), cache.value_entries())


@dataclass
class Generation:
    tokens: list[int]
    prefill_logits: np.ndarray
    step_logits: list[np.ndarray] = field(default_factory=list)
    reports: list[DecodeStepReport] = field(default_factory=list)
    cache: PoDKVCache | None = None


def generate(weights: ModelWeights, pod: PoDConfig, prompt, steps: int,
             forced: list[int] | None = None) -> Generation:
    """Prefill ``prompt`` then run ``steps`` greedy decode steps.

    ``tokens`` holds the argmax prediction fed at each step. With ``forced``
    the fed tokens come from that list instead (teacher forcing), which keeps
    positions aligned across runs being compared; ``tokens`` still records
    the argmax predictions.
    """
    cache, logits = prefill(weights, pod, prompt)
    gen = Generation([], logits, cache=cache)
    row = logits[-1]
    for s in range(steps):
        pred = int(np.argmax(row))
        gen.tokens.append(pred)
        row, report = decode_step(weights, pod, cache, forced[s] if forced is not None else pred)
        gen.step_logits.append(row)
        gen.reports.append(report)
    return gen
