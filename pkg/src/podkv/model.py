"""Seeded toy decoder-only transformer.

Pre-norm blocks (RMSNorm), standard multi-head attention with RoPE on queries
and keys, a two-layer GELU feed-forward and an untied unembedding. Everything
runs in float64. The model is never trained: weights come from a seeded
uniform draw, which is enough to produce structured attention traces and to
host the split-attention runtime.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .errors import InvalidInput
from .numerics import masked_softmax, rope_apply

RMS_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 8
    num_heads: int = 4
    head_dim: int = 16
    model_dim: int = 64
    vocab_size: int = 256
    rope_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise InvalidInput("num_layers and num_heads must be >= 1")
        if self.head_dim < 2 or self.head_dim % 2:
            raise InvalidInput(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.model_dim != self.num_heads * self.head_dim:
            raise InvalidInput(
                f"model_dim ({self.model_dim}) != num_heads * head_dim "
                f"({self.num_heads * self.head_dim})"
            )
        if self.vocab_size < 1:
            raise InvalidInput("vocab_size must be >= 1")
        if not self.rope_base > 0:
            raise InvalidInput("rope_base must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidInput("seed must be a 64-bit unsigned integer")

    @classmethod
    def create(cls, num_layers=8, num_heads=4, head_dim=16, vocab_size=256,
               rope_base=10000.0, seed=0) -> "ModelConfig":
        """Build a config with ``model_dim`` derived from heads and head size."""
        return cls(num_layers, num_heads, head_dim, num_heads * head_dim,
                   vocab_size, float(rope_base), int(seed))

    @property
    def ffn_dim(self) -> int:
        return 4 * self.model_dim

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        if set(data) != names:
            raise InvalidInput(f"config keys {sorted(data)} != {sorted(names)}")
        return cls(**{**data, "rope_base": float(data["rope_base"])})

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray      # (model_dim, model_dim)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_up: np.ndarray    # (model_dim, ffn_dim)
    w_down: np.ndarray  # (ffn_dim, model_dim)
    attn_norm: np.ndarray
    ffn_norm: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    embed: np.ndarray    # (vocab, model_dim)
    layers: tuple[LayerWeights, ...]
    final_norm: np.ndarray
    unembed: np.ndarray  # (model_dim, vocab)

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Flat ``name -> array`` view, used for serialization."""
        out = {"embed": self.embed, "final_norm": self.final_norm, "unembed": self.unembed}
        for i, layer in enumerate(self.layers):
            for f in fields(LayerWeights):
                out[f"layers.{i}.{f.name}"] = getattr(layer, f.name)
        return out

    @classmethod
    def from_named_tensors(cls, config: ModelConfig, tensors: dict[str, np.ndarray]) -> "ModelWeights":
        expected = _shapes(config)
        missing = set(expected) - set(tensors)
        if missing:
            raise InvalidInput(f"missing tensors: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise InvalidInput(f"{name}: shape {tensors[name].shape} != {shape}")
        t = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        layers = tuple(
            LayerWeights(**{f.name: t[f"layers.{i}.{f.name}"] for f in fields(LayerWeights)})
            for i in range(config.num_layers)
        )
        return cls(config, t["embed"], layers, t["final_norm"], t["unembed"])


def _shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F, V = config.model_dim, config.ffn_dim, config.vocab_size
    shapes = {"embed": (V, D), "final_norm": (D,), "unembed": (D, V)}
    per_layer = {"wq": (D, D), "wk": (D, D), "wv": (D, D), "wo": (D, D),
                 "w_up": (D, F), "w_down": (F, D), "attn_norm": (D,), "ffn_norm": (D,)}
    for i in range(config.num_layers):
        for name, shape in per_layer.items():
            shapes[f"layers.{i}.{name}"] = shape
    return shapes


def init_model(config: ModelConfig) -> ModelWeights:
    """Draw weights from ``numpy``'s PCG64 stream seeded with ``config.seed``.

    Every projection is uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; the
    embedding table counts as fan_in 1 (a one-hot row selects a single input).
    Norm gains start at one. Values are drawn in float32 and widened, so a
    float32 dump reloads bit-exactly.
    """
    rng = np.random.default_rng(config.seed)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)

    tensors = {}
    for name, shape in _shapes(config).items():
        if name.endswith("norm"):
            tensors[name] = np.ones(shape)
        elif name == "embed":
            tensors[name] = uniform(shape, 1)
        else:
            tensors[name] = uniform(shape, shape[0])
    return ModelWeights.from_named_tensors(config, tensors)


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS) * gain


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x * x * x)))


def qkv_heads(layer: LayerWeights, config: ModelConfig, x: np.ndarray,
              positions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project residual rows ``x`` to per-head ``(H, n, d)`` q, k, v with RoPE applied."""
    h = rms_norm(x, layer.attn_norm)
    H, d = config.num_heads, config.head_dim
    n = x.shape[0]
    q = (h @ layer.wq).reshape(n, H, d).transpose(1, 0, 2)
    k = (h @ layer.wk).reshape(n, H, d).transpose(1, 0, 2)
    v = (h @ layer.wv).reshape(n, H, d).transpose(1, 0, 2)
    pos = np.tile(np.asarray(positions), H)
    q = rope_apply(q.reshape(H * n, d), pos, config.rope_base).reshape(H, n, d)
    k = rope_apply(k.reshape(H * n, d), pos, config.rope_base).reshape(H, n, d)
    return q, k, v


def attn_out(layer: LayerWeights, heads: np.ndarray) -> np.ndarray:
    """Merge ``(H, n, d)`` head outputs and apply the output projection."""
    H, n, d = heads.shape
    return heads.transpose(1, 0, 2).reshape(n, H * d) @ layer.wo


def ffn(layer: LayerWeights, x: np.ndarray) -> np.ndarray:
    return gelu(rms_norm(x, layer.ffn_norm) @ layer.w_up) @ layer.w_down


def embed_tokens(weights: ModelWeights, tokens) -> np.ndarray:
    toks = validate_tokens(tokens, weights.config.vocab_size)
    return weights.embed[toks].copy()


def unembed(weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    return rms_norm(x, weights.final_norm) @ weights.unembed


def validate_tokens(tokens, vocab_size: int) -> np.ndarray:
    toks = np.asarray(tokens)
    if toks.ndim != 1 or toks.size == 0:
        raise InvalidInput("token sequence must be a non-empty 1-D array")
    if not np.issubdtype(toks.dtype, np.integer):
        raise InvalidInput("tokens must be integers")
    if toks.min() < 0 or toks.max() >= vocab_size:
        raise InvalidInput(f"token out of range [0, {vocab_size})")
    return toks.astype(np.int64)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


MaskFn = Callable[[int], np.ndarray]


def forward_masked(weights: ModelWeights, tokens, mask_fn: MaskFn = causal_mask,
                   trace_last_q: int = 0) -> tuple[np.ndarray, np.ndarray | None]:
    """Forward pass where every layer and head attends under ``mask_fn(n)``.

    Returns ``(logits, trace)``. ``trace`` has shape ``(L, H, q, n)`` holding
    the attention rows of the last ``q`` query positions, or is ``None`` when
    ``trace_last_q`` is 0.
    """
    cfg = weights.config
    x = embed_tokens(weights, tokens)
    n = x.shape[0]
    if not 0 <= trace_last_q <= n:
        raise InvalidInput(f"trace_last_q must be in [1, {n}], got {trace_last_q}")
    mask = mask_fn(n)
    positions = np.arange(n, dtype=np.float64)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    trace = None
    if trace_last_q:
        trace = np.zeros((cfg.num_layers, cfg.num_heads, trace_last_q, n))
    for li, layer in enumerate(weights.layers):
        q, k, v = qkv_heads(layer, cfg, x, positions)
        probs, _ = masked_softmax(q @ k.transpose(0, 2, 1) * scale, mask[None])
        if trace is not None:
            trace[li] = probs[:, n - trace_last_q:, :]
        x = x + attn_out(layer, probs @ v)
        x = x + ffn(layer, x)
    return unembed(weights, x), trace


def forward_dense(weights: ModelWeights, tokens, trace_last_q: int = 1):
    """Standard causal forward pass; returns ``(logits, trace)``.

    ``logits`` is ``(n, vocab)``; ``trace`` is ``(L, H, q, n)`` with row ``j``
    holding the attention distribution of query position ``n - q + j`` (zero
    beyond its causal boundary).
    """
    n = np.asarray(tokens).shape[0] if np.ndim(tokens) else 0
    if not 1 <= trace_last_q <= max(n, 1):
        raise InvalidInput(f"trace_last_q must be in [1, {n}], got {trace_last_q}")
    return forward_masked(weights, tokens, causal_mask, trace_last_q)


def next_token_argmax(logits_row) -> int:
    """Index of the largest logit; ``numpy.argmax`` already breaks ties low."""
    return int(np.argmax(np.asarray(logits_row)))
