"""Offline inter-layer attention similarity.

Attention rows of the last ``q`` query positions are collected for every
layer and head, then each pair of layers is scored per head as one minus
their mean base-2 Jensen-Shannon divergence. Identical attention scores 1,
disjoint attention scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .model import ModelWeights, forward_dense
from .numerics import js_divergence_rows

DEFAULT_Q = 16


@dataclass(frozen=True)
class AttentionTrace:
    """Attention rows ``(L, H, q, n)`` for the last ``q`` queries of one sample.

    Row ``j`` belongs to query position ``n - q + j`` (0-based ``j``) and is
    zero past that position.
    """

    probs: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.probs.shape[0]

    @property
    def num_heads(self) -> int:
        return self.probs.shape[1]

    @property
    def q(self) -> int:
        return self.probs.shape[2]

    @property
    def n(self) -> int:
        return self.probs.shape[3]


@dataclass(frozen=True)
class SimilarityTensor:
    values: np.ndarray  # (H, L, L)

    @property
    def num_heads(self) -> int:
        return self.values.shape[0]

    @property
    def num_layers(self) -> int:
        return self.values.shape[1]

    def to_dict(self) -> dict:
        return {"L": self.num_layers, "H": self.num_heads, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "SimilarityTensor":
        values = np.asarray(data["values"], dtype=np.float64)
        if values.shape != (data["H"], data["L"], data["L"]):
            raise InvalidInput(f"values shape {values.shape} does not match L={data['L']}, H={data['H']}")
        return cls(values)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def check(self, atol: float = 0.0) -> None:
        """Raise ``InvalidInput`` unless symmetric, unit-diagonal and in [0, 1]."""
        v = self.values
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise InvalidInput(f"bad similarity shape {v.shape}")
        if np.abs(v - v.transpose(0, 2, 1)).max(initial=0.0) > atol:
            raise InvalidInput("similarity not symmetric")
        if np.abs(np.diagonal(v, axis1=1, axis2=2) - 1.0).max(initial=0.0) > atol:
            raise InvalidInput("similarity diagonal not 1")
        if v.min() < -atol or v.max() > 1 + atol:
            raise InvalidInput("similarity outside [0, 1]")


def collect_traces(weights: ModelWeights, samples, q: int = DEFAULT_Q) -> list[AttentionTrace]:
    if len(samples) == 0:
        raise InvalidInput("need at least one sample")
    shortest = min(len(s) for s in samples)
    if not 1 <= q <= shortest:
        raise InvalidInput(f"q={q} must be in [1, {shortest}] (shortest sample)")
    return [AttentionTrace(forward_dense(weights, s, trace_last_q=q)[1]) for s in samples]


def pairwise_js_sums(trace: AttentionTrace) -> np.ndarray:
    """Sum over the ``q`` traced rows of JS(layer a, layer b), shape ``(H, L, L)``."""
    L, H = trace.num_layers, trace.num_heads
    out = np.zeros((H, L, L))
    p = trace.probs
    for a in range(L):
        for b in range(a + 1, L):
            s = js_divergence_rows(p[a], p[b]).sum(axis=-1)
            out[:, a, b] = s
            out[:, b, a] = s
    return out


def layer_similarity(traces) -> SimilarityTensor:
    """Head-wise ``L x L`` similarity: ``1 - mean JS`` over samples and traced rows."""
    traces = list(traces)
    if not traces:
        raise InvalidInput("empty trace list")
    L, H, q = traces[0].num_layers, traces[0].num_heads, traces[0].q
    total = np.zeros((H, L, L))
    for t in traces:
        if t.probs.ndim != 4 or (t.num_layers, t.num_heads, t.q) != (L, H, q):
            raise InvalidInput(
                f"trace dims {t.probs.shape[:3]} do not match {(L, H, q)}"
            )
        total += pairwise_js_sums(t)
    values = np.clip(1.0 - total / (len(traces) * q), 0.0, 1.0)
    idx = np.arange(L)
    values[:, idx, idx] = 1.0
    return SimilarityTensor(values)
