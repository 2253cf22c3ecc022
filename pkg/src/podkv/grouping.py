"""Greedy head-wise layer grouping and KV-cache savings accounting.

Layers are 1-based in every public structure here (block ranges, reports,
JSON), matching how blocks are usually written down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .similarity import SimilarityTensor


@dataclass(frozen=True)
class HeadBlocks:
    """Per-head list of inclusive 1-based layer ranges ``(first, last)``."""

    heads: tuple[tuple[tuple[int, int], ...], ...]
    delta: float

    @classmethod
    def singletons(cls, num_layers: int, num_heads: int, delta: float = 1.0) -> "HeadBlocks":
        return cls(tuple(tuple((l, l) for l in range(1, num_layers + 1)) for _ in range(num_heads)), delta)

    @classmethod
    def single_block(cls, num_layers: int, num_heads: int, delta: float = 0.0) -> "HeadBlocks":
        return cls(tuple(((1, num_layers),) for _ in range(num_heads)), delta)

    @classmethod
    def from_lists(cls, heads, delta: float) -> "HeadBlocks":
        return cls(tuple(tuple((int(a), int(b)) for a, b in blocks) for blocks in heads), float(delta))

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def num_layers(self) -> int:
        return self.heads[0][-1][1] if self.heads else 0

    def block_counts(self) -> list[int]:
        return [len(b) for b in self.heads]

    def lowest_layers(self) -> np.ndarray:
        """``(H, L)`` array: 0-based index of the block-lowest layer for each layer."""
        out = np.empty((self.num_heads, self.num_layers), dtype=np.int64)
        for h, blocks in enumerate(self.heads):
            for a, b in blocks:
                out[h, a - 1:b] = a - 1
        return out

    def check_coverage(self) -> None:
        L = self.num_layers
        for h, blocks in enumerate(self.heads):
            expected = 1
            for a, b in blocks:
                if a != expected or b < a:
                    raise InvalidInput(f"head {h + 1}: blocks {list(blocks)} do not tile 1..{L}")
                expected = b + 1
            if expected != L + 1:
                raise InvalidInput(f"head {h + 1}: blocks end at {expected - 1}, expected {L}")

    def to_dict(self) -> dict:
        return {"delta": self.delta, "heads": [[list(b) for b in blocks] for blocks in self.heads]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "HeadBlocks":
        blocks = cls.from_lists(data["heads"], data["delta"])
        blocks.check_coverage()
        return blocks


def greedy_group(sim: SimilarityTensor, delta: float) -> HeadBlocks:
    """Bottom-up greedy grouping.

    For each head, start with block ``{1}``; layer ``l`` joins the current
    block iff its similarity to every member is ``>= delta``, else it opens a
    new block.
    """
    if not 0.0 <= delta <= 1.0:
        raise InvalidInput(f"delta must be in [0, 1], got {delta}")
    v = sim.values
    H, L = sim.num_heads, sim.num_layers
    heads = []
    for h in range(H):
        blocks = [[0, 0]]
        for layer in range(1, L):
            start = blocks[-1][0]
            if np.all(v[h, layer, start:layer] >= delta):
                blocks[-1][1] = layer
            else:
                blocks.append([layer, layer])
        heads.append(tuple((a + 1, b + 1) for a, b in blocks))
    return HeadBlocks(tuple(heads), float(delta))


@dataclass(frozen=True)
class Violation:
    head: int   # 1-based
    kind: str   # "coverage" | "similarity" | "maximality"
    layers: tuple[int, ...]
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if not self.violations:
            return "ok"
        return "\n".join(f"head {v.head} {v.kind} {v.layers}: {v.detail}" for v in self.violations)


def validate_blocks(blocks: HeadBlocks, sim: SimilarityTensor) -> ValidationReport:
    """Check a grouping against a similarity tensor.

    Reports every in-block pair below ``delta``, every layer that opened a
    new block while being ``delta``-similar to the whole previous block, and
    any coverage defect. The report is empty exactly when ``blocks`` is the
    greedy grouping of ``sim`` at ``blocks.delta``.
    """
    if blocks.num_heads != sim.num_heads:
        raise InvalidInput(f"blocks have {blocks.num_heads} heads, similarity has {sim.num_heads}")
    L = sim.num_layers
    v, delta = sim.values, blocks.delta
    report = ValidationReport()
    for h, head_blocks in enumerate(blocks.heads):
        expected = 1
        for a, b in head_blocks:
            if a != expected or b < a or b > L:
                report.violations.append(Violation(h + 1, "coverage", (a, b), f"expected block starting at {expected}"))
            expected = b + 1
        if expected != L + 1:
            report.violations.append(Violation(h + 1, "coverage", (expected - 1,), f"blocks do not end at layer {L}"))
        if any(v_.kind == "coverage" and v_.head == h + 1 for v_ in report.violations):
            continue
        for a, b in head_blocks:
            for i in range(a, b + 1):
                for j in range(i + 1, b + 1):
                    s = v[h, i - 1, j - 1]
                    if not s >= delta:
                        report.violations.append(
                            Violation(h + 1, "similarity", (i, j), f"sim {s:.6g} < delta {delta}"))
        for (pa, pb), (a, _) in zip(head_blocks, head_blocks[1:]):
            if np.all(v[h, a - 1, pa - 1:pb] >= delta):
                report.violations.append(
                    Violation(h + 1, "maximality", (a,), f"layer {a} is delta-similar to all of block [{pa}, {pb}]"))
    return report


def distant_count(n: int, n_s: int, n_r: int) -> int:
    return max(0, n - n_s - n_r)


def expected_key_entries(blocks: HeadBlocks, n: int, n_s: int, n_r: int) -> int:
    """Closed-form key entries held by the PoD cache at sequence length ``n``."""
    L = blocks.num_layers
    prox = min(n, n_s + n_r)
    return sum(b * n + (L - b) * prox for b in blocks.block_counts())


def savings_rate(blocks: HeadBlocks, n: int, n_s: int, n_r: int) -> tuple[float, float]:
    """Fraction of key entries and of all KV entries saved versus a dense cache.

    Only distant tokens at non-lowest layers are saved, so
    ``key_fraction = sum_h (L - B_h) * n_D / (H * L * n)``. Values are never
    shared and keys and values are assumed equal in size, which halves the
    total. No distant tokens means zero savings rather than an error.
    """
    if n < 1 or n_s < 0 or n_r < 0:
        raise InvalidInput("need n >= 1 and non-negative n_s, n_r")
    L, H = blocks.num_layers, blocks.num_heads
    n_d = distant_count(n, n_s, n_r)
    shared_layers = sum(L - b for b in blocks.block_counts())
    key_fraction = shared_layers * n_d / (H * L * n)
    return key_fraction, key_fraction / 2.0


def asymptotic_savings(blocks: HeadBlocks) -> tuple[float, float]:
    """Limit of :func:`savings_rate` as ``n`` grows without bound."""
    L, H = blocks.num_layers, blocks.num_heads
    key_fraction = sum(L - b for b in blocks.block_counts()) / (H * L)
    return key_fraction, key_fraction / 2.0
