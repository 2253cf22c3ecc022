"""Dense float64 kernels: stable softmax, log-sum-exp, JS divergence, RoPE.

Matrices are plain ``numpy`` arrays of dtype float64; probability vectors are
1-D arrays that are non-negative and sum to one.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput


def _as_finite_vector(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInput("expected a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("non-finite entry in input")
    return x


def stable_softmax(logits) -> np.ndarray:
    """Softmax with the max subtracted first, so large logits never overflow."""
    x = _as_finite_vector(logits)
    e = np.exp(x - x.max())
    return e / e.sum()


def log_sum_exp(logits) -> float:
    x = _as_finite_vector(logits)
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax of ``scores`` restricted to ``mask``.

    Returns ``(probs, lse)`` where entries outside the mask are exactly zero and
    ``lse`` is the log-sum-exp over each row's allowed entries. Rows with an
    empty mask get all-zero probabilities and ``lse = -inf``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    masked = np.where(mask, scores, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    m = np.where(m == -np.inf, 0.0, m)
    e = np.exp(masked - m)
    s = e.sum(axis=-1, keepdims=True)
    nonempty = s > 0
    probs = e / np.where(nonempty, s, 1.0)
    with np.errstate(divide="ignore"):
        lse = m + np.log(s)
    return probs, lse[..., 0]


def _kl_to_mid(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # KL(p || (p + q) / 2) with 0 * log(0 / x) = 0. The ratio is taken as
    # 2p / (p + q), which stays in (0, 2] even when halving would underflow.
    pos = p > 0
    ratio = 2.0 * np.where(pos, p, 1.0) / np.where(pos, p + q, 1.0)
    return np.where(pos, p * np.log2(ratio), 0.0).sum(axis=-1)


def js_divergence_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Base-2 Jensen-Shannon divergence along the last axis, clipped to [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInput(f"shape mismatch: {p.shape} vs {q.shape}")
    js = 0.5 * (_kl_to_mid(p, q) + _kl_to_mid(q, p))
    return np.clip(js, 0.0, 1.0)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence of two probability vectors, log base 2.

    The result lies in [0, 1], is symmetric, and is exactly 0 for ``p == q``.
    Zero-probability entries contribute nothing to their own KL term.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.size != q.size:
        raise InvalidInput(f"length mismatch: {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise InvalidInput("negative probability")
    return float(js_divergence_rows(p, q))


def rope_apply(vectors, positions, base: float = 10000.0) -> np.ndarray:
    """Rotate each row of ``vectors`` by its position.

    Adjacent coordinate pairs ``(2k, 2k+1)`` are rotated by
    ``position / base ** (2k / cols)``. Negative positions invert the rotation.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput("expected a 2-D matrix")
    rows, cols = x.shape
    if cols % 2:
        raise InvalidInput(f"RoPE needs an even number of columns, got {cols}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (rows,):
        raise InvalidInput(f"expected {rows} positions, got shape {pos.shape}")
    if not base > 0:
        raise InvalidInput("RoPE base must be positive")
    inv_freq = 1.0 / base ** (np.arange(0, cols, 2, dtype=np.float64) / cols)
    angles = pos[:, None] * inv_freq[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out
