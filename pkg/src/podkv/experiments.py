"""Attention-mode baselines and the two analysis experiments.

* ``match_experiment``: how often does attending only to a proximal budget
  (sink tokens plus a recent window) reproduce the dense model's greedy
  next-token prediction?
* ``tau_sweep``: how much distant computation does each gate threshold skip,
  and how far do the logits move compared to never skipping?
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import InvalidInput
from .model import ModelWeights, causal_mask, forward_masked
from .runtime import PoDConfig, build_split_mask, generate, prefill


@dataclass(frozen=True)
class Dense:
    pass


@dataclass(frozen=True)
class Window:
    w: int

    def __post_init__(self):
        if self.w < 1:
            raise InvalidInput("window size must be >= 1")


@dataclass(frozen=True)
class Streaming:
    n_s: int
    n_r: int

    def __post_init__(self):
        if self.n_s < 0 or self.n_r < 1:
            raise InvalidInput("streaming needs n_s >= 0 and n_r >= 1")


@dataclass(frozen=True)
class PoD:
    config: PoDConfig


AttentionMode = Dense | Window | Streaming | PoD


def window_mask(n: int, w: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return (j <= i) & (j > i - w)


def streaming_mask(n: int, n_s: int, n_r: int) -> np.ndarray:
    return build_split_mask(n, n_s, n_r)[0]


def run_mode(weights: ModelWeights, tokens, mode: AttentionMode) -> np.ndarray:
    """Logits for every position of ``tokens`` under the given attention mode."""
    if isinstance(mode, Dense):
        return forward_masked(weights, tokens, causal_mask)[0]
    if isinstance(mode, Window):
        return forward_masked(weights, tokens, partial(window_mask, w=mode.w))[0]
    if isinstance(mode, Streaming):
        return forward_masked(weights, tokens, partial(streaming_mask, n_s=mode.n_s, n_r=mode.n_r))[0]
    if isinstance(mode, PoD):
        mode.config.check_model(weights.config)
        return prefill(weights, mode.config, tokens)[1]
    raise InvalidInput(f"unknown attention mode {mode!r}")


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class MatchPoint:
    budget: int
    match_fraction: float
    samples: int


@dataclass(frozen=True)
class MatchCurve:
    points: tuple[MatchPoint, ...]
    n_s: int

    CSV_HEADER = ["budget", "match_fraction", "samples"]

    def to_csv(self) -> str:
        return _csv(self.CSV_HEADER, [(p.budget, repr(p.match_fraction), p.samples) for p in self.points])

    def to_dict(self) -> dict:
        return {"n_s": self.n_s,
                "points": [{"budget": p.budget, "match_fraction": p.match_fraction, "samples": p.samples}
                           for p in self.points]}


def match_experiment(weights: ModelWeights, corpus, budgets, compare_last: int,
                     n_s: int = 4) -> MatchCurve:
    """Fraction of positions where proximal-only attention keeps the dense argmax.

    Budget ``b`` means streaming attention over the ``n_s`` initial tokens
    plus the ``b - n_s`` most recent ones. Only the last ``compare_last``
    positions of each sample are scored.
    """
    corpus = [np.asarray(s) for s in corpus]
    if not corpus:
        raise InvalidInput("empty corpus")
    if compare_last < 1:
        raise InvalidInput("compare_last must be >= 1")
    budgets = sorted(set(int(b) for b in budgets))
    longest = max(len(s) for s in corpus)
    if not budgets or budgets[0] <= n_s or budgets[-1] > longest:
        raise InvalidInput(f"budgets must lie in ({n_s}, {longest}]")
    matches = np.zeros(len(budgets), dtype=np.int64)
    total = 0
    for sample in corpus:
        k = min(compare_last, len(sample))
        dense = run_mode(weights, sample, Dense())[-k:].argmax(axis=-1)
        total += k
        for bi, b in enumerate(budgets):
            pred = run_mode(weights, sample, Streaming(n_s, b - n_s))[-k:].argmax(axis=-1)
            matches[bi] += int((pred == dense).sum())
    return MatchCurve(tuple(MatchPoint(b, float(m) / total, total) for b, m in zip(budgets, matches)), n_s)


@dataclass(frozen=True)
class TauPoint:
    tau: float
    skip_fraction: float
    logit_divergence: float
    token_disagreement: float
    skipped: int
    eligible: int


@dataclass(frozen=True)
class TauSweep:
    points: tuple[TauPoint, ...]
    max_gate: float

    CSV_HEADER = ["tau", "skip_fraction", "logit_divergence"]

    def to_csv(self) -> str:
        return _csv(self.CSV_HEADER, [(repr(p.tau), repr(p.skip_fraction), repr(p.logit_divergence))
                                      for p in self.points])

    def to_dict(self) -> dict:
        return {"max_gate": self.max_gate,
                "points": [p.__dict__.copy() for p in self.points]}


def tau_sweep(weights: ModelWeights, config: PoDConfig, tokens, taus,
              decode_steps: int) -> TauSweep:
    """Skip fraction and logit drift for each gate threshold.

    The reference run never skips. Every thresholded run is teacher-forced
    with the reference's greedy tokens, so step ``s`` of each run sees the
    same context and the logits compare position by position.
    """
    taus = [float(t) for t in taus]
    if any(not 0.0 <= t <= 1.0 for t in taus):
        raise InvalidInput("taus must lie in [0, 1]")
    if decode_steps < 1:
        raise InvalidInput("decode_steps must be >= 1")
    config.check_model(weights.config)
    ref = generate(weights, config.with_tau(None), tokens, decode_steps)
    ref_logits = np.stack(ref.step_logits)
    ref_args = ref_logits.argmax(axis=-1)
    gates = [r.gates[r.eligible] for r in ref.reports]
    observed = np.concatenate(gates) if gates else np.empty(0)
    points = []
    for tau in taus:
        run = generate(weights, config.with_tau(tau), tokens, decode_steps, forced=ref.tokens)
        logits = np.stack(run.step_logits)
        skipped = sum(int(r.skipped.sum()) for r in run.reports)
        eligible = sum(int(r.eligible.sum()) for r in run.reports)
        points.append(TauPoint(
            tau=tau,
            skip_fraction=skipped / eligible if eligible else 0.0,
            logit_divergence=float(np.abs(logits - ref_logits).mean()),
            token_disagreement=float((logits.argmax(axis=-1) != ref_args).mean()),
            skipped=skipped,
            eligible=eligible,
        ))
    return TauSweep(tuple(points), float(observed.max()) if observed.size else 1.0)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
