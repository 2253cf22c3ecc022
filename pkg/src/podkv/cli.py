"""Command-line pipeline: gen -> analyze -> group -> run, plus experiments.

Exit codes: 0 success, 2 usage error, 3 format error, 4 config mismatch,
5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats
from .corpus import synthetic_corpus
from .errors import ConfigMismatch, FormatError, InvalidInput
from .experiments import (Dense, PoD, Streaming, Window, match_experiment,
                          run_mode, tau_sweep)
from .formats import RunManifest, read_stamped, stamp, write_json
from .grouping import HeadBlocks, asymptotic_savings, greedy_group, savings_rate
from .model import ModelConfig, init_model, next_token_argmax
from .runtime import PoDConfig, generate
from .similarity import AttentionTrace, SimilarityTensor, collect_traces, layer_similarity

EXIT_USAGE, EXIT_FORMAT, EXIT_MISMATCH, EXIT_IO = 2, 3, 4, 5


class UsageError(Exception):
    pass


def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is outside [0, 1]")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


def _model_manifest(model_dir: Path) -> RunManifest:
    path = model_dir / "manifest.json"
    if not path.exists():
        return RunManifest(model_config=str(model_dir / "config.json"),
                           model_sha256=formats.model_digest(model_dir))
    return read_stamped(path)[1]


def cmd_gen(args) -> None:
    out = Path(args.out)
    config = ModelConfig.create(args.layers, args.heads, args.head_dim, args.vocab, args.rope_base, args.seed)
    weights = init_model(config)
    corpus = synthetic_corpus(args.seed, args.samples, args.seq_len, args.vocab,
                              args.motif_len, args.motifs, args.repeat_prob)
    out.mkdir(parents=True, exist_ok=True)
    formats.save_model(out, weights)
    formats.write_tokens(out / "corpus.tok", corpus)
    manifest = RunManifest(model_config=str(out / "config.json"), model_sha256=formats.model_digest(out),
                           corpus_seed=args.seed, corpus_samples=args.samples,
                           corpus_seq_len=args.seq_len, output_dir=str(out))
    write_json(out / "manifest.json", stamp({"L": config.num_layers, "H": config.num_heads,
                                             "d": config.head_dim}, manifest))
    print(f"wrote model L={config.num_layers} H={config.num_heads} d={config.head_dim} "
          f"and {args.samples} samples to {out}")


def cmd_analyze(args) -> None:
    out = Path(args.out)
    if args.traces:
        paths = sorted(Path(args.traces).glob("*.podt"))
        if not paths:
            raise UsageError(f"no trace dumps in {args.traces}")
        traces = [_load_trace(p) for p in paths]
        manifest = RunManifest(q=traces[0].q)
        if (Path(args.traces) / "manifest.json").exists():
            manifest = read_stamped(Path(args.traces) / "manifest.json")[1]
    else:
        model_dir = Path(args.model)
        weights = formats.load_model(model_dir)
        corpus = formats.read_tokens(args.corpus or model_dir / "corpus.tok")
        if not corpus:
            raise UsageError("empty corpus")
        shortest = min(len(s) for s in corpus)
        if args.q > shortest:
            raise FormatError(f"--q {args.q} exceeds the shortest sample length {shortest}")
        traces = collect_traces(weights, corpus, args.q)
        manifest = _model_manifest(model_dir).update(q=args.q)
    manifest = manifest.update(output_dir=str(out))
    sim = layer_similarity(traces)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_traces and not args.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for i, t in enumerate(traces):
            formats.write_tensor(tdir / f"sample_{i:04d}.podt", t.probs)
        write_json(tdir / "manifest.json", stamp({}, manifest))
    write_json(out / "similarity.json", stamp(sim.to_dict(), manifest))
    print(f"similarity for L={sim.num_layers} H={sim.num_heads} over {len(traces)} samples -> {out}")


def _load_trace(path: Path) -> AttentionTrace:
    probs = formats.read_tensor(path)
    if probs.ndim != 4:
        raise FormatError(f"{path}: trace must have 4 dims, got {probs.ndim}")
    # float32 storage: restore exact row normalization
    return AttentionTrace(probs / probs.sum(axis=-1, keepdims=True))


def cmd_group(args) -> None:
    out = Path(args.out)
    doc, manifest = read_stamped(args.similarity)
    try:
        sim = SimilarityTensor.from_dict(doc)
    except KeyError as exc:
        raise FormatError(f"{args.similarity}: missing field {exc}") from None
    blocks = greedy_group(sim, args.delta)
    manifest = manifest.update(delta=args.delta, n_s=args.ns, n_r=args.nr, output_dir=str(out))
    key_frac, total_frac = savings_rate(blocks, args.n, args.ns, args.nr)
    key_inf, total_inf = asymptotic_savings(blocks)
    report = {
        "delta": args.delta,
        "block_counts": blocks.block_counts(),
        "n": args.n, "n_s": args.ns, "n_r": args.nr,
        "key_fraction_saved": key_frac,
        "total_kv_fraction_saved": total_frac,
        "asymptotic_key_fraction_saved": key_inf,
        "asymptotic_total_kv_fraction_saved": total_inf,
        "assumption": "keys and values have equal size per token per layer; values are never shared",
    }
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "blocks.json", stamp(blocks.to_dict(), manifest))
    write_json(out / "savings.json", stamp(report, manifest))
    print(f"delta={args.delta} blocks per head {blocks.block_counts()} "
          f"total KV saved {total_frac:.4f} at n={args.n} (asymptotic {total_inf:.4f})")


def _read_prompt(path) -> np.ndarray:
    records = formats.read_tokens(path)
    if not records or records[0].size == 0:
        raise UsageError(f"{path}: no prompt tokens")
    return records[0]


def _load_blocks(path, config: ModelConfig) -> tuple[HeadBlocks, RunManifest]:
    doc, manifest = read_stamped(path)
    try:
        blocks = HeadBlocks.from_dict(doc)
    except (KeyError, InvalidInput) as exc:
        raise FormatError(f"{path}: {exc}") from None
    got = (blocks.num_layers, blocks.num_heads)
    want = (config.num_layers, config.num_heads)
    if got != want:
        raise ConfigMismatch(f"blocks file has L={got[0]}, H={got[1]}; model has L={want[0]}, H={want[1]}")
    return blocks, manifest


def cmd_run(args) -> None:
    out = Path(args.out)
    model_dir = Path(args.model)
    weights = formats.load_model(model_dir)
    prompt = _read_prompt(args.prompt)
    manifest = _model_manifest(model_dir)
    result: dict = {"mode": args.mode, "prompt_length": int(prompt.size), "steps": args.steps}
    step_lines: list[str] = []
    if args.mode == "pod":
        if not args.blocks:
            raise UsageError("--mode pod needs --blocks")
        blocks, block_manifest = _load_blocks(args.blocks, weights.config)
        manifest = block_manifest.merge(manifest)
        pod = PoDConfig(blocks, args.ns, args.nr, args.tau)
        gen = generate(weights, pod, prompt, args.steps)
        tokens = gen.tokens
        for s, rep in enumerate(gen.reports, start=1):
            step_lines.extend(json.dumps(r, sort_keys=True) for r in rep.records(s))
        cache = gen.cache
        cache.check_invariants()
        result.update(
            pod=pod.to_dict(),
            final_length=cache.length,
            key_entries=cache.key_entries(),
            value_entries=cache.value_entries(),
            dense_key_entries=weights.config.num_layers * weights.config.num_heads * cache.length,
            skipped=int(sum(r.skipped.sum() for r in gen.reports)),
            eligible=int(sum(r.eligible.sum() for r in gen.reports)),
        )
    else:
        mode = {"dense": Dense(), "window": Window(args.window or args.nr),
                "streaming": Streaming(args.ns, args.nr)}[args.mode]
        seq = list(int(t) for t in prompt)
        tokens = []
        for _ in range(args.steps):
            nxt = next_token_argmax(run_mode(weights, np.array(seq), mode)[-1])
            tokens.append(nxt)
            seq.append(nxt)
    manifest = manifest.update(n_s=args.ns, n_r=args.nr, tau=args.tau, output_dir=str(out))
    result["tokens"] = tokens
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "generation.json", stamp(result, manifest))
    (out / "steps.jsonl").write_text("".join(line + "\n" for line in step_lines))
    print(f"{args.mode}: generated {len(tokens)} tokens -> {out}")


def cmd_experiment(args) -> None:
    out = Path(args.out)
    model_dir = Path(args.model)
    weights = formats.load_model(model_dir)
    manifest = _model_manifest(model_dir)
    if args.kind == "match":
        corpus = formats.read_tokens(args.corpus or model_dir / "corpus.tok")
        if not corpus:
            raise UsageError("empty corpus")
        budgets = args.budgets or [min(len(s) for s in corpus)]
        try:
            result = match_experiment(weights, corpus, budgets, args.compare_last, args.ns)
        except InvalidInput as exc:
            raise UsageError(str(exc)) from None
        manifest = manifest.update(n_s=args.ns, output_dir=str(out))
        stem = "match"
    else:
        if not args.blocks or not args.prompt:
            raise UsageError("tausweep needs --blocks and --prompt")
        blocks, block_manifest = _load_blocks(args.blocks, weights.config)
        manifest = block_manifest.merge(manifest)
        pod = PoDConfig(blocks, args.ns, args.nr, None)
        result = tau_sweep(weights, pod, _read_prompt(args.prompt), args.taus, args.steps)
        manifest = manifest.update(n_s=args.ns, n_r=args.nr, output_dir=str(out))
        stem = "tausweep"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(result.to_csv())
    write_json(out / f"{stem}.json", stamp(result.to_dict(), manifest))
    print(result.to_csv(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="podkv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded toy model and synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--layers", type=int, default=8)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--head-dim", type=int, default=16)
    g.add_argument("--vocab", type=int, default=256)
    g.add_argument("--rope-base", type=float, default=10000.0)
    g.add_argument("--samples", type=int, default=8)
    g.add_argument("--seq-len", type=int, default=128)
    g.add_argument("--motif-len", type=int, default=8)
    g.add_argument("--motifs", type=int, default=4)
    g.add_argument("--repeat-prob", type=_unit_interval, default=0.7)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", help="collect attention traces and layer similarity")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model directory written by gen")
    src.add_argument("--traces", help="directory of trace dumps to re-analyze offline")
    a.add_argument("--corpus", help="token file (default: <model>/corpus.tok)")
    a.add_argument("--q", type=int, default=16)
    a.add_argument("--out", required=True)
    a.add_argument("--dump-traces", action="store_true")
    a.set_defaults(func=cmd_analyze)

    gr = sub.add_parser("group", help="greedy layer grouping and savings report")
    gr.add_argument("--similarity", required=True)
    gr.add_argument("--delta", type=_unit_interval, default=0.5)
    gr.add_argument("--n", type=int, default=8192, help="sequence length for the savings report")
    gr.add_argument("--ns", type=int, default=4)
    gr.add_argument("--nr", type=int, default=32)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_group)

    r = sub.add_parser("run", help="prefill a prompt and decode greedily")
    r.add_argument("--model", required=True)
    r.add_argument("--blocks")
    r.add_argument("--prompt", required=True, help="token file; the first record is the prompt")
    r.add_argument("--mode", choices=["dense", "window", "streaming", "pod"], default="pod")
    r.add_argument("--ns", type=int, default=4)
    r.add_argument("--nr", type=int, default=32)
    r.add_argument("--window", type=int)
    r.add_argument("--tau", type=_unit_interval, help="skip threshold; omit to disable skipping")
    r.add_argument("--steps", type=int, default=16)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="match curve or tau sweep")
    e.add_argument("kind", choices=["match", "tausweep"])
    e.add_argument("--model", required=True)
    e.add_argument("--corpus")
    e.add_argument("--budgets", type=_int_list)
    e.add_argument("--compare-last", type=int, default=16)
    e.add_argument("--blocks")
    e.add_argument("--prompt")
    e.add_argument("--taus", type=_float_list, default=[round(0.1 * i, 1) for i in range(11)])
    e.add_argument("--steps", type=int, default=64)
    e.add_argument("--ns", type=int, default=4)
    e.add_argument("--nr", type=int, default=32)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigMismatch as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except InvalidInput as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
