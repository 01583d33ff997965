"""Command-line entry point.

Subcommands mirror the pipeline stages: generate-data, train, mc-eval,
stats, report, verify, and the orchestrating sweep. The default output root
comes from DROPBENCH_OUT (falling back to ./dropbench_out).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import data as tasks
from .mc import (
    load_matrix,
    load_summary,
    mc_run,
    replay_check,
    run_level_accuracy,
    save_matrix,
    save_summary,
    summarize,
)
from .model import (
    DropoutConfig,
    ModelConfig,
    PRESETS,
    build,
    checkpoint_digest,
    load_checkpoint,
    preset,
    save_checkpoint,
)
from .report import ReportBundle, audit_bundle, write_report
from .rng import derive_seed
from .stats import compare
from .sweep import (
    SweepManifest,
    default_models,
    load_manifest,
    load_tokens,
    prepare_tokens,
    run_sweep,
    save_manifest,
    sweep_comparisons,
)
from .training import TrainConfig, evaluate_plain, train, write_history


def _out_root(value):
    return value or os.environ.get("DROPBENCH_OUT", "dropbench_out")


def _parse_dropout(text: str) -> DropoutConfig:
    """'baseline' or 'name:attn,ffn' or 'attn,ffn'."""
    if text in PRESETS:
        return preset(text)
    name, _, rates = text.rpartition(":")
    parts = rates.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(
            f"expected a preset ({', '.join(PRESETS)}) or 'attn,ffn' rates, got {text!r}"
        )
    try:
        attn, ffn = float(parts[0]), float(parts[1])
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    return DropoutConfig(name or "custom", attn, ffn)


def _add_model_flags(p):
    p.add_argument("--family", choices=("encoder", "decoder"), default="encoder")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=192)
    p.add_argument("--d-ffn", type=int, default=768)
    p.add_argument("--max-seq-len", type=int, default=48)


def _add_train_flags(p):
    p.add_argument("--learning-rate", type=float, default=2e-5)
    p.add_argument("--warmup-fraction", type=float, default=0.10)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--train-batch", type=int, default=16)
    p.add_argument("--eval-batch", type=int, default=32)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--train-dropout", type=_parse_dropout, default=preset("baseline"))


def cmd_generate_data(args) -> int:
    samples = tasks.gen_corpus(args.memory, args.reasoning, args.seed)
    tasks.write_samples(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _tokens_from_data(args):
    samples = tasks.ingest(args.data)
    ds = tasks.split(samples, fraction=args.split_fraction, seed=args.split_seed)
    return tasks.tokenize(ds, max_seq_len=args.max_seq_len)


def cmd_train(args) -> int:
    tok = _tokens_from_data(args)
    cfg = ModelConfig(
        family=args.family, layers=args.layers, heads=args.heads,
        d_model=args.d_model, d_ffn=args.d_ffn,
        vocab_size=tok.vocab.size, max_seq_len=args.max_seq_len,
    )
    ckpt = build(cfg, init_seed=args.init_seed)
    tcfg = TrainConfig(
        learning_rate=args.learning_rate, warmup_fraction=args.warmup_fraction,
        epochs=args.epochs, train_batch=args.train_batch,
        eval_batch=args.eval_batch, clip_norm=args.clip_norm,
        weight_decay=args.weight_decay, train_dropout=args.train_dropout,
        seed=args.seed,
    )
    history = train(ckpt, tok, tcfg)
    save_checkpoint(ckpt, args.out)
    if args.history:
        write_history(history, args.history)
    test_acc = evaluate_plain(ckpt, tok.test_ids, tok.test_labels, args.eval_batch)
    print(f"trained {args.family} model: final train accuracy "
          f"{history[-1]['accuracy']:.3f}, test accuracy {test_acc:.3f}")
    print(f"checkpoint digest {checkpoint_digest(ckpt)}")
    return 0


def cmd_mc_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    tok = _tokens_from_data(args)
    from .mc import SampleMeta

    meta = [SampleMeta(id=s.id, domain=s.domain, label=s.label) for s in tok.test_samples]
    pm = mc_run(
        ckpt, tok.test_ids, meta, args.config,
        passes=args.passes, base_seed=args.seed, model_id=args.model_id,
        checkpoint_ref=checkpoint_digest(ckpt),
    )
    save_matrix(pm, args.out)
    summary = summarize(pm)
    if args.summary:
        save_summary(summary, args.summary,
                     extra={"model_id": args.model_id, "config": args.config.name})
    print(f"wrote {pm.passes}x{pm.num_samples} matrix to {args.out}: "
          f"mean={summary.mean_overall:.3f} std={summary.std_overall:.4f}")
    return 0


def cmd_stats(args) -> int:
    pm_a, warn_a = load_matrix(args.matrix_a)
    pm_b, warn_b = load_matrix(args.matrix_b)
    for w in warn_a + warn_b:
        print(f"warning: {w}", file=sys.stderr)
    acc_a = run_level_accuracy(pm_a)["overall"]
    acc_b = run_level_accuracy(pm_b)["overall"]
    result = compare(
        acc_a, acc_b, family_size=args.family_size, alpha=args.alpha,
        label_a=args.matrix_a, label_b=args.matrix_b,
    )
    record = {
        "record": "comparison", "format_version": 1,
        **{k: getattr(result, k) for k in (
            "label_a", "label_b", "mean_diff", "t_stat", "df", "p_raw",
            "p_adjusted", "alpha_adjusted", "cohens_d", "significant",
            "family_size", "degenerate",
        )},
    }
    line = json.dumps(record)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    print(line)
    return 0


def cmd_report(args) -> int:
    raw_dir = args.raw
    summaries = {}
    for name in sorted(os.listdir(raw_dir)):
        if not name.endswith(".summary.json"):
            continue
        summary, rec = load_summary(os.path.join(raw_dir, name))
        summaries.setdefault(rec["model_id"], {})[rec["config"]] = summary
    if not summaries:
        print(f"no summaries found under {raw_dir}", file=sys.stderr)
        return 1
    bundle = ReportBundle(
        sweep_id=args.sweep_id,
        generated_at=args.timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(),
        summaries=summaries,
    )
    rendered = write_report(bundle, args.out)
    problems = audit_bundle(bundle, rendered)
    for p in problems:
        print(f"audit: {p}", file=sys.stderr)
    print(f"wrote {len(rendered)} documents under {args.out}")
    return 1 if problems else 0


def cmd_verify(args) -> int:
    pm, warnings = load_matrix(args.matrix)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    ckpt = load_checkpoint(args.checkpoint)
    digest = checkpoint_digest(ckpt)
    if pm.checkpoint_ref and pm.checkpoint_ref != digest:
        print(f"checkpoint digest mismatch: matrix records {pm.checkpoint_ref}, "
              f"loaded {digest}", file=sys.stderr)
        return 1
    test_ids, _, stored_meta = load_tokens(args.tokens)
    ids = {s.id for s in stored_meta}
    if ids != {s.id for s in pm.samples}:
        print("token archive does not cover the matrix samples", file=sys.stderr)
        return 1
    report = replay_check(pm, ckpt, test_ids)
    if report is None:
        print(f"verified: {pm.passes}x{pm.num_samples} matrix replays bitwise")
        return 0
    print("MISMATCH: " + json.dumps(report))
    return 1


def cmd_sweep(args) -> int:
    out_root = _out_root(args.out)
    if args.manifest and os.path.exists(args.manifest):
        manifest = load_manifest(args.manifest)
    else:
        corpus = (
            {"kind": "file", "path": args.data}
            if args.data else
            {"kind": "synthetic", "memory": args.memory, "reasoning": args.reasoning}
        )
        probe = SweepManifest(
            sweep_id=args.sweep_id, models=[], corpus=corpus,
            passes=args.passes, data_seed=args.seed, init_seed=args.seed,
            train_seed=args.seed, mc_seed=args.seed,
            max_seq_len=args.max_seq_len,
        )
        tok = prepare_tokens(probe)
        models = default_models(tok.vocab.size, args.max_seq_len)
        if args.models:
            wanted = set(args.models.split(","))
            models = [m for m in models if m.model_id in wanted]
            if not models:
                print(f"--models matched nothing among "
                      f"{[m.model_id for m in default_models(0, 1)]}", file=sys.stderr)
                return 2
        configs = list(PRESETS.values())
        if args.configs:
            configs = [preset(name) for name in args.configs.split(",")]
        manifest = SweepManifest(
            sweep_id=args.sweep_id, models=models, dropout_configs=configs,
            corpus=corpus, passes=args.passes, data_seed=args.seed,
            init_seed=args.seed, train_seed=args.seed, mc_seed=args.seed,
            max_seq_len=args.max_seq_len,
        )
        if args.manifest:
            save_manifest(manifest, args.manifest)
    print(f"sweep {manifest.sweep_id}: {len(manifest.models)} models x "
          f"{len(manifest.dropout_configs)} configs = {manifest.cell_count} cells")
    result = run_sweep(manifest, out_root, resume=args.resume)

    raw_dir = os.path.join(result.out_dir, "raw")
    comparisons = sweep_comparisons(
        result.summaries, raw_dir, family_size=args.family_size, alpha=args.alpha,
    )
    with open(os.path.join(raw_dir, "comparisons.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "header", "format_version": 1,
                             "kind": "comparisons"}) + "\n")
        for c in comparisons:
            fh.write(json.dumps({
                "record": "comparison",
                **{k: getattr(c, k) for k in (
                    "label_a", "label_b", "mean_diff", "t_stat", "df", "p_raw",
                    "p_adjusted", "alpha_adjusted", "cohens_d", "significant",
                    "family_size", "degenerate")},
            }) + "\n")
    bundle = ReportBundle(
        sweep_id=manifest.sweep_id,
        generated_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        summaries=result.summaries, comparisons=comparisons,
    )
    rendered = write_report(bundle, result.out_dir)
    problems = audit_bundle(bundle, rendered)
    for p in problems:
        print(f"audit: {p}", file=sys.stderr)
    if result.failures:
        for key, msg in sorted(result.failures.items()):
            print(f"cell {key} failed: {msg}", file=sys.stderr)
        return 1
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropbench",
        description="Profile transformer classifiers under stochastic inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic corpus file")
    p.add_argument("--memory", type=int, default=500)
    p.add_argument("--reasoning", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train one model on a corpus file")
    p.add_argument("--data", required=True)
    p.add_argument("--split-fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=42)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--init-seed", type=int, default=42)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("mc-eval", help="Monte Carlo evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split-fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=42)
    p.add_argument("--max-seq-len", type=int, default=48)
    p.add_argument("--config", type=_parse_dropout, default=preset("baseline"))
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--eval-batch", type=int, default=32)
    p.add_argument("--model-id", default="model")
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.set_defaults(fn=cmd_mc_eval)

    p = sub.add_parser("stats", help="compare two stored prediction matrices")
    p.add_argument("--matrix-a", required=True)
    p.add_argument("--matrix-b", required=True)
    p.add_argument("--family-size", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("report", help="render tables and figures from raw summaries")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep-id", default="sweep")
    p.add_argument("--timestamp", help="inject a fixed timestamp for reproducible bytes")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="replay a stored matrix and compare bitwise")
    p.add_argument("--matrix", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--eval-batch", type=int, default=32)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("sweep", help="run the full models x configs grid")
    p.add_argument("--manifest", help="manifest file to load or create")
    p.add_argument("--out", help="output root (default $DROPBENCH_OUT)")
    p.add_argument("--sweep-id", default="sweep")
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--models", help="comma-separated model ids to keep")
    p.add_argument("--configs", help="comma-separated preset names")
    p.add_argument("--data", help="corpus file (default: synthetic)")
    p.add_argument("--memory", type=int, default=500)
    p.add_argument("--reasoning", type=int, default=500)
    p.add_argument("--max-seq-len", type=int, default=48)
    p.add_argument("--family-size", type=int)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--resume", action="store_true", default=True)
    p.add_argument("--no-resume", dest="resume", action="store_false")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError, tasks.IngestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
