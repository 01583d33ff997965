"""Experiment-grid orchestration with persistence and resume.

A sweep is models x dropout configurations. Each model is built and trained
exactly once (the paper-style control: inference-time dropout is the only
varied factor), then evaluated under every configuration; digest equality of
the checkpoint across a model's cells is the enforced invariant. Every
cell's prediction matrix is persisted before the next cell starts, and a
resumed sweep never rewrites a completed cell's artifacts.

The manifest is a line-delimited records file (version header, model
records, config records, cell-status records) that round-trips losslessly.
"""

from __future__ import annotations

import json
import os
import traceback
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import data as tasks
from .mc import SampleMeta, mc_run, save_matrix, save_summary, summarize
from .model import (
    Checkpoint,
    DropoutConfig,
    ModelConfig,
    PRESETS,
    build,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
)
from .rng import derive_seed
from .stats import compare
from .training import TrainConfig, train, write_history
from .mc import run_level_accuracy

MANIFEST_FORMAT_VERSION = 1
STATUSES = ("pending", "trained", "evaluated", "failed")


@dataclass
class ModelSpec:
    model_id: str
    config: ModelConfig


@dataclass
class SweepManifest:
    sweep_id: str
    models: List[ModelSpec]
    dropout_configs: List[DropoutConfig] = field(
        default_factory=lambda: list(PRESETS.values())
    )
    passes: int = 100
    data_seed: int = 42
    init_seed: int = 42
    train_seed: int = 42
    mc_seed: int = 42
    corpus: dict = field(
        default_factory=lambda: {"kind": "synthetic", "memory": 500, "reasoning": 500}
    )
    max_seq_len: int = 48
    split_fraction: float = 0.8
    status: Dict[str, str] = field(default_factory=dict)

    def cell_key(self, model_id: str, config_name: str) -> str:
        return f"{model_id}::{config_name}"

    def cells(self) -> List[Tuple[str, str]]:
        return [
            (m.model_id, d.name) for m in self.models for d in self.dropout_configs
        ]

    def __post_init__(self):
        for model_id, config_name in self.cells():
            self.status.setdefault(self.cell_key(model_id, config_name), "pending")

    @property
    def cell_count(self) -> int:
        return len(self.models) * len(self.dropout_configs)


def default_models(vocab_size: int, max_seq_len: int) -> List[ModelSpec]:
    """The desk-scale pair: one encoder, one decoder, 4 layers each."""
    shared = dict(layers=4, heads=4, d_model=192, d_ffn=768,
                  vocab_size=vocab_size, max_seq_len=max_seq_len)
    return [
        ModelSpec("encoder-4l", ModelConfig(family="encoder", **shared)),
        ModelSpec("decoder-4l", ModelConfig(family="decoder", **shared)),
    ]


def save_manifest(manifest: SweepManifest, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "record": "header",
            "format_version": MANIFEST_FORMAT_VERSION,
            "kind": "sweep_manifest",
            "sweep_id": manifest.sweep_id,
            "passes": manifest.passes,
            "data_seed": manifest.data_seed,
            "init_seed": manifest.init_seed,
            "train_seed": manifest.train_seed,
            "mc_seed": manifest.mc_seed,
            "corpus": manifest.corpus,
            "max_seq_len": manifest.max_seq_len,
            "split_fraction": manifest.split_fraction,
        }) + "\n")
        for spec in manifest.models:
            fh.write(json.dumps({
                "record": "model", "model_id": spec.model_id,
                "config": asdict(spec.config),
            }) + "\n")
        for cfg in manifest.dropout_configs:
            fh.write(json.dumps({
                "record": "config", "name": cfg.name,
                "attention_rate": cfg.attention_rate, "ffn_rate": cfg.ffn_rate,
            }) + "\n")
        for key, status in sorted(manifest.status.items()):
            fh.write(json.dumps({
                "record": "cell", "key": key, "status": status,
            }) + "\n")
    os.replace(tmp, path)


def load_manifest(path) -> SweepManifest:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("kind") != "sweep_manifest":
        raise ValueError(f"{path}: not a sweep manifest")
    if header.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported manifest version")
    models: List[ModelSpec] = []
    configs: List[DropoutConfig] = []
    status: Dict[str, str] = {}
    for line in lines[1:]:
        rec = json.loads(line)
        kind = rec.get("record")
        if kind == "model":
            models.append(ModelSpec(rec["model_id"], ModelConfig(**rec["config"])))
        elif kind == "config":
            configs.append(DropoutConfig(
                rec["name"], rec["attention_rate"], rec["ffn_rate"]
            ))
        elif kind == "cell":
            if rec["status"] not in STATUSES:
                raise ValueError(f"{path}: unknown cell status {rec['status']!r}")
            status[rec["key"]] = rec["status"]
        else:
            raise ValueError(f"{path}: unknown record {kind!r}")
    return SweepManifest(
        sweep_id=header["sweep_id"], models=models, dropout_configs=configs,
        passes=header["passes"], data_seed=header["data_seed"],
        init_seed=header["init_seed"], train_seed=header["train_seed"],
        mc_seed=header["mc_seed"], corpus=header["corpus"],
        max_seq_len=header["max_seq_len"],
        split_fraction=header.get("split_fraction", 0.8), status=status,
    )


# -- corpus + tokens ---------------------------------------------------------


def load_corpus(manifest: SweepManifest) -> List[tasks.Sample]:
    corpus = manifest.corpus
    if corpus["kind"] == "synthetic":
        return tasks.gen_corpus(corpus["memory"], corpus["reasoning"], manifest.data_seed)
    if corpus["kind"] == "file":
        return tasks.ingest(corpus["path"])
    raise ValueError(f"unknown corpus source {corpus['kind']!r}")


def prepare_tokens(manifest: SweepManifest) -> tasks.TokenizedSplit:
    samples = load_corpus(manifest)
    ds = tasks.split(samples, fraction=manifest.split_fraction, seed=manifest.data_seed)
    return tasks.tokenize(ds, max_seq_len=manifest.max_seq_len)


def save_tokens(tok: tasks.TokenizedSplit, path) -> None:
    """Persist the encoded test set so stored matrices can be replayed."""
    meta = {
        "format_version": 1,
        "kind": "token_archive",
        "max_seq_len": tok.max_seq_len,
        "vocab": tok.vocab.id_to_token,
        "test_samples": [
            {"id": s.id, "domain": s.domain, "label": s.label}
            for s in tok.test_samples
        ],
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
            test_ids=tok.test_ids, test_labels=tok.test_labels,
        )


def load_tokens(path) -> Tuple[np.ndarray, np.ndarray, List[SampleMeta]]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("kind") != "token_archive":
            raise ValueError(f"{path} is not a token archive")
        samples = [
            SampleMeta(id=s["id"], domain=s["domain"], label=bool(s["label"]))
            for s in meta["test_samples"]
        ]
        return z["test_ids"], z["test_labels"], samples


# -- sweep execution ------------------------------------------------------------


@dataclass
class SweepResult:
    manifest: SweepManifest
    summaries: Dict[str, Dict[str, "object"]]
    failures: Dict[str, str]
    out_dir: str

    @property
    def ok(self) -> bool:
        return not self.failures


def _cell_paths(raw_dir: str, model_id: str, config_name: str) -> Dict[str, str]:
    stem = f"{model_id}__{config_name}"
    return {
        "matrix": os.path.join(raw_dir, f"{stem}.matrix.jsonl"),
        "summary": os.path.join(raw_dir, f"{stem}.summary.json"),
    }


def run_sweep(
    manifest: SweepManifest,
    out_dir: str,
    resume: bool = True,
    train_config: Optional[TrainConfig] = None,
    log=print,
) -> SweepResult:
    """Execute the grid; persists artifacts under out_dir/<sweep_id>/.

    Resume semantics: cells already marked evaluated (with artifacts on
    disk) are skipped untouched; a trained model whose checkpoint file
    exists is reused rather than retrained. Per-cell failures are recorded
    and the sweep continues.
    """
    sweep_dir = os.path.join(out_dir, manifest.sweep_id)
    raw_dir = os.path.join(sweep_dir, "raw")
    os.makedirs(raw_dir, exist_ok=True)
    manifest_path = os.path.join(sweep_dir, "manifest.jsonl")
    if resume and os.path.exists(manifest_path):
        on_disk = load_manifest(manifest_path)
        manifest.status.update(on_disk.status)

    try:
        tok = prepare_tokens(manifest)
    except (OSError, ValueError, tasks.IngestError) as e:
        raise RuntimeError(f"cannot resolve corpus source: {e}") from e
    tokens_path = os.path.join(raw_dir, "test_tokens.npz")
    if not os.path.exists(tokens_path):
        save_tokens(tok, tokens_path)
    test_meta = [
        SampleMeta(id=s.id, domain=s.domain, label=s.label) for s in tok.test_samples
    ]

    summaries: Dict[str, Dict[str, object]] = {}
    failures: Dict[str, str] = {}

    for spec in manifest.models:
        model_id = spec.model_id
        ckpt_path = os.path.join(raw_dir, f"{model_id}.ckpt.npz")
        history_path = os.path.join(raw_dir, f"{model_id}.history.jsonl")
        ckpt: Optional[Checkpoint] = None
        try:
            if resume and os.path.exists(ckpt_path):
                ckpt = load_checkpoint(ckpt_path)
                log(f"[{model_id}] reusing trained checkpoint")
            else:
                cfg = spec.config
                if cfg.vocab_size < tok.vocab.size:
                    cfg = ModelConfig(**{**asdict(cfg), "vocab_size": tok.vocab.size})
                log(f"[{model_id}] building and training")
                ckpt = build(cfg, init_seed=manifest.init_seed)
                tcfg = train_config or TrainConfig(seed=manifest.train_seed)
                history = train(ckpt, tok, tcfg)
                save_checkpoint(ckpt, ckpt_path)
                write_history(history, history_path)
                log(f"[{model_id}] final train accuracy "
                    f"{history[-1]['accuracy']:.3f}")
            for d in manifest.dropout_configs:
                key = manifest.cell_key(model_id, d.name)
                if manifest.status.get(key) != "evaluated":
                    manifest.status[key] = "trained"
        except Exception as e:  # noqa: BLE001 - cell isolation by design
            msg = f"training failed: {e}"
            log(f"[{model_id}] {msg}\n{traceback.format_exc()}")
            for d in manifest.dropout_configs:
                key = manifest.cell_key(model_id, d.name)
                failures[key] = msg
                manifest.status[key] = "failed"
            save_manifest(manifest, manifest_path)
            continue

        digest = checkpoint_digest(ckpt)
        for dropout in manifest.dropout_configs:
            key = manifest.cell_key(model_id, dropout.name)
            paths = _cell_paths(raw_dir, model_id, dropout.name)
            if (
                resume
                and manifest.status.get(key) == "evaluated"
                and os.path.exists(paths["matrix"])
            ):
                log(f"[{key}] already evaluated, skipping")
                from .mc import load_summary

                summary, _ = load_summary(paths["summary"])
                summaries.setdefault(model_id, {})[dropout.name] = summary
                continue
            try:
                base_seed = derive_seed(manifest.mc_seed, model_id, dropout.name)
                pm = mc_run(
                    ckpt, tok.test_ids, test_meta, dropout,
                    passes=manifest.passes, base_seed=base_seed,
                    model_id=model_id, checkpoint_ref=digest,
                )
                save_matrix(pm, paths["matrix"])
                summary = summarize(pm)
                save_summary(
                    summary, paths["summary"],
                    extra={"model_id": model_id, "config": dropout.name,
                           "checkpoint_ref": digest},
                )
                summaries.setdefault(model_id, {})[dropout.name] = summary
                manifest.status[key] = "evaluated"
                log(f"[{key}] mean={summary.mean_overall:.3f} "
                    f"std={summary.std_overall:.4f}")
            except Exception as e:  # noqa: BLE001 - cell isolation by design
                failures[key] = str(e)
                manifest.status[key] = "failed"
                log(f"[{key}] FAILED: {e}")
            save_manifest(manifest, manifest_path)

    save_manifest(manifest, manifest_path)
    return SweepResult(
        manifest=manifest, summaries=summaries, failures=failures, out_dir=sweep_dir
    )


def sweep_comparisons(
    summaries_raw: Dict[str, Dict[str, object]],
    raw_dir: str,
    family_size: Optional[int] = None,
    alpha: float = 0.05,
) -> list:
    """Deterministic-vs-stochastic comparisons per model from stored
    matrices; the Bonferroni family defaults to the number of tests."""
    from .mc import load_matrix

    jobs = []
    for model_id, per_config in sorted(summaries_raw.items()):
        if "deterministic" not in per_config:
            continue
        for config_name in per_config:
            if config_name != "deterministic":
                jobs.append((model_id, config_name))
    m = family_size or max(len(jobs), 1)
    results = []
    for model_id, config_name in jobs:
        det_paths = _cell_paths(raw_dir, model_id, "deterministic")
        cfg_paths = _cell_paths(raw_dir, model_id, config_name)
        det_pm, _ = load_matrix(det_paths["matrix"])
        cfg_pm, _ = load_matrix(cfg_paths["matrix"])
        det_acc = run_level_accuracy(det_pm)["overall"]
        cfg_acc = run_level_accuracy(cfg_pm)["overall"]
        results.append(compare(
            det_acc, cfg_acc, family_size=m, alpha=alpha,
            label_a=f"{model_id}:deterministic", label_b=f"{model_id}:{config_name}",
        ))
    return results
