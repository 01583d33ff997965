"""Mini-transformer binary classifier with two controllable dropout sites.

Encoder-only (bidirectional, first-token pooling) and decoder-only (causal,
last-token pooling) variants share one implementation. Stochasticity enters
in exactly two places per layer: the post-softmax attention probabilities
and the FFN hidden activations after the nonlinearity. Every other source of
randomness is fixed at build time, so evaluation-time variability is
attributable to those two sites alone.

Checkpoints are immutable during evaluation: concurrent forward calls with
distinct RngStreams are safe and order-independent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .rng import RngStream

CHECKPOINT_FORMAT_VERSION = 1
FAMILIES = ("encoder", "decoder")
POOLINGS = ("cls", "mean", "last_token")
MODES = ("deterministic", "stochastic")


@dataclass(frozen=True)
class DropoutConfig:
    """Named pair of attention-probability and FFN-hidden dropout rates."""

    name: str
    attention_rate: float
    ffn_rate: float

    def __post_init__(self):
        for label, rate in (("attention", self.attention_rate), ("ffn", self.ffn_rate)):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{label} rate must be in [0, 1), got {rate}")

    @property
    def is_deterministic(self) -> bool:
        return self.attention_rate == 0.0 and self.ffn_rate == 0.0


PRESETS: Dict[str, DropoutConfig] = {
    "deterministic": DropoutConfig("deterministic", 0.0, 0.0),
    "baseline": DropoutConfig("baseline", 0.1, 0.1),
    "high_attention": DropoutConfig("high_attention", 0.6, 0.1),
    "high_ffn": DropoutConfig("high_ffn", 0.1, 0.6),
    "high_both": DropoutConfig("high_both", 0.6, 0.6),
}


def preset(name: str) -> DropoutConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown dropout preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


@dataclass(frozen=True)
class ModelConfig:
    family: str
    layers: int
    heads: int
    d_model: int
    d_ffn: int
    vocab_size: int
    max_seq_len: int
    pooling: str = ""  # empty = family convention (encoder: cls, decoder: last_token)
    pad_id: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        for name in ("layers", "heads", "d_model", "d_ffn", "vocab_size", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if not self.pooling:
            object.__setattr__(
                self, "pooling", "cls" if self.family == "encoder" else "last_token"
            )
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


@dataclass
class Checkpoint:
    model_config: ModelConfig
    parameters: Dict[str, Tensor]
    training_seed: int
    provenance: str = ""

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters.values())


def _parameter_shapes(cfg: ModelConfig) -> Dict[str, tuple]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_seq_len, d),
    }
    for i in range(cfg.layers):
        p = f"layers.{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{proj}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{b}"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.w"] = (d, 2)
    shapes["head.b"] = (2,)
    return shapes


def _truncated_normal(gen: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) with resampling outside +/-2 std."""
    out = gen.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def build(config: ModelConfig, init_seed: int) -> Checkpoint:
    """Fresh checkpoint: truncated-normal(0.02) weights, zero biases, unit
    norm gains. Deterministic for a given init_seed."""
    gen = RngStream(init_seed, stream_id=7).generator()
    params: Dict[str, Tensor] = {}
    for name, shape in _parameter_shapes(config).items():
        last = name.rsplit(".", 1)[-1]
        if last == "gain":
            arr = np.ones(shape)
        elif last == "bias" or last.startswith("b"):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(gen, shape, 0.02)
        params[name] = Tensor(arr, requires_grad=True)
    return Checkpoint(
        model_config=config, parameters=params,
        training_seed=init_seed, provenance="random-init",
    )


# -- forward -----------------------------------------------------------------

_NULL_RNG = RngStream(0)


def _attention(ckpt, x, layer, mask, rate, active, rng):
    cfg = ckpt.model_config
    p = ckpt.parameters
    B, T, D = x.shape
    H, dh = cfg.heads, cfg.head_dim
    pre = f"layers.{layer}.attn"

    h2 = ag.reshape(x, (B * T, D))
    q = ag.add(ag.matmul(h2, p[f"{pre}.wq"]), p[f"{pre}.bq"])
    k = ag.add(ag.matmul(h2, p[f"{pre}.wk"]), p[f"{pre}.bk"])
    v = ag.add(ag.matmul(h2, p[f"{pre}.wv"]), p[f"{pre}.bv"])
    q = ag.transpose(ag.reshape(q, (B, T, H, dh)), (0, 2, 1, 3))
    k = ag.transpose(ag.reshape(k, (B, T, H, dh)), (0, 2, 1, 3))
    v = ag.transpose(ag.reshape(v, (B, T, H, dh)), (0, 2, 1, 3))

    scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) / math.sqrt(dh)
    if mask is not None:
        scores = ag.add(scores, mask)
    probs = ag.softmax(scores, axis=-1)
    probs = ag.dropout(probs, rate, rng.substream(2 * layer), active)
    ctx = ag.matmul(probs, v)
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B * T, D))
    out = ag.add(ag.matmul(ctx, p[f"{pre}.wo"]), p[f"{pre}.bo"])
    return ag.reshape(out, (B, T, D))


def _ffn(ckpt, x, layer, rate, active, rng):
    p = ckpt.parameters
    B, T, D = x.shape
    pre = f"layers.{layer}.ffn"
    h = ag.reshape(x, (B * T, D))
    hidden = ag.gelu(ag.add(ag.matmul(h, p[f"{pre}.w1"]), p[f"{pre}.b1"]))
    hidden = ag.dropout(hidden, rate, rng.substream(2 * layer + 1), active)
    out = ag.add(ag.matmul(hidden, p[f"{pre}.w2"]), p[f"{pre}.b2"])
    return ag.reshape(out, (B, T, D))


def logits(
    ckpt: Checkpoint,
    batch: np.ndarray,
    dropout: DropoutConfig,
    active: bool,
    rng: Optional[RngStream] = None,
) -> Tensor:
    """Class logits (B, 2). Pre-norm blocks; dropout applied at the two
    stochastic sites only when active."""
    cfg = ckpt.model_config
    batch = np.asarray(batch)
    if batch.ndim != 2:
        raise ValueError("batch must be (batch, seq_len) token ids")
    B, T = batch.shape
    if T > cfg.max_seq_len:
        raise ValueError(f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}")
    if batch.size and (batch.min() < 0 or batch.max() >= cfg.vocab_size):
        raise ValueError("token id out of vocabulary range")
    stochastic = active and not dropout.is_deterministic
    if stochastic and rng is None:
        raise ValueError("stochastic forward requires an RngStream")
    if rng is None:
        rng = _NULL_RNG

    p = ckpt.parameters
    tok = ag.embedding_lookup(p["tok_emb"], batch)
    pos = ag.embedding_lookup(p["pos_emb"], np.arange(T))
    x = ag.add(tok, pos)
    mask = ag.causal_mask(T) if cfg.family == "decoder" else None

    for i in range(cfg.layers):
        h = ag.layer_norm(x, p[f"layers.{i}.ln1.gain"], p[f"layers.{i}.ln1.bias"])
        x = ag.add(x, _attention(ckpt, h, i, mask, dropout.attention_rate, stochastic, rng))
        h = ag.layer_norm(x, p[f"layers.{i}.ln2.gain"], p[f"layers.{i}.ln2.bias"])
        x = ag.add(x, _ffn(ckpt, h, i, dropout.ffn_rate, stochastic, rng))

    x = ag.layer_norm(x, p["final_ln.gain"], p["final_ln.bias"])
    pooled = _pool(cfg, x, batch)
    return ag.add(ag.matmul(pooled, p["head.w"]), p["head.b"])


def _pool(cfg: ModelConfig, x: Tensor, batch: np.ndarray) -> Tensor:
    B, T = batch.shape
    if cfg.pooling == "cls":
        return ag.select_positions(x, np.zeros(B, dtype=np.int64))
    lengths = (batch != cfg.pad_id).sum(axis=1)
    if cfg.pooling == "last_token":
        return ag.select_positions(x, np.maximum(lengths - 1, 0))
    # mean over real (non-pad) positions
    mask = (batch != cfg.pad_id).astype(x.data.dtype)[:, :, None]
    total = ag.tensor_sum(ag.mul(x, Tensor(mask)), axis=1)
    inv = 1.0 / np.maximum(lengths, 1).astype(x.data.dtype)
    return ag.mul(total, Tensor(inv[:, None]))


def forward(
    ckpt: Checkpoint,
    batch: np.ndarray,
    dropout: DropoutConfig,
    mode: str = "deterministic",
    rng: Optional[RngStream] = None,
) -> np.ndarray:
    """Per-sample class probabilities (B, 2), rows summing to 1.

    Deterministic mode is a pure function of (ckpt, batch); stochastic mode
    draws fresh independent masks at the two dropout sites per call.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    with ag.no_grad():
        out = logits(ckpt, batch, dropout, active=(mode == "stochastic"), rng=rng)
        probs = ag.softmax(out, axis=-1)
    return probs.data


# -- persistence --------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Self-describing container: JSON header + named float blobs; the
    round-trip is bit-exact."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "checkpoint",
        "model_config": asdict(ckpt.model_config),
        "training_seed": ckpt.training_seed,
        "provenance": ckpt.provenance,
        "parameters": list(ckpt.parameters.keys()),
    }
    arrays = {f"param/{k}": t.data for k, t in ckpt.parameters.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("kind") != "checkpoint":
            raise ValueError(f"{path} is not a checkpoint container")
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        cfg = ModelConfig(**meta["model_config"])
        params = {}
        for name in meta["parameters"]:
            if name in params:
                raise ValueError(f"duplicate parameter {name!r}")
            params[name] = Tensor(z[f"param/{name}"], requires_grad=True)
    expected = _parameter_shapes(cfg)
    if set(params) != set(expected):
        raise ValueError("checkpoint parameters do not match the architecture")
    return Checkpoint(
        model_config=cfg, parameters=params,
        training_seed=meta["training_seed"], provenance=meta.get("provenance", ""),
    )


def checkpoint_digest(ckpt: Checkpoint) -> str:
    """Stable content hash of config + parameters."""
    h = hashlib.sha256()
    h.update(json.dumps(asdict(ckpt.model_config), sort_keys=True).encode("utf-8"))
    for name in sorted(ckpt.parameters):
        t = ckpt.parameters[name]
        h.update(name.encode("utf-8"))
        h.update(str(t.shape).encode("utf-8"))
        h.update(np.ascontiguousarray(t.data).tobytes())
    return "sha256:" + h.hexdigest()
