"""Monte Carlo dropout evaluation: the prediction matrix and its scores.

An evaluation run performs M stochastic forward passes over the N test
samples, with pass m drawing its masks from RngStream(base_seed, m). The
resulting M x N matrix of predictions (and positive-class probabilities) is
the unit of record: it is replayable bit for bit from (checkpoint,
base_seed), and every downstream statistic derives from it.

Scoring is run-level: accuracy is computed per pass over the whole test set
and then summarized by mean and population standard deviation across passes,
never by averaging probabilities before thresholding.

The on-disk format is line-delimited JSON with fixed field names: one header
record, N sample records, M pass records. This file is the interchange
contract for external producers, so the loader reports soft contract
violations as warnings rather than silently repairing them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import DOMAINS
from .model import Checkpoint, DropoutConfig, forward
from .rng import RngStream

MATRIX_FORMAT_VERSION = 1
DECISION_THRESHOLD = 0.5  # strict: probability exactly 0.5 predicts negative


@dataclass(frozen=True)
class SampleMeta:
    id: str
    domain: str
    label: bool


@dataclass(frozen=True)
class RunSummary:
    """Mean/std of run-level accuracies, overall and per domain.

    Domain fields are None when the matrix holds no sample of that domain,
    in which case the memory-reasoning differential is undefined.
    """

    mean_overall: float
    std_overall: float
    mean_memory: Optional[float]
    std_memory: Optional[float]
    mean_reasoning: Optional[float]
    std_reasoning: Optional[float]
    delta_cog: Optional[float]
    passes: int

    @property
    def partial(self) -> bool:
        return self.delta_cog is None


@dataclass
class PredictionMatrix:
    passes: int
    samples: List[SampleMeta]
    predictions: np.ndarray     # (M, N) bool
    probabilities: np.ndarray   # (M, N) float64, positive-class probability
    dropout: DropoutConfig
    mode: str                   # deterministic | stochastic
    base_seed: int
    checkpoint_ref: str
    model_id: str = ""

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=bool)

    def domains(self) -> np.ndarray:
        return np.array([s.domain for s in self.samples])

    def validate(self) -> List[str]:
        """Soft contract checks; returns human-readable warnings."""
        warnings: List[str] = []
        m, n = self.predictions.shape
        if m != self.passes:
            warnings.append(f"header says {self.passes} passes, found {m} rows")
        if n != len(self.samples):
            warnings.append(f"{len(self.samples)} sample records but rows have {n} entries")
        if self.probabilities.shape != self.predictions.shape:
            warnings.append("prediction and probability shapes differ")
        else:
            implied = self.probabilities > DECISION_THRESHOLD
            if not np.array_equal(implied, self.predictions):
                bad = int(np.sum(implied != self.predictions))
                warnings.append(
                    f"{bad} predictions disagree with the {DECISION_THRESHOLD} threshold rule"
                )
        if self.probabilities.size and (
            self.probabilities.min() < 0.0 or self.probabilities.max() > 1.0
        ):
            warnings.append("probabilities outside [0, 1]")
        if self.mode == "deterministic" and self.passes > 1:
            if not all(
                np.array_equal(self.predictions[0], self.predictions[i])
                for i in range(1, self.passes)
            ):
                warnings.append("deterministic mode but pass rows differ")
        return warnings


def mc_run(
    ckpt: Checkpoint,
    token_matrix: np.ndarray,
    samples: Sequence[SampleMeta],
    dropout: DropoutConfig,
    passes: int = 100,
    base_seed: int = 42,
    model_id: str = "",
    checkpoint_ref: str = "",
) -> PredictionMatrix:
    """Run the MC protocol: pass m uses RngStream(base_seed, m), so the full
    matrix is replayable and masks are independent across passes. Only the
    two dropout sites are stochastic; the deterministic preset therefore
    produces M identical rows.

    Each pass evaluates the whole test set in one forward call: a pass's
    masks are one draw per site over the full batch, never reused across
    sample groups."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if len(samples) == 0:
        raise ValueError("test set is empty")
    if len(samples) != len(token_matrix):
        raise ValueError("sample metadata and token matrix lengths differ")
    mode = "deterministic" if dropout.is_deterministic else "stochastic"
    n = len(samples)
    probabilities = np.empty((passes, n), dtype=np.float64)
    for m in range(passes):
        probs = forward(ckpt, token_matrix, dropout, mode=mode,
                        rng=RngStream(base_seed, m))
        probabilities[m] = probs[:, 1]
    predictions = probabilities > DECISION_THRESHOLD
    return PredictionMatrix(
        passes=passes, samples=list(samples),
        predictions=predictions, probabilities=probabilities,
        dropout=dropout, mode=mode, base_seed=base_seed,
        checkpoint_ref=checkpoint_ref, model_id=model_id,
    )


def run_level_accuracy(pm: PredictionMatrix) -> Dict[str, np.ndarray]:
    """Per-pass accuracies: accuracy_m = mean over samples of
    (prediction[m][n] == label[n]); domain keys restrict the samples."""
    labels = pm.labels()
    correct = pm.predictions == labels[None, :]
    out = {"overall": correct.mean(axis=1)}
    domains = pm.domains()
    for domain in DOMAINS:
        mask = domains == domain
        if mask.any():
            out[domain] = correct[:, mask].mean(axis=1)
    return out


def summarize(pm: PredictionMatrix) -> RunSummary:
    """Mean and population (divide-by-M) std of the run-level accuracies,
    plus the memory-reasoning differential of the domain means."""
    acc = run_level_accuracy(pm)

    def stats(key):
        if key not in acc:
            return None, None
        values = acc[key]
        if np.all(values == values[0]):  # exact zero, no float-accumulation dust
            return float(values[0]), 0.0
        return float(values.mean()), float(values.std(ddof=0))

    mean_overall, std_overall = stats("overall")
    mean_memory, std_memory = stats("memory")
    mean_reasoning, std_reasoning = stats("reasoning")
    delta = None
    if mean_memory is not None and mean_reasoning is not None:
        delta = mean_memory - mean_reasoning
    return RunSummary(
        mean_overall=mean_overall, std_overall=std_overall,
        mean_memory=mean_memory, std_memory=std_memory,
        mean_reasoning=mean_reasoning, std_reasoning=std_reasoning,
        delta_cog=delta, passes=pm.passes,
    )


# -- persistence ----------------------------------------------------------------


class MatrixFormatError(ValueError):
    """Raised when a prediction-matrix file violates the structural contract."""


def save_matrix(pm: PredictionMatrix, path) -> None:
    header = {
        "record": "header",
        "format_version": MATRIX_FORMAT_VERSION,
        "kind": "prediction_matrix",
        "passes": pm.passes,
        "num_samples": pm.num_samples,
        "dropout_name": pm.dropout.name,
        "attention_rate": pm.dropout.attention_rate,
        "ffn_rate": pm.dropout.ffn_rate,
        "mode": pm.mode,
        "base_seed": pm.base_seed,
        "checkpoint_ref": pm.checkpoint_ref,
        "model_id": pm.model_id,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, s in enumerate(pm.samples):
            fh.write(json.dumps(
                {"record": "sample", "index": i, "id": s.id,
                 "domain": s.domain, "label": s.label}
            ) + "\n")
        for m in range(pm.passes):
            fh.write(json.dumps(
                {"record": "pass", "index": m,
                 "predictions": "".join("1" if p else "0" for p in pm.predictions[m]),
                 "probabilities": [float(v) for v in pm.probabilities[m]]}
            ) + "\n")


def load_matrix(path) -> Tuple[PredictionMatrix, List[str]]:
    """Parse a matrix file; structural violations raise MatrixFormatError,
    soft contract violations come back as warnings."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")

    def parse(lineno, text):
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as e:
            raise MatrixFormatError(f"{path}: malformed line {lineno}: {e.msg}") from e
        if not isinstance(rec, dict) or "record" not in rec:
            raise MatrixFormatError(f"{path}: line {lineno} is not a tagged record")
        return rec

    header = parse(1, lines[0])
    if header.get("record") != "header" or header.get("kind") != "prediction_matrix":
        raise MatrixFormatError(f"{path}: first record must be a prediction_matrix header")
    if header.get("format_version") != MATRIX_FORMAT_VERSION:
        raise MatrixFormatError(
            f"{path}: unsupported format_version {header.get('format_version')}"
        )
    warnings: List[str] = []
    known_header = {
        "record", "format_version", "kind", "passes", "num_samples",
        "dropout_name", "attention_rate", "ffn_rate", "mode", "base_seed",
        "checkpoint_ref", "model_id",
    }
    extra = sorted(set(header) - known_header)
    if extra:
        warnings.append(f"header carries unknown fields {extra}")

    samples: List[SampleMeta] = []
    pass_rows: List[dict] = []
    for lineno, text in enumerate(lines[1:], start=2):
        rec = parse(lineno, text)
        kind = rec["record"]
        if kind == "sample":
            for fld in ("index", "id", "domain", "label"):
                if fld not in rec:
                    raise MatrixFormatError(f"{path}: sample record line {lineno} missing {fld!r}")
            if rec["index"] != len(samples):
                raise MatrixFormatError(
                    f"{path}: sample records out of order at line {lineno}"
                )
            if rec["domain"] not in DOMAINS:
                warnings.append(f"sample {rec['id']!r} has unknown domain {rec['domain']!r}")
            samples.append(SampleMeta(id=str(rec["id"]), domain=rec["domain"],
                                      label=bool(rec["label"])))
        elif kind == "pass":
            for fld in ("index", "predictions", "probabilities"):
                if fld not in rec:
                    raise MatrixFormatError(f"{path}: pass record line {lineno} missing {fld!r}")
            if rec["index"] != len(pass_rows):
                raise MatrixFormatError(f"{path}: pass records out of order at line {lineno}")
            pass_rows.append(rec)
        else:
            raise MatrixFormatError(f"{path}: unknown record type {kind!r} at line {lineno}")

    n = header.get("num_samples")
    m = header.get("passes")
    if len(samples) != n:
        raise MatrixFormatError(f"{path}: header claims {n} samples, found {len(samples)}")
    if len(pass_rows) != m:
        raise MatrixFormatError(f"{path}: header claims {m} passes, found {len(pass_rows)}")

    predictions = np.zeros((m, len(samples)), dtype=bool)
    probabilities = np.zeros((m, len(samples)), dtype=np.float64)
    for row in pass_rows:
        i = row["index"]
        bits = row["predictions"]
        probs = row["probabilities"]
        if len(bits) != len(samples) or len(probs) != len(samples):
            raise MatrixFormatError(
                f"{path}: pass {i} row length does not match sample count"
            )
        if set(bits) - {"0", "1"}:
            raise MatrixFormatError(f"{path}: pass {i} predictions must be 0/1 digits")
        predictions[i] = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")
        probabilities[i] = probs

    dropout = DropoutConfig(
        name=header.get("dropout_name", "custom"),
        attention_rate=float(header["attention_rate"]),
        ffn_rate=float(header["ffn_rate"]),
    )
    pm = PredictionMatrix(
        passes=m, samples=samples, predictions=predictions,
        probabilities=probabilities, dropout=dropout,
        mode=header.get("mode", "stochastic"), base_seed=int(header["base_seed"]),
        checkpoint_ref=header.get("checkpoint_ref", ""),
        model_id=header.get("model_id", ""),
    )
    warnings.extend(pm.validate())
    return pm, warnings


def summary_to_dict(s: RunSummary) -> dict:
    return {
        "mean_overall": s.mean_overall, "std_overall": s.std_overall,
        "mean_memory": s.mean_memory, "std_memory": s.std_memory,
        "mean_reasoning": s.mean_reasoning, "std_reasoning": s.std_reasoning,
        "delta_cog": s.delta_cog, "passes": s.passes,
    }


def summary_from_dict(d: dict) -> RunSummary:
    return RunSummary(
        mean_overall=d["mean_overall"], std_overall=d["std_overall"],
        mean_memory=d.get("mean_memory"), std_memory=d.get("std_memory"),
        mean_reasoning=d.get("mean_reasoning"), std_reasoning=d.get("std_reasoning"),
        delta_cog=d.get("delta_cog"), passes=d["passes"],
    )


def save_summary(s: RunSummary, path, extra: Optional[dict] = None) -> None:
    rec = {"format_version": 1, "kind": "run_summary", **summary_to_dict(s)}
    if extra:
        rec.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, indent=2) + "\n")


def load_summary(path) -> Tuple[RunSummary, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if rec.get("kind") != "run_summary":
        raise ValueError(f"{path} is not a run summary record")
    return summary_from_dict(rec), rec


def replay_check(
    pm: PredictionMatrix,
    ckpt: Checkpoint,
    token_matrix: np.ndarray,
) -> Optional[dict]:
    """Re-run the stored protocol and compare bitwise. Returns None when the
    replay matches, else a report naming the first mismatching pass/sample."""
    fresh = mc_run(
        ckpt, token_matrix, pm.samples, pm.dropout,
        passes=pm.passes, base_seed=pm.base_seed,
        model_id=pm.model_id, checkpoint_ref=pm.checkpoint_ref,
    )
    prob_mismatch = fresh.probabilities != pm.probabilities
    pred_mismatch = fresh.predictions != pm.predictions
    mismatch = prob_mismatch | pred_mismatch
    if not mismatch.any():
        return None
    m, n = np.argwhere(mismatch)[0]
    return {
        "pass": int(m),
        "sample_index": int(n),
        "sample_id": pm.samples[n].id,
        "stored_probability": float(pm.probabilities[m, n]),
        "replayed_probability": float(fresh.probabilities[m, n]),
        "stored_prediction": bool(pm.predictions[m, n]),
        "replayed_prediction": bool(fresh.predictions[m, n]),
        "total_mismatches": int(mismatch.sum()),
    }
