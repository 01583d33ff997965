"""Statistical analysis over run-level accuracy distributions.

Comparisons use Welch's unequal-variance t-test (robust to the variance
asymmetry these sweeps produce, e.g. zero-variance deterministic runs) with
Bonferroni-corrected significance and Cohen's d effect sizes. The two-sided
tail probability is computed from the regularized incomplete beta function,
evaluated with a Lentz continued fraction (NR-style) accurate to ~1e-13 in
float64, so no statistics package is needed at runtime.

The table builders reproduce the sweep's summary views: per-model
degradation between deterministic and baseline inference, per-configuration
memory/reasoning means, stability quartiles, and the memory-bias census.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .mc import RunSummary

_BETACF_MAX_ITER = 400
_BETACF_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability of the t distribution."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class ComparisonResult:
    label_a: str
    label_b: str
    mean_diff: float            # a - b
    t_stat: float
    df: float
    p_raw: float
    p_adjusted: float           # min(1, family_size * p_raw)
    alpha_adjusted: float       # alpha / family_size
    cohens_d: float
    significant: bool
    family_size: int
    degenerate: bool = False    # a zero-variance group forced a fallback


def compare(
    acc_a: Sequence[float],
    acc_b: Sequence[float],
    family_size: int,
    alpha: float = 0.05,
    label_a: str = "a",
    label_b: str = "b",
) -> ComparisonResult:
    """Welch's t-test of two run-accuracy arrays with Bonferroni fields.

    Cohen's d uses the pooled standard deviation; when exactly one group has
    zero variance the other group's standard deviation is used instead and
    the result is flagged degenerate.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise ValueError("both accuracy arrays must be 1-d with length >= 2")
    if family_size < 1:
        raise ValueError("family_size must be >= 1")
    n1, n2 = len(a), len(b)
    m1, m2 = float(a.mean()), float(b.mean())
    v1 = float(a.var(ddof=1))
    v2 = float(b.var(ddof=1))
    diff = m1 - m2

    degenerate = False
    if v1 == 0.0 and v2 == 0.0:
        degenerate = True
        df = float(n1 + n2 - 2)
        if diff == 0.0:
            t = 0.0
            p = 1.0
            d = 0.0
        else:
            t = math.copysign(math.inf, diff)
            p = 0.0
            d = math.copysign(math.inf, diff)
    else:
        se2 = v1 / n1 + v2 / n2
        t = diff / math.sqrt(se2)
        denom = (v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)
        df = max(se2 * se2 / denom, 1.0)
        p = t_sf_two_sided(t, df)
        if v1 == 0.0 or v2 == 0.0:
            degenerate = True
            other = math.sqrt(v2 if v1 == 0.0 else v1)
            d = diff / other
        else:
            pooled = math.sqrt(((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2))
            d = diff / pooled

    p_adjusted = min(1.0, family_size * p)
    alpha_adjusted = alpha / family_size
    return ComparisonResult(
        label_a=label_a, label_b=label_b, mean_diff=diff,
        t_stat=t, df=df, p_raw=p, p_adjusted=p_adjusted,
        alpha_adjusted=alpha_adjusted, cohens_d=d,
        significant=p < alpha_adjusted, family_size=family_size,
        degenerate=degenerate,
    )


# -- sweep-level tables --------------------------------------------------------


@dataclass(frozen=True)
class DegradationEntry:
    model_id: str
    deterministic_mean: float
    deterministic_std: float
    baseline_mean: float
    baseline_std: float
    degradation: float  # baseline - deterministic


@dataclass
class DegradationReport:
    entries: List[DegradationEntry]
    negative_count: int
    total: int
    negative_fraction: float
    skipped: List[str] = field(default_factory=list)


def degradation_table(
    summaries: Dict[str, Dict[str, RunSummary]],
    deterministic_key: str = "deterministic",
    baseline_key: str = "baseline",
) -> DegradationReport:
    """Per-model mean-accuracy change when enabling baseline dropout,
    sorted most negative first. Models missing either configuration are
    skipped and reported."""
    entries: List[DegradationEntry] = []
    skipped: List[str] = []
    for model_id in sorted(summaries):
        configs = summaries[model_id]
        if deterministic_key not in configs or baseline_key not in configs:
            skipped.append(model_id)
            continue
        det = configs[deterministic_key]
        base = configs[baseline_key]
        entries.append(
            DegradationEntry(
                model_id=model_id,
                deterministic_mean=det.mean_overall,
                deterministic_std=det.std_overall,
                baseline_mean=base.mean_overall,
                baseline_std=base.std_overall,
                degradation=base.mean_overall - det.mean_overall,
            )
        )
    entries.sort(key=lambda e: (e.degradation, e.model_id))
    negative = sum(1 for e in entries if e.degradation < 0)
    total = len(entries)
    return DegradationReport(
        entries=entries,
        negative_count=negative,
        total=total,
        negative_fraction=(negative / total) if total else 0.0,
        skipped=skipped,
    )


@dataclass(frozen=True)
class ConfigEffectRow:
    config: str
    mean_memory: float
    mean_reasoning: float
    gap: float  # memory - reasoning
    model_count: int


def config_effect_table(
    summaries: Dict[str, Dict[str, RunSummary]],
    config_order: Optional[Sequence[str]] = None,
) -> List[ConfigEffectRow]:
    """Unweighted across-model means of the domain accuracies per
    configuration."""
    configs: Dict[str, List[RunSummary]] = {}
    for per_model in summaries.values():
        for name, summary in per_model.items():
            configs.setdefault(name, []).append(summary)
    order = list(config_order) if config_order else sorted(configs)
    rows = []
    for name in order:
        group = configs.get(name)
        if not group:
            continue
        mem = float(np.mean([s.mean_memory for s in group]))
        rea = float(np.mean([s.mean_reasoning for s in group]))
        rows.append(
            ConfigEffectRow(
                config=name, mean_memory=mem, mean_reasoning=rea,
                gap=mem - rea, model_count=len(group),
            )
        )
    return rows


@dataclass
class QuartileReport:
    ranked_ids: List[str]          # ascending std_overall, ties by id
    stable_group: List[str]        # bottom quartile (lowest std)
    volatile_group: List[str]      # top quartile (highest std)
    comparisons: Dict[str, ComparisonResult]
    skipped_metrics: List[str] = field(default_factory=list)


def stability_quartiles(
    summaries: Dict[str, RunSummary],
    alpha: float = 0.05,
) -> QuartileReport:
    """Rank models by overall run-accuracy std and compare the extreme
    quartiles on the three accuracy measures (family of 3 tests).

    Quartile size is floor(k/4); ties in std break lexicographically by
    model id. Metrics whose groups are too small to test are skipped.
    """
    if len(summaries) < 4:
        raise ValueError("stability quartiles need at least 4 models")
    ranked = sorted(summaries, key=lambda mid: (summaries[mid].std_overall, mid))
    q = len(ranked) // 4
    stable, volatile = ranked[:q], ranked[-q:]

    def values(group, metric):
        return [getattr(summaries[mid], metric) for mid in group]

    comparisons: Dict[str, ComparisonResult] = {}
    skipped: List[str] = []
    for metric in ("mean_overall", "mean_memory", "mean_reasoning"):
        a = values(stable, metric)
        b = values(volatile, metric)
        if len(a) < 2 or len(b) < 2 or any(v is None for v in a + b):
            skipped.append(metric)
            continue
        comparisons[metric] = compare(
            a, b, family_size=3, alpha=alpha,
            label_a=f"stable:{metric}", label_b=f"volatile:{metric}",
        )
    return QuartileReport(
        ranked_ids=ranked, stable_group=stable, volatile_group=volatile,
        comparisons=comparisons, skipped_metrics=skipped,
    )


@dataclass(frozen=True)
class BiasCensus:
    positive_count: int
    total: int
    positive_fraction: float
    mean_delta: float


def memory_bias_census(summaries: Dict[str, RunSummary]) -> BiasCensus:
    """Count models whose memory mean strictly exceeds their reasoning mean."""
    if not summaries:
        raise ValueError("census needs at least one summary")
    deltas = [s.delta_cog for s in summaries.values()]
    if any(d is None for d in deltas):
        raise ValueError("all summaries must cover both domains")
    positive = sum(1 for d in deltas if d > 0)
    return BiasCensus(
        positive_count=positive,
        total=len(deltas),
        positive_fraction=positive / len(deltas),
        mean_delta=float(np.mean(deltas)),
    )
