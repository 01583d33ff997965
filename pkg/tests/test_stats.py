"""Welch/Bonferroni/effect-size machinery against an mpmath oracle."""

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropbench.mc import RunSummary
from dropbench.stats import (
    BiasCensus,
    compare,
    config_effect_table,
    degradation_table,
    memory_bias_census,
    regularized_incomplete_beta,
    stability_quartiles,
    t_sf_two_sided,
)

mp.mp.dps = 60


def oracle_welch(a, b):
    """Direct textbook evaluation of the Welch formulas in 60-digit arithmetic."""
    am = [mp.mpf(float(x)) for x in a]  # binary-exact conversion
    bm = [mp.mpf(float(x)) for x in b]
    n1, n2 = len(am), len(bm)
    m1, m2 = mp.fsum(am) / n1, mp.fsum(bm) / n2
    v1 = mp.fsum((x - m1) ** 2 for x in am) / (n1 - 1)
    v2 = mp.fsum((x - m2) ** 2 for x in bm) / (n2 - 1)
    se2 = v1 / n1 + v2 / n2
    t = (m1 - m2) / mp.sqrt(se2)
    df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    x = df / (df + t * t)
    p = mp.betainc(df / 2, mp.mpf(1) / 2, 0, x, regularized=True)
    pooled = mp.sqrt(((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2))
    d = (m1 - m2) / pooled
    return float(t), float(df), float(p), float(d)


def close(a, b, tol=1e-10):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def summary(mean_overall=0.7, std_overall=0.01, mem=0.8, rea=0.6,
            std_mem=0.01, std_rea=0.02, passes=100):
    return RunSummary(
        mean_overall=mean_overall, std_overall=std_overall,
        mean_memory=mem, std_memory=std_mem,
        mean_reasoning=rea, std_reasoning=std_rea,
        delta_cog=None if mem is None or rea is None else mem - rea,
        passes=passes,
    )


# -- oracle agreement -----------------------------------------------------------

def test_welch_matches_oracle_on_100_random_fixtures():
    rng = np.random.default_rng(1234)
    for trial in range(100):
        n1 = int(rng.integers(2, 120))
        n2 = int(rng.integers(2, 120))
        scale = 10.0 ** rng.uniform(-3, 1)
        a = rng.normal(rng.uniform(-1, 1), scale, size=n1)
        b = rng.normal(rng.uniform(-1, 1), scale * rng.uniform(0.2, 5), size=n2)
        r = compare(a, b, family_size=15)
        t, df, p, d = oracle_welch(a, b)
        assert close(r.t_stat, t), f"trial {trial}: t {r.t_stat} vs {t}"
        assert close(r.df, df), f"trial {trial}: df {r.df} vs {df}"
        assert close(r.p_raw, p), f"trial {trial}: p {r.p_raw} vs {p}"
        assert close(r.cohens_d, d), f"trial {trial}: d {r.cohens_d} vs {d}"


def test_incomplete_beta_against_mpmath():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = float(rng.uniform(0.3, 80))
        b = float(rng.uniform(0.3, 80))
        x = float(rng.uniform(0, 1))
        mine = regularized_incomplete_beta(a, b, x)
        ref = float(mp.betainc(a, b, 0, x, regularized=True))
        assert abs(mine - ref) <= 1e-12 * max(1.0, abs(ref))


def test_t_tail_probability_endpoints():
    assert t_sf_two_sided(0.0, 10) == 1.0
    assert t_sf_two_sided(math.inf, 10) == 0.0
    assert t_sf_two_sided(1e9, 5) < 1e-12


# -- Bonferroni fields ------------------------------------------------------------

def test_bonferroni_threshold_families():
    rng = np.random.default_rng(2)
    a = rng.normal(0.7, 0.01, 40)
    b = rng.normal(0.7, 0.01, 40)
    r15 = compare(a, b, family_size=15)
    assert r15.alpha_adjusted == pytest.approx(0.05 / 15)
    r3 = compare(a, b, family_size=3)
    assert r3.alpha_adjusted == pytest.approx(0.05 / 3)


def test_bonferroni_adjustment_example():
    # p_raw ~ 0.01 with family 15 -> adjusted 0.15, not significant at 0.05
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = rng.normal(0.70, 0.02, 30)
        b = rng.normal(0.715, 0.02, 30)
        r = compare(a, b, family_size=15)
        if 0.009 < r.p_raw < 0.011:
            assert r.p_adjusted == pytest.approx(15 * r.p_raw)
            assert not r.significant
            return
    pytest.skip("no fixture landed in the target p range")


def test_bonferroni_monotonicity_and_cap():
    rng = np.random.default_rng(4)
    a = rng.normal(0.7, 0.05, 10)
    b = rng.normal(0.7, 0.05, 10)
    r = compare(a, b, family_size=50)
    assert r.p_adjusted >= r.p_raw
    assert r.p_adjusted <= 1.0


def test_significance_implies_uncorrected_significance():
    rng = np.random.default_rng(5)
    a = rng.normal(0.9, 0.01, 50)
    b = rng.normal(0.5, 0.01, 50)
    r = compare(a, b, family_size=15)
    assert r.significant
    assert r.p_raw < 0.05


# -- degenerate cases -------------------------------------------------------------

def test_identical_arrays_give_null_result():
    a = [0.7] * 10
    r = compare(a, a, family_size=3)
    assert r.mean_diff == 0.0
    assert r.cohens_d == 0.0
    assert r.t_stat == 0.0
    assert r.p_raw == 1.0
    assert not r.significant
    assert r.degenerate


def test_one_constant_array_uses_other_groups_std():
    rng = np.random.default_rng(6)
    b = rng.normal(0.6, 0.03, 100)
    a = [0.75] * 100
    r = compare(a, b, family_size=15)
    assert r.degenerate
    expected_d = (np.mean(a) - b.mean()) / b.std(ddof=1)
    assert r.cohens_d == pytest.approx(expected_d, rel=1e-12)
    assert r.df >= 1.0
    assert math.isfinite(r.t_stat)


def test_both_constant_unequal():
    r = compare([0.7] * 5, [0.6] * 5, family_size=3)
    assert r.degenerate
    assert r.mean_diff == pytest.approx(0.1)
    assert math.isinf(r.t_stat) and r.t_stat > 0
    assert r.p_raw == 0.0
    assert r.significant


def test_sign_convention_diff_matches_d():
    rng = np.random.default_rng(8)
    a = rng.normal(0.6, 0.02, 30)
    b = rng.normal(0.8, 0.02, 30)
    r = compare(a, b, family_size=1)
    assert r.mean_diff < 0
    assert r.cohens_d < 0


def test_too_short_arrays_rejected():
    with pytest.raises(ValueError):
        compare([0.5], [0.5, 0.6], family_size=1)


# -- invariance properties ---------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(
    shift=st.floats(-5, 5, allow_nan=False),
    scale=st.floats(0.1, 10, allow_nan=False),
    seed=st.integers(0, 2**20),
)
def test_shift_and_scale_invariance(shift, scale, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, 25)
    b = rng.normal(0.3, 1.5, 30)
    base = compare(a, b, family_size=3)
    shifted = compare(a + shift, b + shift, family_size=3)
    assert close(base.t_stat, shifted.t_stat, 1e-9)
    assert close(base.p_raw, shifted.p_raw, 1e-9)
    assert close(base.cohens_d, shifted.cohens_d, 1e-9)
    scaled = compare(a * scale, b * scale, family_size=3)
    assert close(base.t_stat, scaled.t_stat, 1e-9)
    assert close(base.p_raw, scaled.p_raw, 1e-9)
    assert close(base.cohens_d, scaled.cohens_d, 1e-9)


# -- tables ------------------------------------------------------------------------

def test_degradation_table_arithmetic_and_order():
    summaries = {
        "m1": {"deterministic": summary(0.735, 0.0), "baseline": summary(0.497, 0.0314)},
        "m2": {"deterministic": summary(0.640, 0.0129), "baseline": summary(0.489, 0.0339)},
        "m3": {"deterministic": summary(0.500, 0.0), "baseline": summary(0.600, 0.01)},
    }
    report = degradation_table(summaries)
    assert [e.model_id for e in report.entries] == ["m1", "m2", "m3"]
    assert report.entries[0].degradation == pytest.approx(0.497 - 0.735)
    assert report.negative_count == 2
    assert report.negative_fraction == pytest.approx(2 / 3)


def test_degradation_skips_incomplete_models():
    summaries = {
        "full": {"deterministic": summary(), "baseline": summary()},
        "partial": {"deterministic": summary()},
    }
    report = degradation_table(summaries)
    assert [e.model_id for e in report.entries] == ["full"]
    assert report.skipped == ["partial"]


def test_config_effect_single_model_reduces_to_its_summary():
    s = summary(mem=0.81, rea=0.55)
    rows = config_effect_table({"only": {"baseline": s}}, config_order=["baseline"])
    assert rows[0].mean_memory == pytest.approx(0.81)
    assert rows[0].mean_reasoning == pytest.approx(0.55)
    assert rows[0].gap == pytest.approx(0.26)


def test_config_effect_gap_is_exact_difference():
    summaries = {
        "a": {"c": summary(mem=0.9, rea=0.5)},
        "b": {"c": summary(mem=0.7, rea=0.6)},
    }
    row = config_effect_table(summaries, config_order=["c"])[0]
    assert row.gap == row.mean_memory - row.mean_reasoning
    assert row.mean_memory == pytest.approx(0.8)


def test_quartiles_of_eight_models():
    summaries = {
        f"m{i}": summary(mean_overall=0.5 + 0.02 * i, std_overall=0.01 * i,
                         mem=0.6 + 0.02 * i, rea=0.4 + 0.01 * i)
        for i in range(8)
    }
    report = stability_quartiles(summaries)
    assert len(report.stable_group) == 2
    assert len(report.volatile_group) == 2
    assert report.stable_group == ["m0", "m1"]
    assert report.volatile_group == ["m6", "m7"]
    for comparison in report.comparisons.values():
        assert comparison.family_size == 3
        assert comparison.alpha_adjusted == pytest.approx(0.05 / 3)


def test_quartiles_tie_break_by_id():
    summaries = {name: summary(std_overall=0.01) for name in ("d", "c", "b", "a",
                                                              "h", "g", "f", "e")}
    report = stability_quartiles(summaries)
    assert report.ranked_ids == sorted(summaries)
    assert report.stable_group == ["a", "b"]
    assert report.volatile_group == ["g", "h"]


def test_quartiles_require_four_models():
    summaries = {f"m{i}": summary() for i in range(3)}
    with pytest.raises(ValueError):
        stability_quartiles(summaries)


def test_bias_census_counts_and_mean():
    summaries = {
        "a": summary(mem=0.8, rea=0.5),   # +0.3
        "b": summary(mem=0.8, rea=0.5),   # +0.3
        "c": summary(mem=0.4, rea=0.7),   # -0.3
    }
    census = memory_bias_census(summaries)
    assert census.positive_count == 2
    assert census.total == 3
    assert census.positive_fraction == pytest.approx(2 / 3)
    assert census.mean_delta == pytest.approx(0.1)


def test_bias_census_zero_deltas_count_as_not_positive():
    summaries = {"a": summary(mem=0.6, rea=0.6), "b": summary(mem=0.6, rea=0.6)}
    census = memory_bias_census(summaries)
    assert census.positive_count == 0
    assert census.positive_fraction == 0.0
