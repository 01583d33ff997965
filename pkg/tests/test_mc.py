"""MC protocol: prediction matrices, run-level scoring, file round-trips."""

import numpy as np
import pytest

from dropbench.mc import (
    MatrixFormatError,
    PredictionMatrix,
    SampleMeta,
    load_matrix,
    mc_run,
    replay_check,
    run_level_accuracy,
    save_matrix,
    summarize,
)
from dropbench.model import DropoutConfig, ModelConfig, build, preset
from dropbench.rng import RngStream

VOCAB = 30


@pytest.fixture(scope="module")
def toy():
    cfg = ModelConfig(family="encoder", layers=2, heads=2, d_model=16, d_ffn=32,
                      vocab_size=VOCAB, max_seq_len=8)
    ckpt = build(cfg, init_seed=17)
    gen = np.random.default_rng(5)
    tokens = gen.integers(4, VOCAB, size=(10, 8))
    meta = [
        SampleMeta(id=f"s{i:02d}", domain="memory" if i < 5 else "reasoning",
                   label=bool(gen.integers(2)))
        for i in range(10)
    ]
    return ckpt, tokens, meta


def manual_matrix(predictions, labels, domains=None, probabilities=None):
    m, n = np.asarray(predictions).shape
    domains = domains or ["memory"] * n
    samples = [
        SampleMeta(id=f"x{i}", domain=domains[i], label=bool(labels[i]))
        for i in range(n)
    ]
    preds = np.asarray(predictions, dtype=bool)
    if probabilities is None:
        probabilities = np.where(preds, 0.9, 0.1)
    return PredictionMatrix(
        passes=m, samples=samples, predictions=preds,
        probabilities=np.asarray(probabilities, dtype=np.float64),
        dropout=preset("baseline"), mode="stochastic", base_seed=1,
        checkpoint_ref="sha256:test", model_id="toy",
    )


# -- run-level accuracy -----------------------------------------------------------

def test_run_level_accuracy_brute_force_fixture():
    # 2 passes x 3 samples, labels all true
    pm = manual_matrix([[True, True, False], [True, False, False]], [1, 1, 1])
    acc = run_level_accuracy(pm)["overall"]
    np.testing.assert_allclose(acc, [2 / 3, 1 / 3])


def test_all_correct_matrix_scores_one():
    pm = manual_matrix([[True, False], [True, False]], [1, 0])
    np.testing.assert_array_equal(run_level_accuracy(pm)["overall"], [1.0, 1.0])


def test_single_domain_restriction_equals_overall():
    pm = manual_matrix([[True, False, True]], [1, 1, 1],
                       domains=["memory"] * 3)
    acc = run_level_accuracy(pm)
    np.testing.assert_array_equal(acc["overall"], acc["memory"])
    assert "reasoning" not in acc


def test_domain_split_accuracies():
    pm = manual_matrix(
        [[True, True, False, False]], [1, 1, 1, 1],
        domains=["memory", "memory", "reasoning", "reasoning"],
    )
    acc = run_level_accuracy(pm)
    assert acc["memory"][0] == 1.0
    assert acc["reasoning"][0] == 0.0


# -- summaries ---------------------------------------------------------------------

def test_summary_delta_is_exact_difference():
    pm = manual_matrix(
        [[True, True, False, True], [True, False, False, True]],
        [1, 1, 1, 1],
        domains=["memory", "memory", "reasoning", "reasoning"],
    )
    s = summarize(pm)
    assert s.delta_cog == s.mean_memory - s.mean_reasoning
    assert 0.0 <= s.mean_overall <= 1.0
    assert s.std_overall >= 0.0


def test_summary_population_std():
    pm = manual_matrix([[True, True], [False, False]], [1, 1])
    s = summarize(pm)
    # run accuracies are [1.0, 0.0]: population std = 0.5
    assert s.std_overall == pytest.approx(0.5)
    assert s.mean_overall == pytest.approx(0.5)


def test_summary_equal_domain_means_zero_delta():
    pm = manual_matrix(
        [[True, True]], [1, 1], domains=["memory", "reasoning"]
    )
    s = summarize(pm)
    assert s.delta_cog == 0.0


def test_summary_missing_domain_is_partial():
    pm = manual_matrix([[True]], [1], domains=["memory"])
    s = summarize(pm)
    assert s.partial
    assert s.mean_reasoning is None
    assert s.delta_cog is None


# -- mc_run -------------------------------------------------------------------------

def test_deterministic_preset_rows_identical_std_zero(toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("deterministic"), passes=20, base_seed=3)
    assert pm.mode == "deterministic"
    for i in range(1, 20):
        np.testing.assert_array_equal(pm.probabilities[0], pm.probabilities[i])
    s = summarize(pm)
    assert s.std_overall == 0.0
    assert s.std_memory == 0.0
    assert s.std_reasoning == 0.0


def test_single_pass_equals_one_stochastic_forward(toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("baseline"), passes=1, base_seed=9)
    from dropbench.model import forward

    probs = forward(ckpt, tokens, preset("baseline"), mode="stochastic",
                    rng=RngStream(9, 0))
    np.testing.assert_array_equal(pm.probabilities[0], probs[:, 1])


def test_replay_same_seed_is_bitwise(toy):
    ckpt, tokens, meta = toy
    a = mc_run(ckpt, tokens, meta, preset("high_both"), passes=10, base_seed=77)
    b = mc_run(ckpt, tokens, meta, preset("high_both"), passes=10, base_seed=77)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    np.testing.assert_array_equal(a.predictions, b.predictions)
    assert replay_check(a, ckpt, tokens) is None


def test_replay_detects_tampering(toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("baseline"), passes=5, base_seed=13)
    pm.predictions[3, 7] = not pm.predictions[3, 7]
    report = replay_check(pm, ckpt, tokens)
    assert report is not None
    assert report["pass"] == 3
    assert report["sample_index"] == 7
    assert report["sample_id"] == meta[7].id


def test_pass_prefix_is_stable_under_more_passes(toy):
    # matrices assemble by pass index: extending M leaves earlier rows intact
    ckpt, tokens, meta = toy
    a = mc_run(ckpt, tokens, meta, preset("baseline"), passes=4, base_seed=5)
    b = mc_run(ckpt, tokens, meta, preset("baseline"), passes=8, base_seed=5)
    np.testing.assert_array_equal(a.probabilities, b.probabilities[:4])


def test_mc_run_validates_inputs(toy):
    ckpt, tokens, meta = toy
    with pytest.raises(ValueError):
        mc_run(ckpt, tokens, meta, preset("baseline"), passes=0)
    with pytest.raises(ValueError):
        mc_run(ckpt, tokens, [], preset("baseline"), passes=1)


def test_threshold_ties_resolve_negative():
    pm = manual_matrix([[False]], [0], probabilities=[[0.5]])
    assert not pm.validate()  # 0.5 must imply a negative prediction
    bad = manual_matrix([[True]], [0], probabilities=[[0.5]])
    assert any("threshold" in w for w in bad.validate())


# -- file format ----------------------------------------------------------------------

def test_matrix_file_round_trip(tmp_path, toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("high_ffn"), passes=7, base_seed=21,
                model_id="toy-enc", checkpoint_ref="sha256:abc")
    path = tmp_path / "m.matrix.jsonl"
    save_matrix(pm, path)
    loaded, warnings = load_matrix(path)
    assert warnings == []
    assert loaded.passes == pm.passes
    assert loaded.base_seed == pm.base_seed
    assert loaded.model_id == "toy-enc"
    assert loaded.checkpoint_ref == "sha256:abc"
    assert loaded.dropout == pm.dropout
    assert [s.id for s in loaded.samples] == [s.id for s in pm.samples]
    np.testing.assert_array_equal(loaded.predictions, pm.predictions)
    np.testing.assert_array_equal(loaded.probabilities, pm.probabilities)


def test_matrix_round_trip_preserves_summary_exactly(tmp_path, toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("baseline"), passes=9, base_seed=2)
    path = tmp_path / "m.matrix.jsonl"
    save_matrix(pm, path)
    loaded, _ = load_matrix(path)
    assert summarize(loaded) == summarize(pm)


def test_load_rejects_structural_damage(tmp_path, toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("baseline"), passes=3, base_seed=2)
    path = tmp_path / "m.matrix.jsonl"
    save_matrix(pm, path)
    lines = path.read_text().splitlines()

    # drop one pass row
    (tmp_path / "short.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(MatrixFormatError):
        load_matrix(tmp_path / "short.jsonl")

    # corrupt json
    (tmp_path / "corrupt.jsonl").write_text("\n".join(lines[:-1] + ["{oops"]) + "\n")
    with pytest.raises(MatrixFormatError):
        load_matrix(tmp_path / "corrupt.jsonl")

    # wrong header kind
    (tmp_path / "kind.jsonl").write_text(
        lines[0].replace("prediction_matrix", "something") + "\n"
    )
    with pytest.raises(MatrixFormatError):
        load_matrix(tmp_path / "kind.jsonl")


def test_load_warns_on_threshold_violation(tmp_path, toy):
    ckpt, tokens, meta = toy
    pm = mc_run(ckpt, tokens, meta, preset("baseline"), passes=2, base_seed=2)
    path = tmp_path / "m.matrix.jsonl"
    pm.predictions[0, 0] = not pm.predictions[0, 0]
    save_matrix(pm, path)
    _, warnings = load_matrix(path)
    assert any("threshold" in w for w in warnings)
