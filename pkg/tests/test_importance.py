import numpy as np
import pytest

from riskloop.dataset import CaseRecord, EventTime
from riskloop.featurizer import (
    BLOCK,
    EVENT_DIMS,
    TOTAL_DIMS,
    EmbeddingStore,
    FeatureVector,
    build_projection,
    featurize_case,
    fit_time_normalizer,
)
from riskloop.importance import (
    ImportanceConfigError,
    compare_models,
    cohort_feature_report,
    importance_scores,
    top_features,
)
from riskloop.network import ModelConfig, ShapeError, init_model
from .test_dataset import table_case

FULL_CFG = ModelConfig(input_dim=TOTAL_DIMS, hidden1=8, hidden2=4, attention="full", seed=1)
DIAG_CFG = ModelConfig(input_dim=TOTAL_DIMS, hidden1=8, hidden2=4, attention="diagonal", seed=1)


def featurized_table_case():
    record = table_case()
    store = EmbeddingStore()
    proj = build_projection(0)
    norm = fit_time_normalizer([record])
    return record, featurize_case(record, store, proj, norm)


class TestScores:
    def test_zero_input_annihilates(self):
        model = init_model(DIAG_CFG)
        fv = FeatureVector(values=np.zeros(TOTAL_DIMS), n_real_pairs=0, case_id="z")
        np.testing.assert_array_equal(importance_scores(model, fv), np.zeros(TOTAL_DIMS))

    def test_padded_indices_zero(self):
        record, fv = featurized_table_case()
        model = init_model(DIAG_CFG)
        scores = importance_scores(model, fv)
        assert np.abs(scores[fv.n_real_pairs * BLOCK :]).sum() == 0.0

    def test_frozen_gate_doubles_with_input(self):
        """Zero diagonal weights pin every gate at exactly 0.5, so the score
        is |x|/2 and doubling one entry doubles its score."""
        model = init_model(DIAG_CFG)
        model.w_attn[:] = 0.0
        rng = np.random.default_rng(3)
        x = rng.standard_normal(TOTAL_DIMS)
        fv = FeatureVector(values=x.copy(), n_real_pairs=150, case_id="a")
        s1 = importance_scores(model, fv)
        np.testing.assert_allclose(s1, np.abs(x) / 2.0)
        x2 = x.copy()
        x2[7] *= 2.0
        fv2 = FeatureVector(values=x2, n_real_pairs=150, case_id="b")
        s2 = importance_scores(model, fv2)
        assert s2[7] == pytest.approx(2.0 * s1[7])

    def test_signed_variant(self):
        model = init_model(DIAG_CFG)
        model.w_attn[:] = 0.0
        x = np.full(TOTAL_DIMS, -1.0)
        fv = FeatureVector(values=x, n_real_pairs=150, case_id="s")
        signed = importance_scores(model, fv, signed=True)
        assert np.all(signed < 0)

    def test_dimension_mismatch(self):
        model = init_model(ModelConfig(input_dim=10, hidden1=4, hidden2=3))
        fv = FeatureVector(values=np.zeros(TOTAL_DIMS), n_real_pairs=0, case_id="m")
        with pytest.raises(ShapeError):
            importance_scores(model, fv)

    def test_deterministic(self):
        record, fv = featurized_table_case()
        model = init_model(FULL_CFG)
        np.testing.assert_array_equal(
            importance_scores(model, fv), importance_scores(model, fv)
        )


class TestTopFeatures:
    def test_time_slot_named_time(self):
        record, _ = featurized_table_case()
        scores = np.zeros(TOTAL_DIMS)
        scores[32] = 1.0  # pair 0 time slot
        top = top_features(scores, record, k=1)
        assert top[0].name == "Time"
        assert top[0].flat_index == 32

    def test_padded_slot_named_unknown(self):
        record, _ = featurized_table_case()
        scores = np.zeros(TOTAL_DIMS)
        scores[20 * BLOCK + 5] = 1.0  # pair 20 is padded for an 8-event case
        top = top_features(scores, record, k=1)
        assert top[0].name == "Unknown"
        assert top[0].pair_index == 20

    def test_event_dim_names_earliest_sorted_event(self):
        record, _ = featurized_table_case()
        scores = np.zeros(TOTAL_DIMS)
        scores[0] = 1.0
        top = top_features(scores, record, k=1)
        # pair 0 is the earliest event after time-sorting
        assert top[0].name == "depression"

    def test_rank_score_coherent_and_tie_order(self):
        record, _ = featurized_table_case()
        rng = np.random.default_rng(0)
        scores = rng.random(TOTAL_DIMS)
        scores[10] = scores[40] = 2.0  # engineered tie
        top = top_features(scores, record, k=5)
        assert [f.rank for f in top] == [1, 2, 3, 4, 5]
        assert all(top[i].score >= top[i + 1].score for i in range(4))
        assert top[0].flat_index == 10 and top[1].flat_index == 40

    def test_k_bounds(self):
        record, _ = featurized_table_case()
        with pytest.raises(IndexError):
            top_features(np.zeros(TOTAL_DIMS), record, k=TOTAL_DIMS + 1)
        assert top_features(np.zeros(TOTAL_DIMS), record, k=0) == []

    def test_dedupe_collapses_names(self):
        record, _ = featurized_table_case()
        scores = np.zeros(TOTAL_DIMS)
        scores[0] = 3.0
        scores[1] = 2.0  # same pair 0 event, second dim
        scores[33] = 1.0  # pair 1 event dim
        top = top_features(scores, record, k=2, dedupe=True)
        names = [f.name for f in top]
        assert len(names) == len(set(names)) == 2

    def test_padding_safety_fuzz(self):
        record, fv = featurized_table_case()
        rng = np.random.default_rng(7)
        scores = rng.random(TOTAL_DIMS)
        for f in top_features(scores, record, k=200):
            if f.name not in ("Time", "Unknown"):
                assert f.pair_index < fv.n_real_pairs


class TestCohortReport:
    def test_identical_models_fully_common(self):
        record, fv = featurized_table_case()
        model = init_model(FULL_CFG)
        comparisons = compare_models(model, model.copy(), [(record, fv)], k=5)
        assert comparisons[0].unique_a == [] and comparisons[0].unique_b == []
        assert len(comparisons[0].common) > 0

    def test_k_zero_empty(self):
        record, fv = featurized_table_case()
        report = cohort_feature_report(init_model(FULL_CFG), [(record, fv)], k=0)
        assert report[0].features == []

    def test_disjoint_top_sets(self):
        record, fv = featurized_table_case()
        a = init_model(DIAG_CFG)
        b = init_model(DIAG_CFG)
        # force a to spotlight pair 0 event dims, b to spotlight pair 1
        a.w_attn[:] = -50.0
        a.w_attn[0:2] = 50.0
        b.w_attn[:] = -50.0
        b.w_attn[33:35] = 50.0
        fv.values[:] = 1.0
        comparisons = compare_models(a, b, [(record, fv)], k=2)
        c = comparisons[0]
        assert c.common == []
        assert len(c.unique_a) > 0 and len(c.unique_b) > 0

    def test_config_mismatch_rejected(self):
        record, fv = featurized_table_case()
        a = init_model(FULL_CFG)
        b = init_model(ModelConfig(input_dim=10, hidden1=4, hidden2=3))
        with pytest.raises(ImportanceConfigError):
            compare_models(a, b, [(record, fv)], k=3)
