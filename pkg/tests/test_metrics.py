import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from firecontract.errors import DataError, InvalidArea, NoPositives, UndefinedCorrelation
from firecontract.grid import GridSpec, LabelField, OutputRecord, ScoreField, global_scope
from firecontract.matching import EXACT, Tolerated, decision_f1
from firecontract.metrics import (EventTable, MetricSpec, StationSeries, analog_relevance,
                                  analog_retrieval_scores, average_precision,
                                  burned_area_scores, default_candidates, exceedance_f1,
                                  f1_curve, log_error_metrics, mae, ndcg_at_k, pearson_r,
                                  pr_auc, rmse, select_threshold, spearman_rho,
                                  station_scores)
from firecontract.synth import generate_event_table

sklearn_metrics = pytest.importorskip("sklearn.metrics")


# ---------------------------------------------------------------- ranking

def test_ap_hand_values():
    assert average_precision([0.9, 0.1, 0.2], [1, 0, 0]) == 1.0
    # ranks: pos, neg, pos -> (1/1 + 2/3) / 2
    assert average_precision([0.9, 0.5, 0.3], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert pr_auc([0.9, 0.5, 0.3], [1, 0, 1]) == average_precision([0.9, 0.5, 0.3], [1, 0, 1])


def test_ap_constant_scores_equal_prevalence():
    y = np.array([1, 0, 0, 1, 0, 0, 0, 0])
    assert average_precision(np.zeros(8), y) == pytest.approx(y.mean())


def test_ap_ties_independent_of_order():
    s = np.array([0.5, 0.5, 0.5, 0.2, 0.9])
    y = np.array([0, 1, 0, 1, 1])
    perm = np.array([2, 0, 4, 1, 3])
    assert average_precision(s, y) == average_precision(s[perm], y[perm])


def test_ap_no_positives():
    with pytest.raises(NoPositives):
        average_precision([0.1, 0.2], [0, 0])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.booleans())
def test_ap_matches_sklearn(seed, n, coarse):
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.3
    y[0] = True
    s = rng.integers(0, 4, size=n) if coarse else rng.random(n)
    expected = sklearn_metrics.average_precision_score(y, s)
    assert average_precision(s, y) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_invariant_to_monotone_rescaling(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=40)
    y = rng.random(40) < 0.3
    y[0] = True
    assert average_precision(s, y) == average_precision(np.exp(3 * s) + 1, y)


def test_ndcg_hand_values():
    assert ndcg_at_k([0, 1, 0], [1, 0, 0], 3) == pytest.approx(1 / math.log2(3), abs=1e-12)
    assert ndcg_at_k([1, 0, 0], [1, 0, 0], 3) == 1.0
    assert ndcg_at_k([0, 0], [0, 0], 2) == 0.0
    with pytest.raises(DataError):
        ndcg_at_k([1], [1], 0)


def test_ndcg_matches_sklearn():
    rng = np.random.default_rng(4)
    for _ in range(20):
        rel = rng.random(15)
        score = rng.random(15)
        order = np.argsort(-score)
        ours = ndcg_at_k(rel[order], np.sort(rel)[::-1], 10)
        ref = sklearn_metrics.ndcg_score(rel[None], score[None], k=10)
        assert ours == pytest.approx(ref, abs=1e-12)


# ------------------------------------------------------------ correlation

def test_spearman_hand_value():
    assert spearman_rho([1, 2, 3, 4], [2, 1, 4, 3]) == 0.6


def test_correlation_against_scipy():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.normal(size=30)
        y = x + rng.normal(size=30)
        y[::5] = y[0]  # ties
        assert pearson_r(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)
        assert spearman_rho(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-12)


def test_pearson_stable_with_large_offset():
    x = 1e9 + np.array([1.0, 2.0, 3.0, 4.0])
    y = np.array([2.0, 4.0, 6.0, 8.0])
    assert pearson_r(x, y) == pytest.approx(1.0, abs=1e-12)


def test_correlation_undefined():
    with pytest.raises(UndefinedCorrelation):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelation):
        spearman_rho([1, 2, 3], [5, 5, 5])


# ------------------------------------------------------------- regression

def test_rmse_mae():
    assert rmse([1, 2, 3], [1, 2, 5]) == pytest.approx(math.sqrt(4 / 3))
    assert mae([1, 2, 3], [1, 2, 5]) == pytest.approx(2 / 3)


def test_log_errors():
    r, m, med = log_error_metrics([10, 100, 1000], [100, 100, 100])
    assert (r, m, med) == pytest.approx((math.sqrt(2 / 3), 2 / 3, 1.0))
    r2, _, _ = log_error_metrics([10, 100, 1000], [100, 100, 100], base=math.e)
    assert r2 == pytest.approx(r * math.log(10))
    with pytest.raises(InvalidArea):
        log_error_metrics([0, 1], [1, 1])


def test_exceedance_f1_inclusive_threshold():
    f1, p, r = exceedance_f1([35, 20, 40, 50], [35, 40, 10, 60], 35)
    # pred events {0,2,3}, obs events {0,1,3}: tp 2, fp 1, fn 1
    assert (f1, p, r) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    assert exceedance_f1([1, 2], [1, 2], 100) == (0.0, 0.0, 0.0)


def test_station_scores_identity():
    s = StationSeries(np.array(["a", "a"]), np.array([0, 1]), np.array([10.0, 50.0]),
                      np.array([10.0, 50.0]))
    out = station_scores(s, 35)
    assert out["RMSE"] == 0 and out["ExceedanceF1"] == 1.0 and out["PearsonR"] == 1.0


def test_burned_area_noise_free_is_exact():
    out = burned_area_scores(generate_event_table(100, seed=2, noise=0.0))
    assert out["LogRMSE"] == pytest.approx(0.0, abs=1e-9)
    assert out["SpearmanRho"] == pytest.approx(1.0)


def test_retrieval_noise_free_is_perfect():
    out = analog_retrieval_scores(generate_event_table(60, seed=3, noise=0.0))
    assert out["NDCG10"] == pytest.approx(1.0, abs=1e-12)


def test_analog_relevance():
    assert analog_relevance(100.0, np.array([100.0, 1000.0, 1.0])).tolist() == \
        pytest.approx([1.0, 0.5, 1 / 3])


def test_event_table_validation():
    with pytest.raises(InvalidArea):
        EventTable(("a",), [[1.0]], [0.0], ("train",))
    with pytest.raises(DataError):
        EventTable(("a", "a"), [[1.0], [2.0]], [1.0, 2.0], ("train", "test"))
    with pytest.raises(DataError):
        EventTable(("a",), [[1.0]], [1.0], ("holdout",))


# ------------------------------------------------------------- thresholds

def _record(seed=0):
    rng = np.random.default_rng(seed)
    spec = GridSpec(4, 12, 12)
    y = rng.random(spec.shape) < 0.05
    s = y * 0.6 + rng.random(spec.shape) * 0.5
    return OutputRecord(ScoreField(spec, s), LabelField(spec, y))


def test_f1_curve_matches_decision_f1():
    rec = _record()
    scope = global_scope(rec.spec)
    cand = default_candidates(rec.scores.values, 32)
    for rule in (EXACT, Tolerated(2, 1)):
        curve = f1_curve(rec, scope, rule, cand)
        direct = [decision_f1(rec, float(t), rule, scope) for t in cand]
        assert np.allclose(curve, direct, rtol=0, atol=0)


def test_select_threshold_is_argmax_with_smallest_tie():
    rec = _record(1)
    scope = global_scope(rec.spec)
    tau = select_threshold(rec, scope, EXACT)
    cand = default_candidates(rec.scores.values)
    best = max(decision_f1(rec, float(t), EXACT, scope) for t in cand)
    assert decision_f1(rec, tau, EXACT, scope) == best
    # a plateau of equal F1 resolves to its smallest threshold
    spec = GridSpec(1, 1, 4)
    flat = OutputRecord(ScoreField(spec, [0.9, 0.8, 0.1, 0.2]), LabelField(spec, [1, 1, 0, 0]))
    assert select_threshold(flat, global_scope(spec), EXACT, [0.5, 0.6, 0.7, 0.8]) == 0.5


def test_metric_spec():
    m = MetricSpec.of("LogRMSE", log_base=10)
    assert not m.higher_is_better and m.param("log_base") == 10
    assert MetricSpec.from_dict(m.to_dict()) == m
    with pytest.raises(DataError):
        MetricSpec("Accuracy")
    with pytest.raises(DataError):
        MetricSpec("RMSE", "higher")
