"""Ranking, regression, correlation, retrieval and exceedance metrics.

Scalar accumulation is done in float64 regardless of input precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (DataError, InvalidArea, NoCandidates, NoPositives,
                     UndefinedCorrelation)
from .grid import OutputRecord, ScopeMask, _check_scope
from .matching import (EXACT, MatchCounts, MatchingRule, dilate, f1_from_counts)

HIGHER = "higher"
LOWER = "lower"

METRIC_DIRECTIONS = {
    "ExactF1": HIGHER,
    "ToleratedF1": HIGHER,
    "UnionF1": HIGHER,
    "SpatialF1": HIGHER,
    "AP": HIGHER,
    "PRAUC": HIGHER,
    "NDCG10": HIGHER,
    "SpearmanRho": HIGHER,
    "PearsonR": HIGHER,
    "ExceedanceF1": HIGHER,
    "LogRMSE": LOWER,
    "LogMAE": LOWER,
    "RMSE": LOWER,
    "MAE": LOWER,
    "RMSEC": LOWER,
    "MAEC": LOWER,
}


@dataclass(frozen=True)
class MetricSpec:
    """A metric identifier, its optimisation direction and fixed parameters.

    ``params`` is stored as a sorted tuple of ``(key, value)`` pairs so that
    specs hash and compare by value.
    """

    id: str
    direction: str = ""
    params: tuple = ()

    def __post_init__(self):
        if self.id not in METRIC_DIRECTIONS:
            raise DataError(f"unknown metric {self.id!r}")
        expected = METRIC_DIRECTIONS[self.id]
        if not self.direction:
            object.__setattr__(self, "direction", expected)
        elif self.direction != expected:
            raise DataError(f"{self.id} is {expected}-is-better, not {self.direction}")
        params = dict(self.params)
        object.__setattr__(self, "params", tuple(sorted(
            (k, tuple(v) if isinstance(v, list) else v) for k, v in params.items())))

    @classmethod
    def of(cls, id: str, **params) -> "MetricSpec":
        return cls(id, params=tuple(params.items()))

    def param(self, key, default=None):
        return dict(self.params).get(key, default)

    @property
    def higher_is_better(self) -> bool:
        return self.direction == HIGHER

    def to_dict(self) -> dict:
        return {"id": self.id, "direction": self.direction,
                "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params}}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricSpec":
        return cls(data["id"], data.get("direction", ""),
                   tuple(data.get("params", {}).items()))


# --------------------------------------------------------------------------
# ranking


def average_precision(scores, labels) -> float:
    """Step-interpolated average precision, ``sum_n (R_n - R_{n-1}) P_n``.

    Tied scores form one operating point: the whole tie group enters the
    ranked list together, so the result does not depend on input order.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of every tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y, dtype=np.int64)[ends]
    precision = tp / (ends + 1.0)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def pr_auc(scores, labels) -> float:
    """PR-AUC, defined here as step-interpolated average precision."""
    return average_precision(scores, labels)


def ndcg_at_k(retrieved_relevances, ideal_relevances, k: int = 10) -> float:
    """Normalised DCG with ``rel_j / log2(j + 1)`` gains; 0.0 when IDCG is 0."""
    if k < 1:
        raise DataError("k must be at least 1")
    got = np.asarray(retrieved_relevances, dtype=np.float64)[:k]
    ideal = np.asarray(ideal_relevances, dtype=np.float64)[:k]
    if (got < 0).any() or (ideal < 0).any():
        raise DataError("relevances must be non-negative")
    idcg = np.sum(ideal / np.log2(np.arange(2, len(ideal) + 2)))
    if idcg == 0:
        return 0.0
    dcg = np.sum(got / np.log2(np.arange(2, len(got) + 2)))
    return float(dcg / idcg)


# --------------------------------------------------------------------------
# correlation / regression


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError("inputs differ in length")
    return x, y


def pearson_r(x, y) -> float:
    x, y = _paired(x, y)
    if len(x) < 2:
        raise UndefinedCorrelation("correlation needs at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("correlation is undefined for constant input")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    x, y = _paired(x, y)
    return pearson_r(rankdata(x), rankdata(y))


def rmse(pred, obs) -> float:
    p, o = _paired(pred, obs)
    if not len(p):
        raise DataError("empty input")
    return float(np.sqrt(np.mean((p - o) ** 2)))


def mae(pred, obs) -> float:
    p, o = _paired(pred, obs)
    if not len(p):
        raise DataError("empty input")
    return float(np.mean(np.abs(p - o)))


def log_error_metrics(pred_acres, true_acres, base: float = 10.0) -> tuple[float, float, float]:
    """(log-RMSE, log-MAE, log-median-AE) between areas in log space."""
    p, t = _paired(pred_acres, true_acres)
    if not len(p):
        raise DataError("empty input")
    if (p <= 0).any() or (t <= 0).any():
        raise InvalidArea("burned areas must be positive")
    err = np.abs(np.log(p) - np.log(t)) / np.log(base)
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(err)), float(np.median(err))


def exceedance_f1(pred, obs, threshold: float) -> tuple[float, float, float]:
    """Pointwise F1, precision and recall of ``value >= threshold`` events."""
    p, o = _paired(pred, obs)
    pe, oe = p >= threshold, o >= threshold
    tp = int(np.sum(pe & oe))
    fp = int(np.sum(pe & ~oe))
    fn = int(np.sum(~pe & oe))
    f1 = f1_from_counts(MatchCounts(tp, fp, fn, tp + fp, tp + fn))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return f1, precision, recall


# --------------------------------------------------------------------------
# threshold selection


def default_candidates(values: np.ndarray, n_quantiles: int = 512) -> np.ndarray:
    """Quantile-spaced observed score values plus the min and max."""
    v = np.asarray(values, dtype=np.float32).ravel()
    if not len(v):
        raise NoCandidates("no in-scope scores to draw thresholds from")
    q = np.quantile(v, np.linspace(0.0, 1.0, n_quantiles), method="lower")
    return np.unique(np.concatenate([q, [v.min(), v.max()]]).astype(np.float32))


def f1_curve(record: OutputRecord, scope: ScopeMask, rule: MatchingRule,
             candidates) -> np.ndarray:
    """Decision F1 at every candidate threshold; observations dilate once."""
    _check_scope(scope, record.spec)
    obs = record.labels.values & scope.cells
    n_obs = int(obs.sum())
    obs_grown = dilate(obs, rule) if n_obs else obs
    in_scope = np.where(scope.cells, record.scores.values, -np.inf)
    out = np.empty(len(candidates), dtype=np.float64)
    for i, tau in enumerate(candidates):
        pred = in_scope >= tau
        n_pred = int(pred.sum())
        if n_pred == 0 or n_obs == 0:
            c = MatchCounts(0, n_pred, n_obs, n_pred, n_obs)
        else:
            tp = int(np.count_nonzero(pred & obs_grown))
            hit = int(np.count_nonzero(obs & dilate(pred, rule)))
            c = MatchCounts(tp, n_pred - tp, n_obs - hit, n_pred, n_obs)
        out[i] = f1_from_counts(c)
    return out


def select_threshold(record: OutputRecord, val_scope: ScopeMask,
                     rule: MatchingRule = EXACT, candidates: Optional[Sequence[float]] = None,
                     n_quantiles: int = 512) -> float:
    """Candidate threshold with the highest validation F1 under ``rule``.

    ``record`` is the validation slice. Ties go to the smallest threshold.
    """
    if candidates is None:
        _check_scope(val_scope, record.spec)
        candidates = default_candidates(
            record.scores.values[np.broadcast_to(val_scope.cells, record.spec.shape)],
            n_quantiles)
    cand = np.unique(np.asarray(candidates, dtype=np.float64))
    if not len(cand):
        raise NoCandidates("empty threshold candidate set")
    curve = f1_curve(record, val_scope, rule, cand)
    # np.argmax returns the first maximum, i.e. the smallest threshold
    return float(cand[int(np.argmax(curve))])


# --------------------------------------------------------------------------
# event tables and station series

SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class EventTable:
    event_ids: tuple
    features: np.ndarray = field(repr=False)
    burned_area_acres: np.ndarray = field(repr=False)
    splits: tuple = ()

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        areas = np.asarray(self.burned_area_acres, dtype=np.float64).ravel()
        n = len(self.event_ids)
        if feats.shape[0] != n or len(areas) != n or len(self.splits) != n:
            raise DataError("event table columns differ in length")
        if len(set(self.event_ids)) != n:
            raise DataError("event ids must be unique")
        if (areas <= 0).any():
            raise InvalidArea("burned areas must be positive")
        if set(self.splits) - set(SPLITS):
            raise DataError(f"splits must be one of {SPLITS}")
        object.__setattr__(self, "event_ids", tuple(self.event_ids))
        object.__setattr__(self, "splits", tuple(self.splits))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "burned_area_acres", areas)

    def __len__(self) -> int:
        return len(self.event_ids)

    def subset(self, split: str) -> "EventTable":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return EventTable(tuple(self.event_ids[i] for i in idx), self.features[idx],
                          self.burned_area_acres[idx], tuple(split for _ in idx))


def fit_log_area_regressor(train: EventTable) -> np.ndarray:
    """Least-squares weights (with trailing intercept) for log10 area."""
    X = np.column_stack([train.features, np.ones(len(train))])
    w, *_ = np.linalg.lstsq(X, np.log10(train.burned_area_acres), rcond=None)
    return w


def predict_area(weights: np.ndarray, table: EventTable) -> np.ndarray:
    X = np.column_stack([table.features, np.ones(len(table))])
    return 10.0 ** (X @ weights)


def burned_area_scores(table: EventTable) -> dict:
    """Fit on train events, score test events."""
    w = fit_log_area_regressor(table.subset("train"))
    test = table.subset("test")
    pred = predict_area(w, test)
    log_rmse, log_mae, log_medae = log_error_metrics(pred, test.burned_area_acres)
    return {"LogRMSE": log_rmse, "LogMAE": log_mae, "LogMedianAE": log_medae,
            "SpearmanRho": spearman_rho(pred, test.burned_area_acres)}


def analog_relevance(query_area: float, candidate_areas: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.abs(np.log10(query_area) - np.log10(candidate_areas)))


def analog_retrieval_scores(table: EventTable, k: int = 10) -> dict:
    """Leave-one-out analog retrieval over ``table``.

    Each event queries all others; candidates are ranked by Euclidean
    feature distance. Returns mean nDCG@k and the mean absolute log10 area
    error of the top-k retrieved events.
    """
    n = len(table)
    if n < 2:
        raise DataError("retrieval needs at least two events")
    X, a = table.features, table.burned_area_acres
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    ndcgs, log_errs = [], []
    for q in range(n):
        others = np.delete(np.arange(n), q)
        ranked = others[np.argsort(d[q, others], kind="stable")]
        rel = analog_relevance(a[q], a[ranked])
        ndcgs.append(ndcg_at_k(rel, np.sort(rel)[::-1], k))
        top = ranked[:k]
        log_errs.append(np.mean(np.abs(np.log10(a[q]) - np.log10(a[top]))))
    return {"NDCG10": float(np.mean(ndcgs)), "RetrievedLogError": float(np.mean(log_errs))}


@dataclass(frozen=True, eq=False)
class StationSeries:
    station_ids: np.ndarray = field(repr=False)
    time_index: np.ndarray = field(repr=False)
    observed: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)
    unit: str = "ug/m3"

    def __post_init__(self):
        cols = [np.asarray(c).ravel() for c in
                (self.station_ids, self.time_index, self.observed, self.predicted)]
        if len({len(c) for c in cols}) != 1:
            raise DataError("station series columns differ in length")
        obs = cols[2].astype(np.float64)
        pred = cols[3].astype(np.float64)
        if not (np.isfinite(obs).all() and np.isfinite(pred).all()):
            raise DataError("station values must be finite")
        object.__setattr__(self, "station_ids", cols[0])
        object.__setattr__(self, "time_index", cols[1].astype(np.int64))
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "predicted", pred)

    def __len__(self) -> int:
        return len(self.observed)


def station_scores(series: StationSeries, threshold: float) -> dict:
    """RMSE, MAE, Pearson r and exceedance F1/precision/recall."""
    f1, precision, recall = exceedance_f1(series.predicted, series.observed, threshold)
    return {"RMSE": rmse(series.predicted, series.observed),
            "MAE": mae(series.predicted, series.observed),
            "PearsonR": pearson_r(series.predicted, series.observed),
            "ExceedanceF1": f1, "ExceedancePrecision": precision,
            "ExceedanceRecall": recall}
