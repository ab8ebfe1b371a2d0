"""Exact, tolerated and union matching of predicted against observed fire sets.

Two independent routes produce :class:`MatchCounts`:

* :func:`dilated_counts` dilates one boolean volume by the rule's
  neighbourhood and intersects it with the other (fast, O(cells)).
* :func:`brute_force_counts` scans every (prediction, observation) pair
  with :func:`match_predicate` semantics (slow oracle).

Counting is one-sided: a prediction is a true positive if *any* observation
matches it, and an observation is a false negative if *no* prediction
matches it. TP can therefore exceed the number of observations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union as _U

import numpy as np

from .errors import DataError
from .grid import (FireSet, OutputRecord, ScopeMask, _check_same, observed_mask,
                   predicted_mask)


@dataclass(frozen=True)
class Exact:
    def to_dict(self) -> dict:
        return {"kind": "exact"}

    def __str__(self) -> str:
        return "exact"


@dataclass(frozen=True)
class Tolerated:
    """Chebyshev radius ``k`` in grid cells and ``dt`` forecast steps."""

    k: int
    dt: int = 0

    def __post_init__(self):
        if self.k < 0 or self.dt < 0 or int(self.k) != self.k or int(self.dt) != self.dt:
            raise DataError("tolerances must be non-negative integers")

    def to_dict(self) -> dict:
        return {"kind": "tolerated", "k": int(self.k), "dt": int(self.dt)}

    def __str__(self) -> str:
        return f"tolerated(k={self.k},dt={self.dt})"


@dataclass(frozen=True)
class Union:
    rules: tuple

    def __post_init__(self):
        rules = tuple(self.rules)
        if not rules:
            raise DataError("a union rule needs at least one member rule")
        object.__setattr__(self, "rules", rules)

    def to_dict(self) -> dict:
        return {"kind": "union", "rules": [r.to_dict() for r in self.rules]}

    def __str__(self) -> str:
        return "union{" + ",".join(str(r) for r in self.rules) + "}"


MatchingRule = _U[Exact, Tolerated, Union]

EXACT = Exact()


def rule_from_dict(data: dict) -> MatchingRule:
    kind = data.get("kind")
    if kind == "exact":
        return EXACT
    if kind == "tolerated":
        return Tolerated(int(data["k"]), int(data.get("dt", 0)))
    if kind == "union":
        return Union(tuple(rule_from_dict(r) for r in data["rules"]))
    raise DataError(f"unknown matching rule {data!r}")


def parse_rule(text: str, k: int = 8, dt: int = 3) -> MatchingRule:
    """Parse the CLI shorthands ``strict``, ``tolerated`` and ``union``.

    ``tolerated`` is spatial-only (``dt=0``); ``union`` is exact OR
    ``Tolerated(k, dt)``. Explicit forms like ``tolerated:4:0`` are accepted.
    """
    name, *args = text.strip().split(":")
    if name in ("strict", "exact"):
        return EXACT
    if name == "tolerated":
        kk, tt = (int(a) for a in args) if args else (k, 0)
        return Tolerated(kk, tt)
    if name == "union":
        kk, tt = (int(a) for a in args) if args else (k, dt)
        return Union((EXACT, Tolerated(kk, tt)))
    raise DataError(f"unknown rule {text!r}")


def _leaves(rule: MatchingRule):
    if isinstance(rule, Union):
        for r in rule.rules:
            yield from _leaves(r)
    else:
        yield rule


def match_predicate(p, o, rule: MatchingRule) -> bool:
    """Whether predicted triple ``p`` matches observed triple ``o``."""
    dt = abs(p[0] - o[0])
    ds = max(abs(p[1] - o[1]), abs(p[2] - o[2]))
    for leaf in _leaves(rule):
        if isinstance(leaf, Exact):
            if dt == 0 and ds == 0:
                return True
        elif ds <= leaf.k and dt <= leaf.dt:
            return True
    return False


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn_: int
    predicted_total: int
    observed_total: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn_) < 0:
            raise DataError("counts must be non-negative")
        if self.tp + self.fp != self.predicted_total:
            raise DataError("tp + fp must equal the predicted total")
        if self.fn_ > self.observed_total:
            raise DataError("fn cannot exceed the observed total")


def f1_from_counts(c: MatchCounts) -> float:
    """``2TP / (2TP + FP + FN)``; 0.0 when nothing was predicted or observed."""
    denom = 2 * c.tp + c.fp + c.fn_
    return 0.0 if denom == 0 else 2.0 * c.tp / denom


def brute_force_counts(pred: FireSet, obs: FireSet, rule: MatchingRule,
                       chunk: int = 2048) -> MatchCounts:
    """Pairwise O(|pred| * |obs|) reference implementation."""
    _check_same(pred.spec, obs.spec)
    P, O = pred.members, obs.members
    pred_hit = np.zeros(len(P), dtype=bool)
    obs_hit = np.zeros(len(O), dtype=bool)
    leaves = list(_leaves(rule))
    for start in range(0, len(P), chunk):
        block = P[start:start + chunk]
        dt = np.abs(block[:, None, 0] - O[None, :, 0])
        ds = np.maximum(np.abs(block[:, None, 1] - O[None, :, 1]),
                        np.abs(block[:, None, 2] - O[None, :, 2]))
        hit = np.zeros(dt.shape, dtype=bool)
        for leaf in leaves:
            if isinstance(leaf, Exact):
                hit |= (dt == 0) & (ds == 0)
            else:
                hit |= (ds <= leaf.k) & (dt <= leaf.dt)
        pred_hit[start:start + chunk] = hit.any(axis=1)
        obs_hit |= hit.any(axis=0)
    tp = int(pred_hit.sum())
    return MatchCounts(tp=tp, fp=len(P) - tp, fn_=int((~obs_hit).sum()),
                       predicted_total=len(P), observed_total=len(O))


def _dilate_axis(mask: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Running OR over a centred window of ``2*radius + 1`` along ``axis``.

    Window widths grow by doubling, so the cost is O(cells * log(radius)).
    """
    if radius == 0:
        return mask
    n = mask.shape[axis]
    width = 2 * radius + 1
    pad = [(0, 0)] * mask.ndim
    pad[axis] = (radius, radius)
    buf = np.pad(mask, pad)
    index = [slice(None)] * mask.ndim
    covered = 1
    # invariant: buf[i] holds OR of the original buf[i : i + covered]
    while covered < width:
        step = min(covered, width - covered)
        index[axis] = slice(0, buf.shape[axis] - step)
        lo = buf[tuple(index)]
        index[axis] = slice(step, None)
        np.logical_or(lo, buf[tuple(index)], out=lo)
        covered += step
    index[axis] = slice(0, n)
    return buf[tuple(index)]


def dilate(mask: np.ndarray, rule: MatchingRule) -> np.ndarray:
    """Cells of a ``(t, row, col)`` volume that match at least one set cell."""
    out = None
    for leaf in _leaves(rule):
        if isinstance(leaf, Exact):
            grown = mask
        else:
            grown = _dilate_axis(mask, leaf.dt, 0)
            grown = _dilate_axis(grown, leaf.k, 1)
            grown = _dilate_axis(grown, leaf.k, 2)
        out = grown.copy() if out is None else np.logical_or(out, grown, out=out)
    return out


def mask_counts(pred: np.ndarray, obs: np.ndarray, rule: MatchingRule) -> MatchCounts:
    """Dilation-based counts for two boolean volumes of identical shape."""
    if pred.shape != obs.shape:
        raise DataError("prediction and observation volumes differ in shape")
    n_pred = int(np.count_nonzero(pred))
    n_obs = int(np.count_nonzero(obs))
    if n_pred == 0 or n_obs == 0:
        return MatchCounts(0, n_pred, n_obs, n_pred, n_obs)
    tp = int(np.count_nonzero(pred & dilate(obs, rule)))
    # the predicate is symmetric, so dilating predictions finds matched observations
    matched_obs = int(np.count_nonzero(obs & dilate(pred, rule)))
    return MatchCounts(tp=tp, fp=n_pred - tp, fn_=n_obs - matched_obs,
                       predicted_total=n_pred, observed_total=n_obs)


def dilated_counts(pred: FireSet, obs: FireSet, rule: MatchingRule) -> MatchCounts:
    _check_same(pred.spec, obs.spec)
    return mask_counts(pred.to_mask(), obs.to_mask(), rule)


def decision_counts(record: OutputRecord, tau: float, rule: MatchingRule,
                    scope: ScopeMask) -> MatchCounts:
    return mask_counts(predicted_mask(record, tau, scope),
                       observed_mask(record.labels, scope), rule)


def decision_f1(record: OutputRecord, tau: float, rule: MatchingRule,
                scope: ScopeMask) -> float:
    """Threshold, restrict both sets to ``scope``, match and score F1."""
    return f1_from_counts(decision_counts(record, tau, rule, scope))
