"""Evaluation contracts: (task, metric, matching rule, scope, head family).

Two scores are comparable only when every one of the five components is
identical; :func:`comparable` checks this on the canonical JSON text.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DataError, InvalidFraction
from .grid import FireSet, LabelField, ScopeMask, _check_same
from .matching import EXACT, MatchingRule, Tolerated, Union, rule_from_dict
from .metrics import MetricSpec

HEAD_ORDER = ("ConstantPrior", "LinearProbe", "PixelMLP", "ShallowAdapter", "WideAdapter")


class TaskForm(str, Enum):
    Occupancy = "Occupancy"
    FireSpread = "FireSpread"
    BurnedArea = "BurnedArea"
    AnalogRetrieval = "AnalogRetrieval"
    SmokePM25 = "SmokePM25"
    ExtremeHeat = "ExtremeHeat"

    @property
    def task_class(self) -> str:
        return "primary" if self in (TaskForm.Occupancy, TaskForm.FireSpread) else "supporting"


SCOPE_SPEC_KINDS = ("global", "fire_prone", "spread_region", "test_events",
                    "test_stations", "heat_region_stations")


@dataclass(frozen=True)
class ScopeSpec:
    kind: str
    fraction: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCOPE_SPEC_KINDS:
            raise DataError(f"unknown scope kind {self.kind!r}")
        if self.kind == "fire_prone":
            if self.fraction is None or not (0 < self.fraction <= 1):
                raise InvalidFraction(f"fire-prone fraction must be in (0, 1], got {self.fraction}")
            object.__setattr__(self, "fraction", float(self.fraction))
        elif self.fraction is not None:
            raise DataError(f"scope {self.kind} takes no fraction")

    @classmethod
    def top(cls, percent: float) -> "ScopeSpec":
        return cls("fire_prone", percent / 100.0)

    @property
    def label(self) -> str:
        if self.kind == "fire_prone":
            return f"top{round(self.fraction * 100, 6):g}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "ScopeSpec":
        if text.startswith("top"):
            return cls.top(float(text[3:]))
        return cls(text)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.fraction is not None:
            d["fraction"] = self.fraction
        return d


@dataclass(frozen=True)
class HeadFamilySpec:
    allowed: tuple = HEAD_ORDER
    train_config: str = "default"

    def __post_init__(self):
        allowed = tuple(self.allowed)
        if not allowed:
            raise DataError("head family must be non-empty")
        unknown = set(allowed) - set(HEAD_ORDER)
        if unknown:
            raise DataError(f"unknown head kinds {sorted(unknown)}")
        # canonical order so that equal families compare equal
        object.__setattr__(self, "allowed", tuple(h for h in HEAD_ORDER if h in allowed))

    def to_dict(self) -> dict:
        return {"allowed": list(self.allowed), "train_config": self.train_config}


@dataclass(frozen=True)
class Contract:
    task: TaskForm
    metric: MetricSpec
    matching: Optional[MatchingRule]
    scope: ScopeSpec
    head_family: HeadFamilySpec

    def __post_init__(self):
        object.__setattr__(self, "task", TaskForm(self.task))

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "metric": self.metric.to_dict(),
            "matching": None if self.matching is None else self.matching.to_dict(),
            "scope": self.scope.to_dict(),
            "head_family": self.head_family.to_dict(),
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Contract":
        keys = {"task", "metric", "matching", "scope", "head_family"}
        if set(data) != keys:
            raise DataError(f"contract must have exactly the keys {sorted(keys)}, got {sorted(data)}")
        matching = data["matching"]
        scope = data["scope"]
        family = data["head_family"]
        return cls(
            TaskForm(data["task"]),
            MetricSpec.from_dict(data["metric"]),
            None if matching is None else rule_from_dict(matching),
            ScopeSpec(scope["kind"], scope.get("fraction")),
            HeadFamilySpec(tuple(family["allowed"]), family.get("train_config", "default")),
        )

    def replace(self, **changes) -> "Contract":
        fields = dict(task=self.task, metric=self.metric, matching=self.matching,
                      scope=self.scope, head_family=self.head_family)
        fields.update(changes)
        return Contract(**fields)

    def describe(self) -> str:
        rule = "none" if self.matching is None else str(self.matching)
        return f"{self.task.value}/{self.metric.id}/{rule}/{self.scope.label}"


def comparable(a: Contract, b: Contract) -> bool:
    """True iff all five contract components are identical."""
    return a.canonical() == b.canonical()


OCCUPANCY_K = 8
OCCUPANCY_UNION_DT = 3
SPREAD_K = 4
SMOKE_EXCEEDANCE = 35.0
HEAT_THRESHOLDS = (27.0, 30.0, 33.0)
HEAT_DEFAULT_THRESHOLD = 30.0
FIRE_PRONE_PERCENTS = (5, 10, 20)

OCCUPANCY_RULES = {
    "strict": EXACT,
    "tolerated": Tolerated(OCCUPANCY_K, 0),
    "union": Union((EXACT, Tolerated(OCCUPANCY_K, OCCUPANCY_UNION_DT))),
}
SPREAD_RULE = Tolerated(SPREAD_K, 0)


def builtin_contracts() -> list[Contract]:
    """One headline contract per task form, carrying the fixed parameters."""
    family = HeadFamilySpec()
    return [
        Contract(TaskForm.Occupancy,
                 MetricSpec.of("UnionF1", tau_rule="val_strict_f1"),
                 OCCUPANCY_RULES["union"], ScopeSpec("global"), family),
        Contract(TaskForm.FireSpread,
                 MetricSpec.of("SpatialF1", tau_rule="val_spatial_f1"),
                 SPREAD_RULE, ScopeSpec("spread_region"), family),
        Contract(TaskForm.BurnedArea,
                 MetricSpec.of("LogRMSE", log_base=10, validation="val_log_rmse"),
                 None, ScopeSpec("test_events"), family),
        Contract(TaskForm.AnalogRetrieval,
                 MetricSpec.of("NDCG10", k=10, validation="val_ndcg10"),
                 None, ScopeSpec("test_events"), family),
        Contract(TaskForm.SmokePM25,
                 MetricSpec.of("RMSE", exceedance=SMOKE_EXCEEDANCE, validation="val_rmse"),
                 None, ScopeSpec("test_stations"), family),
        Contract(TaskForm.ExtremeHeat,
                 MetricSpec.of("RMSEC", exceedance=HEAT_DEFAULT_THRESHOLD,
                               threshold_set=HEAT_THRESHOLDS),
                 None, ScopeSpec("heat_region_stations"), family),
    ]


def builtin_contract(task) -> Contract:
    task = TaskForm(task)
    return next(c for c in builtin_contracts() if c.task is task)


def contract_variants(task) -> list[Contract]:
    """Every (metric, rule, scope) contract reported for a task form."""
    base = builtin_contract(task)
    task = base.task
    if task is TaskForm.Occupancy:
        out = []
        for scope in [ScopeSpec("global")] + [ScopeSpec.top(p) for p in FIRE_PRONE_PERCENTS]:
            for metric_id, name in (("ExactF1", "strict"), ("ToleratedF1", "tolerated"),
                                    ("UnionF1", "union")):
                out.append(base.replace(metric=MetricSpec(metric_id, params=base.metric.params),
                                        matching=OCCUPANCY_RULES[name], scope=scope))
        return out
    if task is TaskForm.FireSpread:
        return [base.replace(metric=MetricSpec("ExactF1", params=base.metric.params),
                             matching=EXACT),
                base,
                base.replace(metric=MetricSpec("AP"), matching=None)]
    ids = {
        TaskForm.BurnedArea: ("LogRMSE", "LogMAE", "SpearmanRho"),
        TaskForm.AnalogRetrieval: ("NDCG10",),
        TaskForm.SmokePM25: ("RMSE", "MAE", "PearsonR", "ExceedanceF1"),
        TaskForm.ExtremeHeat: ("RMSEC", "MAEC", "ExceedanceF1"),
    }[task]
    return [base.replace(metric=MetricSpec(m, params=base.metric.params)) for m in ids]


def derive_fire_prone_scope(train_labels: LabelField, fraction: float) -> ScopeMask:
    """Top ``fraction`` of spatial cells by training-period fire frequency.

    Frequency counts time steps with a positive label. Ties at the cutoff
    go to the lexicographically smallest ``(row, col)``.
    """
    if not (0 < fraction <= 1) or not math.isfinite(fraction):
        raise InvalidFraction(f"fraction must be in (0, 1], got {fraction}")
    spec = train_labels.spec
    freq = train_labels.values.sum(axis=0, dtype=np.int64).ravel()
    n_keep = math.ceil(round(fraction * spec.n_spatial, 9))
    # stable sort on -freq keeps row-major order inside each frequency level
    keep = np.argsort(-freq, kind="stable")[:n_keep]
    cells = np.zeros(spec.n_spatial, dtype=bool)
    cells[keep] = True
    return ScopeMask(spec, "fire_prone", cells.reshape(spec.n_rows, spec.n_cols), float(fraction))


def spread_region_scope(pred_region: FireSet, obs_region: FireSet) -> ScopeMask:
    """Spatial union of the predicted and observed burned-region footprints."""
    _check_same(pred_region.spec, obs_region.spec)
    spec = pred_region.spec
    cells = np.zeros((spec.n_rows, spec.n_cols), dtype=bool)
    for region in (pred_region, obs_region):
        if len(region):
            cells[region.members[:, 1], region.members[:, 2]] = True
    return ScopeMask(spec, "spread_region", cells)


@dataclass(frozen=True)
class RankedEntry:
    rank: int
    name: str
    score: float


def rank_within_contract(entries: Sequence[tuple], metric: Optional[MetricSpec] = None
                         ) -> list[RankedEntry]:
    """1-based ranks of ``(name, score[, contract])`` entries.

    When entries carry contracts they must all be comparable, and ``metric``
    defaults to the shared contract's metric. Ties go to the smaller name.
    """
    contracts = [e[2] for e in entries if len(e) > 2]
    if contracts:
        if len(contracts) != len(entries):
            raise ContractViolation("some entries carry a contract and some do not")
        first = contracts[0]
        for c in contracts[1:]:
            if not comparable(first, c):
                raise ContractViolation(
                    f"cannot rank {first.describe()} against {c.describe()}")
        if metric is None:
            metric = first.metric
        elif metric != first.metric:
            raise ContractViolation("ranking metric differs from the entries' contract metric")
    if metric is None:
        raise DataError("a metric is needed to rank entries without contracts")
    sign = -1.0 if metric.higher_is_better else 1.0
    ordered = sorted(entries, key=lambda e: (sign * float(e[1]), e[0]))
    return [RankedEntry(i + 1, e[0], float(e[1])) for i, e in enumerate(ordered)]
