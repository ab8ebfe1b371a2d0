"""Controlled checks: fixed-output rule sweeps and fixed-feature selection audits.

Reports keep F1 values as fractions; percentages appear only when a report
is rendered (see :mod:`firecontract.io`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .contracts import (OCCUPANCY_RULES, Contract, ScopeSpec, builtin_contract, comparable,
                        derive_fire_prone_scope, rank_within_contract)
from .errors import ContractViolation, DataError, EmptyInput
from .grid import (LabelField, OutputRecord, ScopeMask, TimeSplit, global_scope,
                   observed_mask, predicted_mask)
from .heads import (Candidate, DecisionF1, RankingPRAUC, TrainConfig, head_record,
                    selection_regret, train_head)
from .matching import EXACT, MatchingRule, f1_from_counts, mask_counts
from .metrics import MetricSpec

SWEEP_COLUMNS = ("strict", "tolerated", "union")
SWEEP_METRICS = {"strict": "ExactF1", "tolerated": "ToleratedF1", "union": "UnionF1"}

ENGINE_CONVENTIONS = {
    "ap_definition": "step_interpolated_tie_grouped",
    "f1_empty": 0.0,
    "counting": "one_sided",
    "scope_applied": "before_matching",
    "log_base": 10,
    "class_weights": "balanced",
    "threshold_tie_break": "smallest",
    "head_tie_break": list(("ConstantPrior", "LinearProbe", "PixelMLP",
                            "ShallowAdapter", "WideAdapter")),
    "fire_prone_tie_break": "lexicographic_row_col",
    "std": "sample_n_minus_1",
}


@dataclass(frozen=True)
class SeedStat:
    mean: float
    std: float
    n_seeds: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n_seeds": self.n_seeds}


def seed_aggregate(values: Sequence[float]) -> SeedStat:
    """Mean and sample standard deviation (n - 1 divisor, 0 for one value)."""
    v = np.asarray(list(values), dtype=np.float64)
    if not len(v):
        raise EmptyInput("nothing to aggregate")
    mean = float(v.mean())
    if len(v) == 1 or (v == v[0]).all():
        return SeedStat(mean, 0.0, len(v))
    return SeedStat(mean, float(v.std(ddof=1)), len(v))


@dataclass(frozen=True)
class SweepRow:
    backbone: str
    scope: str
    strict_f1: float
    tolerated_f1: float
    union_f1: float
    delta: float
    predicted_positive_rate: float

    def __post_init__(self):
        if abs(self.delta - (self.union_f1 - self.strict_f1)) > 1e-12:
            raise DataError("delta must equal union minus strict")


@dataclass(frozen=True)
class RegretRow:
    backbone: str
    scope: str
    rule: str
    mode: str
    stat: SeedStat
    per_seed: tuple
    ranking_choices: tuple
    decision_choices: tuple


@dataclass(frozen=True, eq=False)
class CheckReport:
    """Rows of one controlled check plus the contract and config they ran under.

    ``contract`` is the base contract; each row's full contract is that base
    with the row's scope (and, for sweeps, each column's matching rule)
    substituted, as returned by :meth:`row_contracts`.
    """

    kind: str
    contract: Contract
    rows: tuple
    config: dict = field(default_factory=dict)
    rules: dict = field(default_factory=dict)

    def row_contracts(self, row) -> dict[str, Contract]:
        scope = ScopeSpec.parse(row.scope)
        if self.kind == "sweep":
            return {col: self.contract.replace(
                        metric=MetricSpec(SWEEP_METRICS[col], params=self.contract.metric.params),
                        matching=self.rules[col], scope=scope)
                    for col in SWEEP_COLUMNS}
        contract = self.contract.replace(matching=self.rules[row.rule], scope=scope)
        if row.rule in SWEEP_METRICS:
            # a named occupancy rule carries its own F1 metric, as in sweeps
            contract = contract.replace(metric=MetricSpec(SWEEP_METRICS[row.rule],
                                                          params=self.contract.metric.params))
        return {row.mode: contract}

    def entries(self) -> list[tuple[str, float, Contract]]:
        """``(backbone, value, contract)`` for every reported number."""
        out = []
        for row in self.rows:
            for col, contract in self.row_contracts(row).items():
                if self.kind == "sweep":
                    out.append((row.backbone, getattr(row, f"{col}_f1"), contract))
                else:
                    out.append((row.backbone, row.stat.mean, contract))
        return out


def fixed_output_check(record: OutputRecord, tau: float, scopes: Sequence[ScopeMask],
                       rules: Optional[Mapping[str, MatchingRule]] = None,
                       backbone: str = "model", contract: Optional[Contract] = None,
                       config: Optional[dict] = None) -> CheckReport:
    """F1 of one fixed output record under each matching rule, per scope.

    Only the matching rule varies inside a row: the threshold, score field,
    label field and scope are shared, so the check is deterministic.
    """
    rules = dict(OCCUPANCY_RULES if rules is None else rules)
    if set(rules) != set(SWEEP_COLUMNS):
        raise DataError(f"sweep rules must be named {SWEEP_COLUMNS}")
    contract = contract or builtin_contract("Occupancy")
    rows = []
    for scope in scopes:
        pred = predicted_mask(record, tau, scope)
        obs = observed_mask(record.labels, scope)
        f1 = {name: f1_from_counts(mask_counts(pred, obs, rules[name])) for name in SWEEP_COLUMNS}
        ppr = float(pred.sum()) / scope.cell_count if scope.spatial_count else 0.0
        rows.append(SweepRow(backbone, scope.label, f1["strict"], f1["tolerated"], f1["union"],
                             f1["union"] - f1["strict"], ppr))
    cfg = {"tau": float(tau), **ENGINE_CONVENTIONS, **(config or {})}
    return CheckReport("sweep", contract, tuple(rows), cfg, rules)


def scope_for(spec: ScopeSpec, train_labels: LabelField) -> ScopeMask:
    """Materialise a grid scope; fire-prone masks come from training labels."""
    if spec.kind == "global":
        return global_scope(train_labels.spec)
    if spec.kind == "fire_prone":
        return derive_fire_prone_scope(train_labels, spec.fraction)
    raise DataError(f"scope {spec.kind} cannot be derived from a label grid")


def train_candidates(features: np.ndarray, labels: LabelField, split: TimeSplit,
                     allowed: Sequence[str], cfg: TrainConfig, seed: int,
                     scope: ScopeMask) -> list[Candidate]:
    """Train every allowed head on the train split (loss restricted to scope)."""
    x = np.asarray(features)
    tr, va, te = split.train, split.validation, split.test
    y_train = labels.values[tr.start:tr.stop]
    val_labels = labels.slice_times(va)
    test_labels = labels.slice_times(te) if len(te) else None
    out = []
    for kind in cfg.kinds(allowed):
        params = train_head(kind, x[tr.start:tr.stop], y_train, cfg, seed, mask=scope.cells)
        val_rec = head_record(params, x[va.start:va.stop], val_labels)
        test_rec = head_record(params, x[te.start:te.stop], test_labels) if test_labels else None
        out.append(Candidate(params, val_rec, test_rec))
    return out


def fixed_feature_check(features: np.ndarray, labels: LabelField, split: TimeSplit,
                        contract: Contract, cfg: TrainConfig,
                        rules: Optional[Mapping[str, MatchingRule]] = None,
                        tau_rule: Optional[MatchingRule] = None,
                        modes: Sequence[str] = ("same", "held_out"),
                        backbone: str = "model") -> CheckReport:
    """Selection regret of PR-AUC vs decision-F1 head selection over seeds.

    Per seed, every head in the contract's family is trained once on the
    fixed features; both selectors then choose from that same set.
    ``rules`` maps row names to decision matching rules (default: the
    contract's own rule). ``tau_rule`` fixes the threshold-selection rule.
    When it is ``None`` the contract metric's ``tau_rule`` parameter decides:
    ``"val_strict_f1"`` means exact matching, anything else means each
    decision rule selects its own threshold.
    """
    if contract.matching is None and rules is None:
        raise DataError("fixed-feature checks need a matching rule")
    rules = dict(rules or {"contract": contract.matching})
    if tau_rule is None and contract.metric.param("tau_rule") == "val_strict_f1":
        tau_rule = EXACT
    if features.shape[0] != labels.spec.n_times:
        raise DataError("features and labels cover different time steps")
    train_labels = labels.slice_times(split.train)
    scope = scope_for(contract.scope, train_labels)
    per = {(name, mode): [] for name in rules for mode in modes}
    choices = {key: ([], []) for key in per}
    for seed in cfg.seeds:
        cands = train_candidates(features, labels, split, contract.head_family.allowed,
                                 cfg, seed, scope)
        val_scope = scope.retarget(cands[0].val_record.spec)
        ranking = RankingPRAUC(val_scope)
        for name, rule in rules.items():
            decision = DecisionF1(rule, val_scope, tau_rule)
            for mode in modes:
                res = selection_regret(cands, ranking, decision, mode)
                per[(name, mode)].append(res.delta)
                choices[(name, mode)][0].append(res.ranking_choice)
                choices[(name, mode)][1].append(res.decision_choice)
    rows = tuple(
        RegretRow(backbone, scope.label, name, mode, seed_aggregate(vals), tuple(vals),
                  tuple(choices[(name, mode)][0]), tuple(choices[(name, mode)][1]))
        for (name, mode), vals in per.items())
    config = {**ENGINE_CONVENTIONS, "train": cfg.to_dict(), "split": str(split),
              "tau_rule": "decision_rule" if tau_rule is None else tau_rule.to_dict(),
              "class_weights": cfg.weight_scheme, "modes": list(modes)}
    return CheckReport("regret", contract, rows, config, rules)


def rank_map(reports: Sequence[CheckReport]) -> dict[str, dict[str, int]]:
    """Per-contract backbone ranks, keyed by canonical contract text.

    Rows are only ever ranked against rows with an identical contract; a
    row whose task or head family differs from its report's base contract is
    rejected.
    """
    groups: dict[str, list] = {}
    for report in reports:
        for backbone, value, contract in report.entries():
            base = report.contract
            if contract.task != base.task or contract.head_family != base.head_family:
                raise ContractViolation(
                    f"row for {backbone} does not belong to contract {base.describe()}")
            groups.setdefault(contract.canonical(), []).append((backbone, value, contract))
    out = {}
    for key, entries in groups.items():
        names = [e[0] for e in entries]
        if len(set(names)) != len(names):
            raise ContractViolation(f"duplicate backbone entries under one contract: {names}")
        out[key] = {r.name: r.rank for r in rank_within_contract(entries)}
    return out


def rank_deltas(ranks: Mapping[str, Mapping[str, int]], before: Contract,
                after: Contract) -> dict[str, int]:
    """Rank change per backbone from contract ``before`` to ``after`` (after - before)."""
    a, b = ranks[before.canonical()], ranks[after.canonical()]
    if set(a) != set(b):
        raise DataError("the two contracts rank different backbone sets")
    return {name: b[name] - a[name] for name in sorted(a)}


def check_comparable(reports: Sequence[CheckReport]) -> None:
    """Raise unless every report shares one base contract and config block."""
    first = reports[0]
    for r in reports[1:]:
        if not comparable(first.contract, r.contract) or first.config != r.config:
            raise ContractViolation("reports were produced under different contracts or configs")

