"""File formats, run configuration and report emission.

Binary grids use the FGR1 layout: a 29-byte header followed by the
payload, time-major and row-major within each time slice.

==========  =====  =====================================================
offset      size   field
==========  =====  =====================================================
0           4      magic ``b"FGR1"``
4           1      dtype code: 0 bit-packed labels, 1 float32 LE scores
5           12     n_times, n_rows, n_cols as little-endian uint32
17          12     reserved, zero
==========  =====  =====================================================

Label payloads pack 8 cells per byte, least significant bit first, and
each time slice is zero-padded to a whole byte.

Reports are JSON documents; CSV and Markdown tables are rendered from them.
All emitters are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checks import CheckReport, RegretRow, SeedStat, SweepRow
from .contracts import Contract, builtin_contract, comparable
from .errors import (BadMagic, ConfigError, ContractViolation, DataError, FormatError,
                     NaNInScores, TruncatedPayload)
from .grid import GridSpec, LabelField, ScoreField
from .matching import rule_from_dict
from .metrics import EventTable, StationSeries

MAGIC = b"FGR1"
HEADER = struct.Struct("<4sB3I12s")
HEADER_SIZE = HEADER.size  # 29
DTYPE_LABELS = 0
DTYPE_SCORES = 1
REPORT_FORMAT = "firecontract-report/1"


# --------------------------------------------------------------------------
# binary grids


def _slice_bytes(spec: GridSpec) -> int:
    return (spec.n_rows * spec.n_cols + 7) // 8


def payload_size(dtype_code: int, spec: GridSpec) -> int:
    if dtype_code == DTYPE_LABELS:
        return spec.n_times * _slice_bytes(spec)
    if dtype_code == DTYPE_SCORES:
        return 4 * spec.n_cells
    raise FormatError(f"unknown dtype code {dtype_code}")


def encode_grid(grid) -> bytes:
    """FGR1 bytes for a :class:`ScoreField` or :class:`LabelField`."""
    spec = grid.spec
    if isinstance(grid, LabelField):
        code = DTYPE_LABELS
        flat = grid.values.reshape(spec.n_times, -1)
        payload = np.packbits(flat, axis=1, bitorder="little").tobytes()
    elif isinstance(grid, ScoreField):
        code = DTYPE_SCORES
        payload = grid.values.astype("<f4").tobytes()
    else:
        raise DataError(f"cannot encode {type(grid).__name__}")
    header = HEADER.pack(MAGIC, code, spec.n_times, spec.n_rows, spec.n_cols, bytes(12))
    return header + payload


def decode_grid(data: bytes, cell_size_km: float = 5.0):
    """Parse FGR1 bytes; nothing is returned unless the whole payload is valid."""
    if len(data) < HEADER_SIZE:
        if data[:4] != MAGIC[:len(data[:4])]:
            raise BadMagic("not an FGR1 file")
        raise TruncatedPayload(f"header needs {HEADER_SIZE} bytes, file has {len(data)}")
    magic, code, T, R, C, _reserved = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    try:
        spec = GridSpec(T, R, C, cell_size_km)
    except DataError as exc:
        raise FormatError(f"bad grid dimensions in header: {exc}") from exc
    need = payload_size(code, spec)
    have = len(data) - HEADER_SIZE
    if have < need:
        raise TruncatedPayload(f"payload needs {need} bytes, file has {have}")
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload")
    body = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE)
    if code == DTYPE_LABELS:
        packed = body.reshape(T, _slice_bytes(spec))
        bits = np.unpackbits(packed, axis=1, count=R * C, bitorder="little")
        return LabelField(spec, bits.astype(bool).reshape(spec.shape))
    values = body.view("<f4").astype(np.float32).reshape(spec.shape)
    if not np.isfinite(values).all():
        raise NaNInScores("score payload contains NaN or infinite values")
    return ScoreField(spec, values)


def write_grid(grid, path) -> None:
    Path(path).write_bytes(encode_grid(grid))


def read_grid(path, cell_size_km: float = 5.0):
    """Read a :class:`ScoreField` or :class:`LabelField` from an FGR1 file."""
    return decode_grid(Path(path).read_bytes(), cell_size_km)


def read_features(path) -> np.ndarray:
    """Feature tensor ``(n_times, d, rows, cols)`` stored as a NumPy ``.npy`` file."""
    x = np.load(path, allow_pickle=False)
    if x.ndim != 4:
        raise DataError(f"features must be 4-d (time, channel, row, col), got {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("features must be finite")
    return x


def write_features(features: np.ndarray, path) -> None:
    np.save(path, np.asarray(features, dtype=np.float64), allow_pickle=False)


# --------------------------------------------------------------------------
# CSV tables


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events_csv(table: EventTable, path) -> None:
    """Columns ``id, f0..f{d-1}, area_acres, split``."""
    d = table.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"f{j}" for j in range(d)] + ["area_acres", "split"])
        for i, eid in enumerate(table.event_ids):
            w.writerow([eid] + [_fmt(v) for v in table.features[i]]
                       + [_fmt(table.burned_area_acres[i]), table.splits[i]])


def read_events_csv(path) -> EventTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty event table")
    head = rows[0]
    if len(head) < 3 or head[0] != "id" or head[-2:] != ["area_acres", "split"]:
        raise DataError(f"{path}: expected columns id,features...,area_acres,split")
    try:
        feats = np.array([[float(v) for v in r[1:-2]] for r in rows[1:]], dtype=np.float64)
        areas = np.array([float(r[-2]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if any(len(r) != len(head) for r in rows[1:]):
        raise DataError(f"{path}: ragged rows")
    feats = feats.reshape(len(rows) - 1, len(head) - 3)
    return EventTable(tuple(r[0] for r in rows[1:]), feats, areas,
                      tuple(r[-1] for r in rows[1:]))


STATION_COLUMNS = ["station_id", "t", "observed", "predicted"]


def write_stations_csv(series: StationSeries, path) -> None:
    """Columns ``station_id, t, observed, predicted``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_COLUMNS)
        for s, t, o, p in zip(series.station_ids, series.time_index, series.observed,
                              series.predicted):
            w.writerow([s, int(t), _fmt(o), _fmt(p)])


def read_stations_csv(path, unit: str = "") -> StationSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != STATION_COLUMNS:
        raise DataError(f"{path}: expected columns {','.join(STATION_COLUMNS)}")
    body = rows[1:]
    try:
        return StationSeries(np.array([r[0] for r in body]),
                             np.array([int(r[1]) for r in body], dtype=np.int64),
                             np.array([float(r[2]) for r in body]),
                             np.array([float(r[3]) for r in body]), unit)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# contracts and run configuration


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def dump_json(data) -> str:
    """Canonical, byte-stable JSON text (sorted keys, trailing newline)."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_contract(contract: Contract, path) -> None:
    Path(path).write_text(dump_json(contract.to_dict()))


def read_contract(path) -> Contract:
    try:
        return Contract.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed contract ({exc})") from exc


def resolve_contract(ref) -> Contract:
    """A contract from an inline dict, a JSON path, or a built-in task name."""
    if isinstance(ref, Contract):
        return ref
    if isinstance(ref, dict):
        try:
            return Contract.from_dict(ref)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed inline contract ({exc})") from exc
    if os.path.exists(ref):
        return read_contract(ref)
    try:
        return builtin_contract(ref)
    except ValueError as exc:
        raise ConfigError(f"{ref!r} is neither a contract file nor a task name") from exc


@dataclass
class RunConfig:
    """Everything a CLI run depends on. Unknown keys are rejected."""

    contract: object = None  # task name, contract path, or inline contract dict
    inputs: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [1, 7, 42, 99, 123])
    split: Optional[str] = None
    tau: Optional[float] = None
    tau_rule: Optional[str] = None
    rules: Optional[list] = None
    scopes: Optional[list] = None
    regret_mode: str = "both"
    selection_metric: str = "PRAUC"
    log_base: float = 10.0
    hidden_h: int = 16
    hidden_H: int = 64
    epochs: int = 200
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_scheme: str = "balanced"
    backbone: str = "model"
    out: Optional[str] = None

    INPUT_KEYS = ("scores", "labels", "features", "events", "stations")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown run config keys: {unknown}")
        inputs = data.get("inputs", {})
        bad = sorted(set(inputs) - set(cls.INPUT_KEYS))
        if bad:
            raise ConfigError(f"unknown input keys: {bad}")
        cfg = cls(**data)
        if cfg.regret_mode not in ("same", "held_out", "both"):
            raise ConfigError(f"regret_mode must be same, held_out or both, got {cfg.regret_mode!r}")
        if cfg.selection_metric != "PRAUC":
            raise ConfigError("the only ranking selection metric is PRAUC")
        if not (cfg.log_base > 0 and cfg.log_base != 1 and math.isfinite(cfg.log_base)):
            raise ConfigError("log_base must be positive and not 1")
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_run_config(path) -> RunConfig:
    """Read a run config, or the run block echoed inside a report."""
    data = _load_json(path)
    if isinstance(data, dict) and data.get("format") == REPORT_FORMAT:
        try:
            data = data["config"]["run"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: report carries no run config") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------
# reports


def _row_dict(report_kind: str, row) -> dict:
    if report_kind == "sweep":
        return {"backbone": row.backbone, "scope": row.scope,
                "values": {"strict": row.strict_f1, "tolerated": row.tolerated_f1,
                           "union": row.union_f1, "delta": row.delta},
                "predicted_positive_rate": row.predicted_positive_rate}
    if report_kind == "regret":
        return {"backbone": row.backbone, "scope": row.scope, "rule": row.rule,
                "mode": row.mode, "values": {"mean": row.stat.mean, "std": row.stat.std},
                "n_seeds": row.stat.n_seeds, "per_seed": list(row.per_seed),
                "ranking_choices": list(row.ranking_choices),
                "decision_choices": list(row.decision_choices)}
    raise DataError(f"unknown report kind {report_kind!r}")


def report_to_dict(report: CheckReport) -> dict:
    """JSON-ready report; every row carries its full contract(s)."""
    rows = []
    for row in report.rows:
        d = _row_dict(report.kind, row)
        d["contracts"] = {k: c.to_dict() for k, c in report.row_contracts(row).items()}
        rows.append(d)
    return {"format": REPORT_FORMAT, "kind": report.kind,
            "contract": report.contract.to_dict(),
            "rules": {k: r.to_dict() for k, r in report.rules.items()},
            "config": report.config, "rows": rows}


def report_from_dict(data: dict) -> CheckReport:
    """Rebuild a report and check each row against its declared contract."""
    if data.get("format") != REPORT_FORMAT:
        raise DataError("not a report document")
    kind = data["kind"]
    contract = Contract.from_dict(data["contract"])
    rules = {k: rule_from_dict(v) for k, v in data.get("rules", {}).items()}
    rows = []
    for d in data["rows"]:
        v = d["values"]
        if kind == "sweep":
            rows.append(SweepRow(d["backbone"], d["scope"], v["strict"], v["tolerated"],
                                 v["union"], v["delta"], d["predicted_positive_rate"]))
        elif kind == "regret":
            rows.append(RegretRow(d["backbone"], d["scope"], d["rule"], d["mode"],
                                  SeedStat(v["mean"], v["std"], d["n_seeds"]),
                                  tuple(d["per_seed"]), tuple(d["ranking_choices"]),
                                  tuple(d["decision_choices"])))
        elif kind == "eval":
            rows.append(EvalRow(d["backbone"], d["split"], v["value"], d.get("tau")))
        else:
            raise DataError(f"unknown report kind {kind!r}")
    report = (EvalReport(contract, tuple(rows), data["config"]) if kind == "eval"
              else CheckReport(kind, contract, tuple(rows), data["config"], rules))
    for d, row in zip(data["rows"], rows):
        declared = {k: Contract.from_dict(c) for k, c in d.get("contracts", {}).items()}
        expected = report.row_contracts(row)
        if set(declared) != set(expected) or any(
                not comparable(declared[k], expected[k]) for k in expected):
            raise ContractViolation(
                f"row for {row.backbone} does not match its report's contract "
                f"{contract.describe()}")
    return report


@dataclass(frozen=True)
class EvalRow:
    backbone: str
    split: str
    value: float
    tau: Optional[float] = None


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Single-contract metric values, one row per evaluated split."""

    contract: Contract
    rows: tuple
    config: dict = field(default_factory=dict)
    kind: str = "eval"

    def row_contracts(self, row) -> dict[str, Contract]:
        return {"value": self.contract}

    def entries(self) -> list[tuple[str, float, Contract]]:
        return [(f"{r.backbone}@{r.split}", r.value, self.contract) for r in self.rows]

    def to_dict(self) -> dict:
        rows = [{"backbone": r.backbone, "split": r.split, "values": {"value": r.value},
                 "tau": r.tau, "contracts": {"value": self.contract.to_dict()}}
                for r in self.rows]
        return {"format": REPORT_FORMAT, "kind": "eval", "contract": self.contract.to_dict(),
                "rules": {}, "config": self.config, "rows": rows}


def to_document(report) -> dict:
    return report.to_dict() if isinstance(report, EvalReport) else report_to_dict(report)


def write_report(report, path) -> None:
    Path(path).write_text(dump_json(to_document(report)))


def read_report(path):
    data = _load_json(path)
    try:
        return report_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed report ({exc})") from exc


# --------------------------------------------------------------------------
# tables


def pct(x: float) -> str:
    """Fraction to a fixed 4-decimal percentage string."""
    return f"{100.0 * float(x):.4f}"


def _num(x: float) -> str:
    return f"{float(x):.4f}"


def _is_percent(report) -> bool:
    metric = report.contract.metric
    return metric.id.endswith("F1") or metric.id in ("AP", "PRAUC")


def table_rows(report) -> tuple[list[str], list[list[str]]]:
    """Header and rendered cells for one report."""
    if report.kind == "sweep":
        head = ["backbone", "scope", "strict_f1", "tolerated_f1", "union_f1", "delta",
                "predicted_positive_rate"]
        body = [[r.backbone, r.scope, pct(r.strict_f1), pct(r.tolerated_f1), pct(r.union_f1),
                 pct(r.delta), pct(r.predicted_positive_rate)] for r in report.rows]
    elif report.kind == "regret":
        head = ["backbone", "scope", "rule", "mode", "regret_mean", "regret_std", "n_seeds",
                "ranking_choices", "decision_choices"]
        body = [[r.backbone, r.scope, r.rule, r.mode, pct(r.stat.mean), pct(r.stat.std),
                 str(r.stat.n_seeds), " ".join(r.ranking_choices),
                 " ".join(r.decision_choices)] for r in report.rows]
    else:
        fmt = pct if _is_percent(report) else _num
        head = ["backbone", "split", report.contract.metric.id, "tau"]
        body = [[r.backbone, r.split, fmt(r.value), "" if r.tau is None else repr(r.tau)]
                for r in report.rows]
    return head, body


def render_csv(report) -> str:
    head, body = table_rows(report)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# contract", report.contract.canonical()])
    w.writerow(["# config", json.dumps(report.config, sort_keys=True, separators=(",", ":"))])
    w.writerow(head)
    w.writerows(body)
    return buf.getvalue()


def render_markdown(report) -> str:
    head, body = table_rows(report)
    lines = [f"Contract: `{report.contract.describe()}`", "",
             f"Contract JSON: `{report.contract.canonical()}`", "",
             f"Config: `{json.dumps(report.config, sort_keys=True, separators=(',', ':'))}`", "",
             "| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    lines += ["| " + " | ".join(cells) + " |" for cells in body]
    return "\n".join(lines) + "\n"


def render(report, fmt: str) -> str:
    if fmt == "json":
        return dump_json(to_document(report))
    if fmt == "csv":
        return render_csv(report)
    if fmt == "markdown":
        return render_markdown(report)
    raise DataError(f"unknown format {fmt!r}")


PER_RUN_KEYS = ("run", "tau")


def _conventions(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in PER_RUN_KEYS}


def group_reports(reports: Sequence) -> list[list]:
    """Reports grouped by (kind, base contract), groups in canonical order.

    Reports in one group must also share their engine config; otherwise
    their numbers were produced under different conventions. Per-run keys
    (the run echo and a backbone's own threshold) are exempt.
    """
    groups: dict[tuple, list] = {}
    for rep in reports:
        groups.setdefault((rep.kind, rep.contract.canonical()), []).append(rep)
    out = []
    for key in sorted(groups):
        group = groups[key]
        conv = [_conventions(r.config) for r in group]
        if any(c != conv[0] for c in conv[1:]):
            raise ContractViolation(
                f"reports under {group[0].contract.describe()} use different engine configs")
        out.append(group)
    return out


def merge_group(group: Sequence):
    """One report holding every row of a same-contract group."""
    first = group[0]
    rows = tuple(r for rep in group for r in rep.rows)
    names = [r.backbone for r in rows]
    config = _conventions(first.config)
    if first.kind == "eval":
        return EvalReport(first.contract, rows, config)
    if first.kind == "sweep":
        keys = [(r.backbone, r.scope) for r in rows]
    else:
        keys = [(r.backbone, r.scope, r.rule, r.mode) for r in rows]
    if len(set(keys)) != len(keys):
        raise ContractViolation(f"duplicate rows for backbones {sorted(set(names))}")
    return CheckReport(first.kind, first.contract, rows, config, first.rules)
