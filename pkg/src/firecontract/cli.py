"""Command-line interface.

Subcommands: ``eval``, ``sweep``, ``regret``, ``synth`` and ``report``.
Exit codes are stable for scripting: 0 success, 1 usage error, 2 contract
violation, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as fio
from .checks import ENGINE_CONVENTIONS, fixed_feature_check, fixed_output_check, rank_map, scope_for
from .contracts import (OCCUPANCY_K, OCCUPANCY_UNION_DT, Contract, ScopeSpec, TaskForm,
                        derive_fire_prone_scope, spread_region_scope)
from .errors import ContractViolation, DataError, FireContractError
from .grid import (GridSpec, LabelField, OutputRecord, ScoreField, TimeSplit, global_scope,
                   observed_set, threshold_scores)
from .heads import TrainConfig
from .matching import EXACT, decision_f1, parse_rule
from .metrics import (analog_retrieval_scores, average_precision, fit_log_area_regressor,
                      log_error_metrics, predict_area, select_threshold, spearman_rho,
                      station_scores)
from .synth import (SceneConfig, generate_event_table, generate_occupancy_scene,
                    generate_regret_scenario, generate_station_series)

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_DATA = 0, 1, 2, 3
MODE_ALIASES = {"same": "same", "in-sample": "same", "held_out": "held_out",
                "held-out": "held_out", "both": "both"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# run configuration


def _run_config(args, **flags) -> fio.RunConfig:
    """Config file values, overridden by any flag the user actually passed."""
    base = fio.load_run_config(args.config).to_dict() if args.config else {}
    for key, value in flags.items():
        if value is None:
            continue
        if key == "inputs":
            base["inputs"] = {**base.get("inputs", {}),
                              **{k: v for k, v in value.items() if v is not None}}
        else:
            base[key] = value
    return fio.RunConfig.from_dict(base)


def _contract(run: fio.RunConfig, default: Optional[str] = None) -> Contract:
    ref = run.contract if run.contract is not None else default
    if ref is None:
        raise UsageError("a contract is required (--contract or config)")
    return fio.resolve_contract(ref)


def _input(run: fio.RunConfig, key: str) -> str:
    path = run.inputs.get(key)
    if not path:
        raise UsageError(f"missing input: --{key}")
    return path


def _split(run: fio.RunConfig, n_times: int) -> TimeSplit:
    split = TimeSplit.parse(run.split) if run.split else TimeSplit.by_fraction(n_times)
    if split.test.stop > n_times:
        raise DataError(f"split {split} exceeds {n_times} time steps")
    return split


def _echo(run: fio.RunConfig, contract: Contract) -> dict:
    run_echo = {**run.to_dict(), "contract": contract.to_dict(), "out": None}
    return {**ENGINE_CONVENTIONS, "log_base": run.log_base, "run": run_echo}


def _emit(report, fmt: str, out: Optional[str]) -> None:
    text = fio.render(report, fmt)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_record(run: fio.RunConfig) -> OutputRecord:
    scores = fio.read_grid(_input(run, "scores"))
    labels = fio.read_grid(_input(run, "labels"))
    if not isinstance(scores, ScoreField):
        raise DataError("--scores must hold a float score grid")
    if not isinstance(labels, LabelField):
        labels = LabelField(labels.spec, labels.values != 0)
    return OutputRecord(scores, labels)


def _tau_rule(contract: Contract, run: fio.RunConfig):
    text = run.tau_rule or contract.metric.param("tau_rule")
    if text in (None, "decision"):
        return contract.matching or EXACT
    if text == "val_strict_f1":
        return EXACT
    if text.startswith("val_"):
        return contract.matching or EXACT
    return parse_rule(text)


# --------------------------------------------------------------------------
# eval


def _eval_grid(contract: Contract, run: fio.RunConfig) -> list[fio.EvalRow]:
    record = _read_record(run)
    split = _split(run, record.spec.n_times)
    train_labels = record.labels.slice_times(split.train)
    scope_kind = contract.scope.kind
    if scope_kind == "global":
        scope = global_scope(train_labels.spec)
    elif scope_kind == "fire_prone":
        scope = derive_fire_prone_scope(train_labels, contract.scope.fraction)
    elif scope_kind == "spread_region":
        scope = None
    else:
        raise ContractViolation(f"scope {scope_kind} does not apply to grid records")
    val = record.slice_times(split.validation)
    parts = [("validation", val), ("test", record.slice_times(split.test))]
    rows = []
    if contract.metric.id in ("AP", "PRAUC"):
        for name, rec in parts:
            cells = (np.ones(rec.spec.shape, bool) if scope is None
                     else np.broadcast_to(scope.cells, rec.spec.shape))
            rows.append(fio.EvalRow(run.backbone, name, average_precision(
                rec.scores.values[cells], rec.labels.values[cells])))
        return rows
    if contract.matching is None:
        raise ContractViolation(f"{contract.metric.id} needs a matching rule for grid records")
    if run.tau is not None:
        tau = float(run.tau)
    else:
        sel_scope = global_scope(val.spec) if scope is None else scope.retarget(val.spec)
        tau = select_threshold(val, sel_scope, _tau_rule(contract, run))
    for name, rec in parts:
        if scope is None:
            s = spread_region_scope(threshold_scores(rec, tau, global_scope(rec.spec)),
                                    observed_set(rec.labels, global_scope(rec.spec)))
        else:
            s = scope.retarget(rec.spec)
        rows.append(fio.EvalRow(run.backbone, name, decision_f1(rec, tau, contract.matching, s),
                                tau))
    return rows


def _eval_events(contract: Contract, run: fio.RunConfig) -> list[fio.EvalRow]:
    table = fio.read_events_csv(_input(run, "events"))
    metric = contract.metric.id
    if contract.task is TaskForm.AnalogRetrieval:
        k = int(contract.metric.param("k", 10))
        key = "NDCG10" if metric.startswith("NDCG") else "RetrievedLogError"
        return [fio.EvalRow(run.backbone, split, analog_retrieval_scores(table.subset(split), k)[key])
                for split in ("val", "test")]
    base = float(contract.metric.param("log_base", run.log_base))
    w = fit_log_area_regressor(table.subset("train"))
    rows = []
    for split in ("val", "test"):
        part = table.subset(split)
        pred = predict_area(w, part)
        if metric == "SpearmanRho":
            value = spearman_rho(pred, part.burned_area_acres)
        else:
            errs = dict(zip(("LogRMSE", "LogMAE", "LogMedianAE"),
                            log_error_metrics(pred, part.burned_area_acres, base)))
            if metric not in errs:
                raise ContractViolation(f"metric {metric} does not apply to burned area")
            value = errs[metric]
        rows.append(fio.EvalRow(run.backbone, split, value))
    return rows


def _eval_stations(contract: Contract, run: fio.RunConfig) -> list[fio.EvalRow]:
    series = fio.read_stations_csv(_input(run, "stations"))
    threshold = float(contract.metric.param("exceedance", 0.0))
    scores = station_scores(series, threshold)
    key = {"RMSEC": "RMSE", "MAEC": "MAE"}.get(contract.metric.id, contract.metric.id)
    if key not in scores:
        raise ContractViolation(f"metric {contract.metric.id} does not apply to station series")
    return [fio.EvalRow(run.backbone, "all", scores[key])]


def cmd_eval(args) -> int:
    run = _run_config(args, contract=args.contract, split=args.split, tau=args.tau,
                      tau_rule=args.tau_rule, backbone=args.backbone, log_base=args.log_base,
                      inputs={"scores": args.scores, "labels": args.labels,
                              "events": args.events, "stations": args.stations})
    contract = _contract(run)
    if contract.task in (TaskForm.Occupancy, TaskForm.FireSpread):
        rows = _eval_grid(contract, run)
    elif contract.task in (TaskForm.BurnedArea, TaskForm.AnalogRetrieval):
        rows = _eval_events(contract, run)
    else:
        rows = _eval_stations(contract, run)
    report = fio.EvalReport(contract, tuple(rows), _echo(run, contract))
    _emit(report, args.format, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    inputs = {"scores": args.scores, "labels": args.labels}
    if args.record:
        inputs = {"scores": str(Path(args.record) / "scores.fgr"),
                  "labels": str(Path(args.record) / "labels.fgr"),
                  **{k: v for k, v in inputs.items() if v}}
    run = _run_config(args, contract=args.contract, split=args.split, tau=args.tau,
                      tau_rule=args.tau_rule, backbone=args.backbone, inputs=inputs,
                      rules=_names(args.rules) if args.rules else None,
                      scopes=_names(args.scopes) if args.scopes else None)
    contract = _contract(run, "Occupancy")
    rules_text = run.rules or ["strict", "tolerated", "union"]
    if sorted(n.split(":")[0] for n in rules_text) != ["strict", "tolerated", "union"]:
        raise UsageError("--rules must name strict, tolerated and union once each")
    rules = {n.split(":")[0]: parse_rule(n, OCCUPANCY_K, OCCUPANCY_UNION_DT) for n in rules_text}
    record = _read_record(run)
    split = _split(run, record.spec.n_times)
    train_labels = record.labels.slice_times(split.train)
    test = record.slice_times(split.test)
    if run.tau is not None:
        tau = float(run.tau)
    else:
        val = record.slice_times(split.validation)
        tau = select_threshold(val, global_scope(val.spec), _tau_rule(contract, run))
    scopes = [scope_for(ScopeSpec.parse(s), train_labels).retarget(test.spec)
              for s in (run.scopes or ["global"])]
    report = fixed_output_check(test, tau, scopes, rules, run.backbone, contract,
                                {**_echo(run, contract), "split": str(split)})
    _emit(report, args.format, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# regret


def cmd_regret(args) -> int:
    mode = MODE_ALIASES.get(args.mode) if args.mode else None
    if args.mode and mode is None:
        raise UsageError(f"unknown mode {args.mode!r}")
    run = _run_config(args, contract=args.contract, split=args.split, tau_rule=args.tau_rule,
                      backbone=args.backbone, regret_mode=mode,
                      seeds=_ints(args.seeds) if args.seeds else None,
                      rules=_names(args.rules) if args.rules else None,
                      hidden_h=args.hidden_h, hidden_H=args.hidden_H, epochs=args.epochs,
                      inputs={"features": args.features, "labels": args.labels})
    contract = _contract(run, "Occupancy")
    if args.scope:
        contract = contract.replace(scope=ScopeSpec.parse(args.scope))
    labels = fio.read_grid(_input(run, "labels"))
    if not isinstance(labels, LabelField):
        raise DataError("--labels must hold a label grid")
    features = fio.read_features(_input(run, "features"))
    split = _split(run, labels.spec.n_times)
    cfg = TrainConfig(seeds=tuple(run.seeds), epochs=run.epochs,
                      learning_rate=run.learning_rate, momentum=run.momentum,
                      hidden_h=run.hidden_h, hidden_H=run.hidden_H,
                      weight_scheme=run.weight_scheme)
    rules = ({n.split(":")[0]: parse_rule(n, OCCUPANCY_K, OCCUPANCY_UNION_DT) for n in run.rules}
             if run.rules else None)
    # None defers to the contract metric's tau_rule parameter
    tau_rule = parse_rule(run.tau_rule) if run.tau_rule else None
    modes = ("same", "held_out") if run.regret_mode == "both" else (run.regret_mode,)
    report = fixed_feature_check(features, labels, split, contract, cfg, rules=rules,
                                 tau_rule=tau_rule, modes=modes, backbone=run.backbone)
    config = {**report.config, **{k: v for k, v in _echo(run, contract).items()
                                  if k not in report.config}}
    report = type(report)(report.kind, report.contract, report.rows, config, report.rules)
    _emit(report, args.format, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def _write_manifest(out: Path, data: dict) -> None:
    (out / "manifest.json").write_text(fio.dump_json(data))


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "scene":
        T, R, C = _ints(args.size)
        cfg = SceneConfig(GridSpec(T, R, C), n_events=args.n_events, event_radius=args.radius,
                          displacement=tuple(_ints(args.displacement)),
                          score_noise_sd=args.noise, false_alarm_rate=args.false_alarm,
                          seed=args.seed)
        record, features = generate_occupancy_scene(cfg)
        fio.write_grid(record.scores, out / "scores.fgr")
        fio.write_grid(record.labels, out / "labels.fgr")
        fio.write_features(features, out / "features.npy")
        files = ["scores.fgr", "labels.fgr", "features.npy"]
        params = {"size": [T, R, C], "n_events": args.n_events, "radius": args.radius,
                  "displacement": list(cfg.displacement), "noise": args.noise,
                  "false_alarm": args.false_alarm}
    elif args.what == "events":
        table = generate_event_table(args.n_events, args.seed, noise=args.noise)
        fio.write_events_csv(table, out / "events.csv")
        files, params = ["events.csv"], {"n_events": args.n_events, "noise": args.noise}
    elif args.what == "stations":
        series = generate_station_series(args.n_stations, args.n_times, args.kind, args.seed,
                                         args.bias, args.noise)
        fio.write_stations_csv(series, out / "stations.csv")
        files = ["stations.csv"]
        params = {"kind": args.kind, "n_stations": args.n_stations, "n_times": args.n_times,
                  "bias": args.bias, "noise": args.noise, "unit": series.unit}
    else:
        sc = generate_regret_scenario(args.seed)
        fio.write_features(sc.features, out / "features.npy")
        fio.write_grid(sc.labels, out / "labels.fgr")
        files, params = ["features.npy", "labels.fgr"], {"split": str(sc.split)}
    _write_manifest(out, {"generator": args.what, "seed": args.seed, "files": files,
                          "params": params})
    return EXIT_OK


# --------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise DataError(f"{src} is not a directory")
    reports = []
    for path in sorted(src.glob("*.json")):
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        if isinstance(data, dict) and data.get("format") == fio.REPORT_FORMAT:
            try:
                reports.append(fio.report_from_dict(data))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed report ({exc})") from exc
    if not reports:
        raise DataError(f"no reports found in {src}")
    parts = []
    for group in fio.group_reports(reports):
        merged = fio.merge_group(group)
        text = fio.render(merged, args.format)
        if merged.kind == "sweep":
            ranks = rank_map([merged])
            lines = []
            for key in sorted(ranks):
                order = sorted(ranks[key].items(), key=lambda kv: kv[1])
                ranked = ", ".join(f"{n}={r}" for n, r in order)
                lines.append(f"{Contract.from_dict(json.loads(key)).describe()}: {ranked}")
            if args.format == "csv":
                text += "".join(f"# rank,{line}\n" for line in lines)
            else:
                text += "\nRanks:\n\n" + "".join(f"- {line}\n" for line in lines)
        parts.append(text)
    text = "\n".join(parts)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="firecontract", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(sp, default="json"):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv", "markdown"), default=default)
        sp.add_argument("--config", help="run config JSON, or a report whose config to replay")
        sp.add_argument("--backbone", help="name recorded in report rows")

    e = sub.add_parser("eval", help="score one output under one contract")
    e.add_argument("--contract", help="task name or contract JSON path")
    e.add_argument("--scores")
    e.add_argument("--labels")
    e.add_argument("--events", help="event table CSV (burned area, retrieval)")
    e.add_argument("--stations", help="station series CSV (smoke, heat)")
    e.add_argument("--tau", type=float)
    e.add_argument("--tau-rule", dest="tau_rule")
    e.add_argument("--split", help="train:val:test ranges, e.g. 0:5,5:6,6:8")
    e.add_argument("--log-base", dest="log_base", type=float)
    outputs(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="fixed-output matching-rule sweep")
    s.add_argument("--record", help="directory holding scores.fgr and labels.fgr")
    s.add_argument("--scores")
    s.add_argument("--labels")
    s.add_argument("--contract")
    s.add_argument("--tau", type=float)
    s.add_argument("--tau-rule", dest="tau_rule", help="rule that selects tau, e.g. union")
    s.add_argument("--rules", help="strict,tolerated,union (optionally name:k:dt)")
    s.add_argument("--scopes", help="e.g. global,top5,top10,top20")
    s.add_argument("--split")
    outputs(s)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("regret", help="fixed-feature head-selection audit")
    r.add_argument("--features", help=".npy tensor (time, channel, row, col)")
    r.add_argument("--labels")
    r.add_argument("--contract")
    r.add_argument("--scope", help="override the contract scope, e.g. top10")
    r.add_argument("--seeds", help="comma-separated, default 1,7,42,99,123")
    r.add_argument("--mode", help="in-sample|held-out|both")
    r.add_argument("--rules", help="decision rules, default the contract's own")
    r.add_argument("--tau-rule", dest="tau_rule")
    r.add_argument("--split")
    r.add_argument("--hidden-h", dest="hidden_h", type=int)
    r.add_argument("--hidden-H", dest="hidden_H", type=int)
    r.add_argument("--epochs", type=int)
    outputs(r)
    r.set_defaults(func=cmd_regret)

    y = sub.add_parser("synth", help="generate synthetic inputs")
    y.add_argument("what", choices=("scene", "events", "stations", "regret-scenario"))
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    y.add_argument("--size", default="8,64,64", help="T,R,C for scenes")
    y.add_argument("--n-events", dest="n_events", type=int, default=None)
    y.add_argument("--radius", type=int, default=1)
    y.add_argument("--displacement", default="0,0")
    y.add_argument("--noise", type=float, default=0.0)
    y.add_argument("--false-alarm", dest="false_alarm", type=float, default=0.0)
    y.add_argument("--kind", choices=("smoke", "heat"), default="smoke")
    y.add_argument("--n-stations", dest="n_stations", type=int, default=20)
    y.add_argument("--n-times", dest="n_times", type=int, default=120)
    y.add_argument("--bias", type=float, default=0.0)
    y.set_defaults(func=cmd_synth)

    o = sub.add_parser("report", help="tables from a directory of JSON reports")
    o.add_argument("--in", dest="input", required=True)
    o.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    o.add_argument("--out")
    o.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "what", None) and args.n_events is None:
        args.n_events = 200 if args.what == "events" else 10
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"firecontract: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"firecontract: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (DataError, FireContractError, OSError) as exc:
        print(f"firecontract: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
