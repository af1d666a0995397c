"""Command-line interface.

Exit codes: 0 success, 1 configuration/usage error, 2 evaluation failure.
The default config path comes from the GUARD_CONFIG environment variable
when --config is omitted. Config files are JSON; TOML works when running
on a Python with stdlib tomllib (3.11+).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .detector import DetectorConfig
from .ingest import IngestConfig
from .model import kind_from_wire
from .scenario import ConfigError, ScenarioConfig, ScenarioTrace, run_scenario, scenario_config_from_dict
from .sim import SimParams, profile_from_faults
from .sweep import SweepConfig, judge_sweep, run_multi_node_sweep, run_single_node_sweep
from .triage import (
    ErrorSignals,
    IllegalTransition,
    TriageConfig,
    TriageStage,
    TriageState,
    record_strike,
    step_triage,
)

PRESETS = {
    "detection": lambda: harness.detection_scenario_config(),
    "ablation": lambda: harness.ablation_base_config(),
    "mixed": lambda: harness.mixed_fault_config(),
}


class _Parser(argparse.ArgumentParser):
    """Usage errors print help and exit with the config-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            raise ConfigError(
                "TOML configs need Python >= 3.11; use the JSON form of the same schema"
            ) from None
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def _resolve_scenario_config(args) -> ScenarioConfig:
    if getattr(args, "preset", None):
        cfg = PRESETS[args.preset]()
    else:
        path = args.config or os.environ.get("GUARD_CONFIG")
        if not path:
            raise ConfigError("no config given: pass --config, --preset or set GUARD_CONFIG")
        cfg = scenario_config_from_dict(_load_config_file(path))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _parse_seeds(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s]


def _cmd_run(args) -> int:
    cfg = _resolve_scenario_config(args)
    trace = run_scenario(cfg)
    outdir = Path(args.out)
    trace.write(outdir)
    print(f"trace written to {outdir} ({trace.summary.completed_steps} steps, "
          f"{len(trace.events)} events)")
    return 0


def _cmd_detect(args) -> int:
    detector_cfg = DetectorConfig()
    ingest_cfg = IngestConfig()
    if args.config or os.environ.get("GUARD_CONFIG"):
        raw = _load_config_file(args.config or os.environ["GUARD_CONFIG"])
        det_raw = dict(raw.get("detector", raw if "k_windows" in raw else {}))
        floors = det_raw.pop("mad_floors", None)
        if floors:
            det_raw["mad_floors"] = {kind_from_wire(k): float(v) for k, v in floors.items()}
        try:
            detector_cfg = DetectorConfig(**det_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad detector config: {exc}") from exc
        if "window_len_s" in raw:
            ingest_cfg = IngestConfig(window_len_s=float(raw["window_len_s"]))
    with open(args.metrics, "r", encoding="utf-8") as fh:
        flags = harness.detect_replay(fh, detector_cfg, ingest_cfg, strict=args.strict)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for flag in flags:
            out.write(json.dumps(flag) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_sweep(args) -> int:
    params = SimParams()
    faults = ()
    if args.config or os.environ.get("GUARD_CONFIG"):
        cfg = scenario_config_from_dict(
            _load_config_file(args.config or os.environ["GUARD_CONFIG"])
        )
        params = cfg.params
        faults = cfg.faults
        sweep_cfg = cfg.sweep
    else:
        sweep_cfg = SweepConfig()
    sweep_cfg = replace(sweep_cfg, width=args.width)
    rng = np.random.default_rng(args.seed)
    suspect = profile_from_faults(args.node, faults)
    references = []
    for i in range(args.width - 1):
        if i == 0 and args.reference:
            references.append(profile_from_faults(args.reference, faults))
        else:
            references.append(profile_from_faults(f"ref{i:02d}", ()))
    single = run_single_node_sweep(suspect, sweep_cfg, params, rng)
    pair = run_multi_node_sweep(suspect, references, sweep_cfg, params, rng) if sweep_cfg.enhanced else None
    verdict = judge_sweep(single, pair, sweep_cfg)
    report = {
        "node": args.node,
        "passed": verdict.passed,
        "failing_components": sorted(c.label() for c in verdict.failing_components),
        "per_gpu_throughput": list(single.per_gpu_throughput),
        "pair_median_step_s": (
            float(np.median(pair.step_times_s)) if pair is not None else None
        ),
        "baseline_s": sweep_cfg.pair_baseline_s,
        "width": args.width,
        "seed": args.seed,
    }
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.events:
        with open(args.events, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "event": "sweep",
                        "t": 0.0,
                        "node": args.node,
                        "passed": verdict.passed,
                        "components": report["failing_components"],
                        "reason": "cli",
                    }
                )
                + "\n"
            )
    return 0


def _load_triage_state(path: Path, node: str) -> TriageState:
    if path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
        if node in data:
            entry = data[node]
            return TriageState(
                node=node,
                stage=TriageStage(entry["stage"]),
                strikes=tuple(entry.get("strikes", [])),
            )
    return TriageState(node=node)


def _save_triage_state(path: Path, state: TriageState) -> None:
    data = {}
    if path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
    data[state.node] = {"stage": state.stage.value, "strikes": list(state.strikes)}
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def _cmd_triage(args) -> int:
    path = Path(args.state)
    state = _load_triage_state(path, args.node)
    cfg = TriageConfig()
    forced = False
    if args.new_ticket:
        state = replace(state, stage=TriageStage.QUARANTINED)
        state = record_strike(state, args.now, cfg)
        forced = state.stage is TriageStage.TERMINATE  # three strikes in a week
    if not forced:
        try:
            state = step_triage(state, ErrorSignals(args.signal == "errors"), cfg)
        except IllegalTransition as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    _save_triage_state(path, state)
    print(json.dumps({"node": args.node, "stage": state.stage.value, "strikes": list(state.strikes), "forced": forced}))
    return 0


def _cmd_terminate(args) -> int:
    path = Path(args.state)
    state = _load_triage_state(path, args.node)
    state = replace(state, stage=TriageStage.TERMINATE)
    _save_triage_state(path, state)
    print(json.dumps({"node": args.node, "stage": state.stage.value, "reason": args.reason}))
    return 0


def _cmd_eval(args) -> int:
    try:
        trace = ScenarioTrace.read(args.trace)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return 2
    detection = harness.eval_detection(trace)
    reliability = harness.eval_reliability([trace])
    payload = {
        "detection": asdict(detection),
        "reliability": asdict(reliability),
    }
    print(json.dumps(payload, indent=1))
    if args.fpr_max is not None and detection.fpr is not None and detection.fpr > args.fpr_max:
        return 2
    if args.fnr_max is not None and detection.fnr is not None and detection.fnr > args.fnr_max:
        return 2
    return 0


def _write_ablation_csv(rows, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "mttf_h", "human_interval_h", "mfu_proxy", "detects_hw_degradation"])
        for row in rows:
            writer.writerow(
                [row.label, f"{row.mttf_h:.4f}", f"{row.human_interval_h:.4f}",
                 f"{row.mfu_proxy:.4f}", str(row.detects_hw_degradation).lower()]
            )


def _cmd_ablate(args) -> int:
    cfg = _resolve_scenario_config(args)
    seeds = _parse_seeds(args.seeds)
    rows = harness.run_ablation(cfg, seeds)
    out = Path(args.out)
    _write_ablation_csv(rows, out)
    for row in rows:
        print(f"{row.label}: mttf={row.mttf_h:.2f}h human={row.human_interval_h:.2f}h "
              f"mfu={row.mfu_proxy:.3f}")
    print(f"csv written to {out}")
    return 0


def _cmd_report(args) -> int:
    try:
        trace = ScenarioTrace.read(args.trace)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot read trace: {exc}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    with open(outdir / "step_times.dat", "w", encoding="utf-8") as fh:
        fh.write("# step wall_time_s slowest_node\n")
        for rec in trace.steps:
            fh.write(f"{rec.step_index} {rec.wall_time_s:.6f} {rec.slowest_node}\n")

    with open(outdir / "events.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "event", "node", "detail"])
        for event in trace.events:
            detail = {k: v for k, v in event.items() if k not in ("event", "t", "node")}
            writer.writerow([event["t"], event["event"], event.get("node", ""), json.dumps(detail)])

    detection = harness.eval_detection(trace)
    reliability = harness.eval_reliability([trace])
    with open(outdir / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["fpr", "" if detection.fpr is None else f"{detection.fpr:.4f}"])
        writer.writerow(["fnr", "n/a" if detection.fnr is None else f"{detection.fnr:.4f}"])
        writer.writerow(["positives", detection.positives])
        writer.writerow(["negatives", detection.negatives])
        writer.writerow(["mttf_h", f"{reliability.mttf_h:.4f}"])
        writer.writerow(["human_interval_h", f"{reliability.human_interval_h:.4f}"])
        writer.writerow(["mean_step_s", f"{reliability.mean_step_s:.4f}"])
        writer.writerow(["mfu_proxy", f"{reliability.mfu_proxy:.4f}"])
    print(f"report written to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="guard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its trace")
    run.add_argument("--config", help="scenario config file (JSON; TOML on 3.11+)")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default="trace", help="output trace directory")
    run.set_defaults(func=_cmd_run)

    detect = sub.add_parser("detect", help="replay a metrics JSONL stream through the detector")
    detect.add_argument("--metrics", required=True)
    detect.add_argument("--config", help="detector config file")
    detect.add_argument("--strict", action="store_true", help="reject unknown wire fields")
    detect.add_argument("--out", help="write flag events here instead of stdout")
    detect.set_defaults(func=_cmd_detect)

    sweep = sub.add_parser("sweep", help="qualify one node offline")
    sweep.add_argument("--node", required=True)
    sweep.add_argument("--reference")
    sweep.add_argument("--width", type=int, choices=(2, 4, 8), default=2)
    sweep.add_argument("--seed", type=int, required=True)
    sweep.add_argument("--config")
    sweep.add_argument("--out")
    sweep.add_argument("--events", help="append the verdict to this JSONL event log")
    sweep.set_defaults(func=_cmd_sweep)

    triage = sub.add_parser("triage", help="advance a node's remediation state")
    triage.add_argument("--node", required=True)
    triage.add_argument("--signal", choices=("errors", "clean"), required=True)
    triage.add_argument("--state", default="guard_triage.json")
    triage.add_argument("--now", type=float, default=0.0, help="timestamp for strike accounting")
    triage.add_argument("--new-ticket", action="store_true", help="open a ticket (records a strike)")
    triage.set_defaults(func=_cmd_triage)

    terminate = sub.add_parser("terminate", help="manually mark a node for termination")
    terminate.add_argument("--node", required=True)
    terminate.add_argument("--reason", required=True)
    terminate.add_argument("--state", default="guard_triage.json")
    terminate.set_defaults(func=_cmd_terminate)

    evaluate = sub.add_parser("eval", help="evaluate a written trace")
    evaluate.add_argument("--trace", required=True)
    evaluate.add_argument("--fpr-max", type=float)
    evaluate.add_argument("--fnr-max", type=float)
    evaluate.set_defaults(func=_cmd_eval)

    ablate = sub.add_parser("ablate", help="run the four-arm ablation")
    ablate.add_argument("--config")
    ablate.add_argument("--preset", choices=sorted(PRESETS))
    ablate.add_argument("--seeds", required=True, help="e.g. 1..10 or 1,2,3")
    ablate.add_argument("--out", default="ablation.csv")
    ablate.set_defaults(func=_cmd_ablate)

    report = sub.add_parser("report", help="CSV and gnuplot-ready files from a trace")
    report.add_argument("--trace", required=True)
    report.add_argument("--out", default="report")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: bad config JSON: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
