"""Command-line entry point: ``aclsim run`` and ``aclsim acl-check``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict

from aclsim import acl
from aclsim.acltext import AclSyntaxError, format_rule, parse_acl
from aclsim.bench import (
    ConfigError,
    SweepSpec,
    Workload,
    frame_loss_csv,
    frame_loss_sweep,
    guard_comparison,
    throughput_test,
    trials_csv,
)
from aclsim.scenario import Scenario, ScenarioError, load_scenario
from aclsim.sim import SimError, run_trial

DEFAULT_OUT = "aclsim-out"
FLOW_COLUMNS = [
    "name", "src", "dst", "measured", "tx_frames", "rx_frames", "frames_lost", "filtered",
    "dropped_tail", "dropped_priority", "dropped_policer", "oversub_frames", "max_jitter_us",
]


def _jsonl(records):
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


def _flows_csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_COLUMNS)
    for f in result.flows:
        d = dict(asdict(f), frames_lost=f.frames_lost)
        w.writerow([repr(round(d[c], 9)) if isinstance(d[c], float) else d[c] for c in FLOW_COLUMNS])
    return buf.getvalue()


def _sweep_spec(sc: Scenario) -> SweepSpec:
    texts = sc.acl_texts()
    wl = Workload(
        sc.topology,
        [g for g in sc.scaled_generators() if g.measured],
        [g for g in sc.scaled_generators() if not g.measured],
        texts,
        sc.thresholds,
    )
    s = sc.schedule
    return SweepSpec(
        load_percents=sc.sweep.loads,
        frame_sizes=sc.sweep.sizes,
        trials=sc.sweep.trials,
        trial_duration=s.duration,
        duration_scale=sc.duration_scale,
        guard=sc.guard,
        seed=sc.seed,
        start_delay=s.start_delay,
        drain=s.drain,
        queue_capacity=sc.queue_capacity,
        workload=wl,
    )


def _trial_logs(result, extra=None):
    extra = extra or {}
    alerts = [dict(extra, **asdict(a)) for a in result.alerts]
    reroutes = [dict(extra, **r) for r in result.reroutes]
    return alerts, reroutes


def _sweep_logs(sweep, label=None):
    alerts, reroutes = [], []
    for (size, load), results in sweep.trials.items():
        for r in results:
            extra = {"frame_size": size, "load_pct": load, "seed": r.seed}
            if label:
                extra["run"] = label
            a, b = _trial_logs(r, extra)
            alerts += a
            reroutes += b
    return alerts, reroutes


def execute(sc: Scenario) -> dict:
    """Run a parsed scenario; return {file name: contents}."""
    files = {}
    fmt = sc.format
    if sc.sweep is None:
        r = run_trial(
            sc.topology, sc.scaled_generators(), sc.bindings(), sc.thresholds, sc.seed,
            sc.scaled_schedule(), guard_enabled=sc.guard, queue_capacity=sc.queue_capacity,
        )
        if fmt == "json":
            files["trial.json"] = r.to_json() + "\n"
        else:
            files["flows.csv"] = _flows_csv(r)
        alerts, reroutes = _trial_logs(r)
    else:
        spec = _sweep_spec(sc)
        mode = sc.sweep.mode
        if mode == "loss":
            res = frame_loss_sweep(spec)
            alerts, reroutes = _sweep_logs(res)
            if fmt == "json":
                files["frame_loss.json"] = json.dumps(res.rows, indent=1) + "\n"
            else:
                files["frame_loss.csv"] = frame_loss_csv(res.rows)
                for load in spec.load_percents:
                    files[f"trials_load{load:g}.csv"] = trials_csv(res, load)
        elif mode == "throughput":
            tp = throughput_test(spec, sc.sweep.resolution)
            alerts, reroutes = [], []
            if fmt == "json":
                files["throughput.json"] = json.dumps({str(k): v for k, v in tp.items()}, indent=1) + "\n"
            else:
                files["throughput.csv"] = "frame_size_bytes,max_zero_loss_load_pct\n" + "".join(
                    f"{k},{v:g}\n" for k, v in tp.items()
                )
        else:
            cmp = guard_comparison(spec)
            a1, r1 = _sweep_logs(cmp["baseline"], "baseline")
            a2, r2 = _sweep_logs(cmp["guarded"], "guarded")
            alerts, reroutes = a1 + a2, r1 + r2
            if fmt == "json":
                files["comparison.json"] = json.dumps(
                    {"baseline": cmp["baseline"].rows, "guarded": cmp["guarded"].rows, "delta": cmp["delta"]},
                    indent=1,
                ) + "\n"
            else:
                files["baseline.csv"] = frame_loss_csv(cmp["baseline"].rows)
                files["guarded.csv"] = frame_loss_csv(cmp["guarded"].rows)
                buf = io.StringIO()
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(["frame_size_bytes", "load_pct", "frame_loss_pct_delta", "oversub_frames_delta"])
                for d in cmp["delta"]:
                    w.writerow([d["frame_size_bytes"], d["load_pct"], repr(round(d["frame_loss_pct"], 9)),
                                d["oversub_frames"]])
                files["delta.csv"] = buf.getvalue()
    files["alerts.jsonl"] = _jsonl(alerts)
    files["reroutes.jsonl"] = _jsonl(reroutes)
    return files


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except FileNotFoundError:
        print(f"error: file not found: {args.scenario}", file=sys.stderr)
        return 2
    except (OSError, ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        sc.seed = args.seed
    if args.duration_scale is not None:
        if args.duration_scale <= 0:
            print("error: --duration-scale must be positive", file=sys.stderr)
            return 2
        sc.duration_scale = args.duration_scale
    if args.guard is not None:
        sc.guard = args.guard == "on"
    if args.format is not None:
        sc.format = args.format
    out = args.out or sc.out or os.environ.get("ACLSIM_OUT") or DEFAULT_OUT
    try:
        files = execute(sc)
    except (ScenarioError, ConfigError, SimError, acl.AclError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    os.makedirs(out, exist_ok=True)
    for name in sorted(files):
        with open(os.path.join(out, name), "w") as fh:
            fh.write(files[name])
        print(os.path.join(out, name))
    return 0


def acl_check_report(text, source=None) -> str:
    rules = parse_acl(text, source=source)
    lines = [format_rule(r) for r in rules]
    lines.append(f"{len(rules)} rule" + ("" if len(rules) == 1 else "s"))
    if not rules:
        lines.append("note: an empty stack cannot be bound; every frame would hit the implicit deny")
    for w in acl.lint_specific_before_general(acl.AclStack(source or "acl", rules)):
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def cmd_acl_check(args) -> int:
    try:
        with open(args.file) as fh:
            text = fh.read()
    except FileNotFoundError:
        print(f"error: file not found: {args.file}", file=sys.stderr)
        return 2
    try:
        sys.stdout.write(acl_check_report(text, args.file))
    except AclSyntaxError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="aclsim", description="Threshold-guarded ACL network simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration-scale", type=float)
    r.add_argument("--guard", choices=("on", "off"))
    r.add_argument("--out", help="output directory (default $ACLSIM_OUT or ./aclsim-out)")
    r.add_argument("--format", choices=("csv", "json"))
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("acl-check", help="parse and lint an ACL file")
    c.add_argument("file")
    c.set_defaults(func=cmd_acl_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
