"""Frame-loss and throughput sweeps over preset workloads.

A workload is a topology plus its traffic: the measured flows (whose load
and frame size the sweep varies) and fixed background traffic. Cells of a
sweep are independent trials; seeds are ``seed + k`` for trial ``k`` so
every cell of a sweep sees the same seed set.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

from aclsim import acl
from aclsim.acltext import parse_acl
from aclsim.monitor import Thresholds
from aclsim.reroute import shortest_path
from aclsim.sim import GeneratorSpec, Schedule, TrialResult, run_trial
from aclsim.topology import Topology, preset_topology

DEFAULT_LOADS = tuple(range(100, 0, -10))
DEFAULT_SIZES = (512, 1024, 1280, 1518)

FRAME_LOSS_COLUMNS = ["nodes", "links", "frame_size_bytes", "load_pct", "frame_loss_pct", "max_jitter_us"]
TRIAL_COLUMNS = ["trial", "frame_size", "tx_frames", "rx_frames", "frames_lost"]


class ConfigError(ValueError):
    pass


@dataclass
class Workload:
    topology: Topology
    measured: List[GeneratorSpec]
    background: List[GeneratorSpec] = field(default_factory=list)
    # (node, port) -> (ACL text, associated link or None)
    acls: Dict[tuple, tuple] = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)

    def generators(self, load, size):
        out = [replace(g, load_percent=load, frame_size=size) for g in self.measured]
        return out + list(self.background)

    def bindings(self, guard=True):
        """Fresh stacks per trial; guard off still binds the ACLs but the sim ignores guard rules."""
        b = acl.AclBindings()
        for (node, port), (text, link) in sorted(self.acls.items()):
            b.bind(acl.AclStack(f"acl-{node}-{port}", parse_acl(text)), node, port, link)
        return b


GUARD_TEXT = "10 guard srcip {src}/32 threshold {thr!r} action {act}\n20 permit\n"


def _guard(src_node, thr=0.9, act="reroute"):
    return GUARD_TEXT.format(src=f"10.0.{src_node // 256}.{src_node % 256}", thr=thr, act=act)


def _paper10(scale):
    topo = preset_topology("paper10")
    # Cross traffic from nodes 3 and 5 meets the main flows on 5-8 and 8-10.
    # Each source sends 800 minimum ICMP frames at 6% of line rate every
    # tenth of the trial. Calibrated so the shared links overflow at 95%
    # main load but not at 90%.
    period = 10.0 * scale
    cross = [
        GeneratorSpec("x3", 3, 8, 6.0, 74, kind="burst", period=period, burst_count=800, measured=False),
        GeneratorSpec("x5", 5, 8, 6.0, 74, kind="burst", period=period, burst_count=800, measured=False),
    ]
    main = [GeneratorSpec("a", 1, 10, 50.0), GeneratorSpec("b", 10, 1, 50.0)]
    port = topo.link("L4").port_at(8)
    return Workload(topo, main, cross, {(8, port): (_guard(1), None)})


def _twopath(scale, busy=False, action="reroute"):
    topo = preset_topology("twopath")
    main = [GeneratorSpec("main", 1, 4, 60.0, headers={
        "ip.src_addr": "10.0.0.1", "ip.dst_addr": "10.0.0.4", "ip.protocol": 17, "ip.dscp": 40,
        "l4.src_port": 49152, "l4.dst_port": 7,
    })]
    # 1000 B cross frames: at a size equal to the main flow's, two CBR
    # streams can phase-lock so every tail drop lands on the same one
    bg = [GeneratorSpec("cross", 5, 4, 60.0, 1000, measured=False)]
    if busy:
        bg.append(GeneratorSpec("cross2", 6, 4, 95.0, 1000, measured=False))
    port = topo.link("L2").port_at(4)
    return Workload(topo, main, bg, {(4, port): (_guard(1, act=action), None)})


def _line3(scale, cross=False):
    topo = preset_topology("line3")
    main = [GeneratorSpec("main", 1, 3, 50.0)]
    bg = []
    if cross:
        # 7% at 1000 B joins on 2-3, so anything above 93% overflows
        bg.append(GeneratorSpec("cross", 2, 3, 7.0, 1000, measured=False))
    return Workload(topo, main, bg)


WORKLOADS: Dict[str, Callable[[float], Workload]] = {
    "paper10": _paper10,
    "twopath": _twopath,
    # alternate path loaded too: guard falls back to priority drop
    "twopath-busy": lambda s: _twopath(s, busy=True, action="prio-drop 5"),
    "line3": _line3,
    "line3-cross": lambda s: _line3(s, cross=True),
}


def workload(name, duration_scale=0.01) -> Workload:
    try:
        return WORKLOADS[name](duration_scale)
    except KeyError:
        raise ConfigError(f"unknown workload {name!r} (known: {', '.join(sorted(WORKLOADS))})") from None


@dataclass
class SweepSpec:
    load_percents: Sequence[float] = DEFAULT_LOADS
    frame_sizes: Sequence[int] = DEFAULT_SIZES
    trials: int = 4
    trial_duration: float = 100.0
    duration_scale: float = 0.01
    preset: str = "paper10"
    guard: bool = False
    seed: int = 0
    start_delay: float = 2.0
    drain: float = 15.0
    queue_capacity: int = 128
    workload: Optional[Workload] = None  # overrides preset

    def __post_init__(self):
        self.load_percents = tuple(self.load_percents)
        self.frame_sizes = tuple(self.frame_sizes)
        for l in self.load_percents:
            if not 0 < l <= 100:
                raise ConfigError(f"load {l} outside (0, 100]")
        if list(self.load_percents) != sorted(self.load_percents, reverse=True):
            raise ConfigError("loads must be listed in descending order")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.duration_scale <= 0 or self.trial_duration <= 0:
            raise ConfigError("trial duration must be positive")

    def resolve(self) -> Workload:
        return self.workload if self.workload is not None else workload(self.preset, self.duration_scale)

    def schedule(self):
        s = self.duration_scale
        return Schedule(self.start_delay * s, self.trial_duration * s, self.drain * s)

    def seeds(self):
        return [self.seed + k for k in range(self.trials)]


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: List[dict]
    trials: Dict[tuple, List[TrialResult]]  # (frame_size, load) -> per-seed results

    def row(self, frame_size, load):
        for r in self.rows:
            if r["frame_size_bytes"] == frame_size and r["load_pct"] == load:
                return r
        raise KeyError((frame_size, load))


def run_cell(spec: SweepSpec, wl: Workload, size, load, guard=None) -> List[TrialResult]:
    guard = spec.guard if guard is None else guard
    gens = wl.generators(load, size)
    out = []
    for seed in spec.seeds():
        out.append(
            run_trial(
                wl.topology, gens, wl.bindings(guard), wl.thresholds, seed, spec.schedule(),
                guard_enabled=guard, queue_capacity=spec.queue_capacity,
            )
        )
    return out


def _row(wl, size, load, results):
    losses = [r.measured_loss_pct() for r in results]
    return {
        "nodes": len(wl.topology.nodes),
        "links": len(wl.topology.links),
        "frame_size_bytes": size,
        "load_pct": int(load) if float(load).is_integer() else load,
        "frame_loss_pct": sum(losses) / len(losses),
        "max_jitter_us": max(r.measured_jitter_us() for r in results),
    }


def frame_loss_sweep(spec: SweepSpec, guard=None) -> SweepResult:
    """Loss table, one row per (frame size, load), sizes outer, loads descending."""
    wl = spec.resolve()
    rows = []
    trials = {}
    for size in spec.frame_sizes:
        for load in spec.load_percents:
            res = run_cell(spec, wl, size, load, guard)
            trials[(size, load)] = res
            rows.append(_row(wl, size, load, res))
    return SweepResult(spec, rows, trials)


def _zero_loss(results):
    return all(r.measured_counts()[2] == 0 for r in results)


def throughput_test(spec: SweepSpec, resolution: Optional[float] = None) -> Dict[int, float]:
    """Highest load with zero loss on every trial, per frame size.

    Loads are tried in descending order and the first clean one wins
    (0 when none is). With *resolution*, the gap between that load and
    the next higher failing one is bisected on a grid of that step.
    """
    if not spec.load_percents:
        raise ConfigError("empty load list")
    if resolution is not None and resolution <= 0:
        raise ConfigError("resolution must be positive")
    wl = spec.resolve()
    out = {}
    for size in spec.frame_sizes:
        best = 0.0
        failed = None
        for load in spec.load_percents:
            if _zero_loss(run_cell(spec, wl, size, load)):
                best = load
                break
            failed = load
        if resolution is not None and failed is not None:
            lo = int(round(best / resolution))
            hi = int(round(failed / resolution))
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if _zero_loss(run_cell(spec, wl, size, mid * resolution)):
                    lo = mid
                else:
                    hi = mid
            best = lo * resolution if lo > 0 else 0.0
        out[size] = best
    return out


def _disjoint_alternate(wl: Workload):
    topo = wl.topology
    for g in wl.measured:
        p = shortest_path(topo, g.src, g.dst)
        used = set(p.links)
        excl = [(l.link_id, n) for l in topo.links if l.link_id in used for n in (l.a[0], l.b[0])]
        if shortest_path(topo, g.src, g.dst, exclude=excl) is None:
            raise ConfigError(f"flow {g.name} has no link-disjoint alternate path")


def guard_comparison(spec: SweepSpec) -> dict:
    """Same sweep with the guard off and on, plus per-row deltas (guarded - baseline)."""
    wl = spec.resolve()
    _disjoint_alternate(wl)
    base = frame_loss_sweep(spec, guard=False)
    guarded = frame_loss_sweep(spec, guard=True)
    delta = []
    for b, g in zip(base.rows, guarded.rows):
        key = (b["frame_size_bytes"], b["load_pct"])
        bt, gt = base.trials[key], guarded.trials[key]
        delta.append({
            "frame_size_bytes": key[0],
            "load_pct": b["load_pct"],
            "frame_loss_pct": g["frame_loss_pct"] - b["frame_loss_pct"],
            "oversub_frames": sum(r.oversub_frames for r in gt) - sum(r.oversub_frames for r in bt),
            "per_seed": [
                {
                    "seed": x.seed,
                    "baseline_lost": x.measured_counts()[2],
                    "guarded_lost": y.measured_counts()[2],
                    "baseline_oversub": x.oversub_frames,
                    "guarded_oversub": y.oversub_frames,
                }
                for x, y in zip(bt, gt)
            ],
        })
    return {"baseline": base, "guarded": guarded, "delta": delta}


# -- CSV ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def frame_loss_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FRAME_LOSS_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in FRAME_LOSS_COLUMNS])
    return buf.getvalue()


def trials_csv(result: SweepResult, load) -> str:
    """Per-trial counts at one load."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for size in result.spec.frame_sizes:
        for k, r in enumerate(result.trials[(size, load)], 1):
            tx, rx, lost = r.measured_counts()
            w.writerow([k, size, tx, rx, lost])
    return buf.getvalue()
