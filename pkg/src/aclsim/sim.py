"""Trial driver around the event-loop kernel.

The kernel dispatches frame events; this module owns everything that
happens on monitor window boundaries: threshold evaluation, guard rules,
rerouting and priority-drop arming. Guard rules therefore act at window
granularity, consistent with utilization only changing at window edges.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from aclsim import acl
from aclsim import kernels as K
from aclsim.monitor import (
    DEFAULT_WINDOW,
    SATURATED,
    Alert,
    CongestionState,
    Thresholds,
    UtilizationMeter,
    evaluate_thresholds,
)
from aclsim.packet import PROTO_ICMP, PROTO_UDP, make_frame, size_wire_bits, wire_bits
from aclsim.reroute import (
    NewPath,
    Path,
    RouteTable,
    priority_drop_decision,
    reroute,
    shortest_path,
)
from aclsim.topology import HOST_PORT, Topology

DEFAULT_QUEUE_CAPACITY = 128


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    start_delay: float = 2.0
    duration: float = 100.0
    drain: float = 15.0

    def __post_init__(self):
        if self.start_delay < 0 or self.duration <= 0 or self.drain < 0:
            raise SimError(f"bad schedule {self}")

    @property
    def end(self):
        return self.start_delay + self.duration + self.drain


@dataclass(frozen=True)
class GeneratorSpec:
    """A traffic source.

    ``kind="constant"`` sends fixed-size frames at ``load_percent`` of the
    access rate. ``kind="burst"`` sends ``burst_count`` frames at that rate
    every ``period`` seconds, starting ``burst_offset`` after the start
    delay. ``measured`` flows are the ones frame loss is reported for.
    """

    name: str
    src: int
    dst: int
    load_percent: float
    frame_size: int = 512
    kind: str = "constant"
    period: float = 10.0
    burst_count: int = 1
    burst_offset: float = 0.0
    headers: Optional[dict] = None
    measured: bool = True
    access_rate_bps: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.load_percent <= 100:
            raise SimError(f"generator {self.name}: load {self.load_percent} outside (0, 100]")
        if self.kind not in ("constant", "burst"):
            raise SimError(f"generator {self.name}: unknown kind {self.kind!r}")
        if self.kind == "burst" and (self.burst_count < 1 or self.period <= 0):
            raise SimError(f"generator {self.name}: burst needs count >= 1 and period > 0")
        if self.src == self.dst:
            raise SimError(f"generator {self.name}: source equals destination")

    def header_spec(self):
        if self.headers is not None:
            return dict(self.headers)
        proto = PROTO_ICMP if self.kind == "burst" else PROTO_UDP
        spec = {
            "ip.src_addr": f"10.0.{self.src // 256}.{self.src % 256}",
            "ip.dst_addr": f"10.0.{self.dst // 256}.{self.dst % 256}",
            "ip.protocol": proto,
        }
        if proto == PROTO_UDP:
            spec["l4.src_port"] = 49152
            spec["l4.dst_port"] = 7
        return spec

    def template(self):
        try:
            return make_frame({**self.header_spec(), "flow_id": self.name}, self.frame_size)
        except ValueError as e:
            raise SimError(f"generator {self.name}: {e}") from None


@dataclass
class FlowStats:
    name: str
    src: int
    dst: int
    measured: bool
    tx_frames: int = 0
    rx_frames: int = 0
    filtered: int = 0
    dropped_tail: int = 0
    dropped_priority: int = 0
    dropped_policer: int = 0
    in_flight: int = 0
    oversub_frames: int = 0
    max_jitter_us: float = 0.0
    max_latency_us: float = 0.0
    min_latency_us: float = 0.0

    @property
    def dropped(self):
        return self.dropped_tail + self.dropped_priority + self.dropped_policer

    @property
    def frames_lost(self):
        return self.tx_frames - self.rx_frames - self.filtered


@dataclass
class LinkStats:
    id: str
    tx_frames: int = 0
    dropped: int = 0
    oversub_frames: int = 0
    max_util: float = 0.0
    max_offered: float = 0.0


@dataclass
class TrialResult:
    seed: int
    flows: List[FlowStats]
    links: List[LinkStats]
    alerts: List[Alert] = field(default_factory=list)
    reroutes: List[dict] = field(default_factory=list)
    end_time: float = 0.0

    def flow(self, name) -> FlowStats:
        for f in self.flows:
            if f.name == name:
                return f
        raise KeyError(name)

    def measured(self):
        return [f for f in self.flows if f.measured]

    def _sum(self, attr, flows=None):
        return sum(getattr(f, attr) for f in (self.flows if flows is None else flows))

    @property
    def tx(self):
        return self._sum("tx_frames")

    @property
    def rx(self):
        return self._sum("rx_frames")

    @property
    def dropped(self):
        return self._sum("dropped")

    @property
    def filtered(self):
        return self._sum("filtered")

    @property
    def in_flight(self):
        return self._sum("in_flight")

    @property
    def oversub_frames(self):
        return sum(l.oversub_frames for l in self.links)

    def measured_counts(self):
        m = self.measured()
        return self._sum("tx_frames", m), self._sum("rx_frames", m), self._sum("frames_lost", m)

    def measured_loss_pct(self) -> float:
        tx, _, lost = self.measured_counts()
        return 100.0 * lost / tx if tx else 0.0

    def measured_jitter_us(self) -> float:
        return max((f.max_jitter_us for f in self.measured()), default=0.0)

    def conserved(self) -> bool:
        return all(
            f.tx_frames == f.rx_frames + f.filtered + f.dropped + f.in_flight for f in self.flows
        )

    def to_dict(self):
        return {
            "seed": self.seed,
            "end_time": self.end_time,
            "flows": [dict(asdict(f), frames_lost=f.frames_lost) for f in self.flows],
            "links": [asdict(l) for l in self.links],
            "alerts": [asdict(a) for a in self.alerts],
            "reroutes": self.reroutes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def alert_log(self) -> str:
        return "".join(a.to_json() + "\n" for a in self.alerts)

    def reroute_log(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.reroutes)


# ---------------------------------------------------------------------------
# reference single-queue semantics


@dataclass(frozen=True)
class Enqueued:
    evicted: tuple = ()


@dataclass(frozen=True)
class Dropped:
    reason: str  # "tail" | "priority" | "policer-violate"


class PortQueue:
    """Plain FIFO egress queue holding whole Frame objects."""

    def __init__(self, port, capacity=DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise SimError("queue capacity must be at least 1")
        self.port = port
        self.capacity = capacity
        self.frames = deque()

    def __len__(self):
        return len(self.frames)


def enqueue_or_drop(queue: PortQueue, frame, guard_context=None):
    """Admit *frame* or say why not.

    *guard_context* is a :class:`acl.DropByPriority` (or its protected
    priority) when a priority-drop guard is armed for the link. A full
    queue then gives up its lowest-priority, oldest unprotected frame; the
    arriving frame itself competes on the same terms.
    """
    if len(queue.frames) < queue.capacity:
        queue.frames.append(frame)
        return Enqueued()
    if guard_context is None:
        return Dropped("tail")
    protect = getattr(guard_context, "min_protected_priority", guard_context)
    snapshot = list(queue.frames) + [frame]
    # the limit is in frames, so a single victim makes room
    victims = priority_drop_decision(snapshot, 1, protect)
    if not victims:
        return Dropped("tail")
    if frame.frame_id in victims:
        return Dropped("priority")
    evicted = tuple(f for f in queue.frames if f.frame_id in victims)
    queue.frames = deque(f for f in queue.frames if f.frame_id not in victims)
    queue.frames.append(frame)
    return Enqueued(evicted)


# ---------------------------------------------------------------------------
# trial


def _grow_rows(a, n, fill=0):
    out = np.full((n,) + a.shape[1:], fill, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


class Simulation:
    """One trial: build kernel arrays, then step window by window."""

    def __init__(
        self,
        topology: Topology,
        generators,
        bindings: Optional[acl.AclBindings] = None,
        thresholds: Optional[Thresholds] = None,
        seed: int = 0,
        schedule: Optional[Schedule] = None,
        guard_enabled: bool = True,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        window_len: float = DEFAULT_WINDOW,
    ):
        self.topology = topology
        self.generators = list(generators)
        self.bindings = bindings or acl.AclBindings()
        self.thresholds = thresholds or Thresholds()
        self.seed = int(seed)
        self.schedule = schedule or Schedule()
        self.guard_enabled = guard_enabled
        self.window_len = float(window_len)
        if queue_capacity < 1:
            raise SimError("queue capacity must be at least 1")

        names = [g.name for g in self.generators]
        if len(set(names)) != len(names):
            raise SimError("duplicate generator names")

        topo = topology
        self.nd = nd = topo.num_dirs()
        self.nf = nf = len(self.generators)
        self.table = RouteTable()
        self.templates = []
        for g in self.generators:
            for n in (g.src, g.dst):
                if n not in topo.nodes:
                    raise SimError(f"generator {g.name}: unknown node {n}")
            path = shortest_path(topo, g.src, g.dst)
            if path is None:
                raise SimError(f"generator {g.name}: {g.src} and {g.dst} are not connected")
            self.table.set(g.name, path, original=True)
            self.templates.append(g.template())
        self._check_bindings()

        horizon = self.schedule.end
        self.n_windows = int(math.ceil(horizon / self.window_len + 1e-9)) + 1
        self.meter = UtilizationMeter(topo, self.window_len, horizon)
        if self.meter.num_windows < self.n_windows:
            self.meter._grow(self.n_windows - 1)
        self.state = CongestionState(self.meter)
        nw = self.meter.num_windows

        # queues
        self.q_buf = np.zeros((nd, queue_capacity), dtype=np.int64)
        self.q_i = np.zeros((nd, 5), dtype=np.int64)
        self.q_i[:, K.QI_CAP] = queue_capacity
        self.q_i[:, K.QI_BUSY] = -1
        self.q_i[:, K.QI_PROTECT] = -1
        self.q_f = np.zeros((nd, 2))
        for d in range(nd):
            l = topo.dir_info(d)[0]
            self.q_f[d, K.QF_RATE] = l.rate_bps
            self.q_f[d, K.QF_DELAY] = l.delay_s

        # paths and policers
        self.max_hops = max(1, len(topo.nodes))
        self._path_index: Dict[tuple, int] = {}
        self._paths: List[Path] = []
        self.p_len = np.zeros(0, dtype=np.int64)
        self.p_dirs = np.zeros((0, self.max_hops), dtype=np.int64)
        self.p_verd = np.zeros((0, self.max_hops + 1), dtype=np.int64)
        self.p_pol = np.zeros((0, self.max_hops + 1), dtype=np.int64)
        self._policer_index: Dict[tuple, int] = {}
        self._policer_rows: List[list] = []
        self.flow_path = np.zeros(nf, dtype=np.int64)
        for i, g in enumerate(self.generators):
            self.flow_path[i] = self._register_path(i, self.table.get(g.name))
        self.pol = np.array(self._policer_rows, dtype=np.float64).reshape(-1, 5)
        if self.pol.shape[0] == 0:
            self.pol = np.zeros((1, 5))

        # generators
        rng = np.random.default_rng(self.seed)
        self.g_i = np.zeros((max(nf, 1), 4), dtype=np.int64)
        self.g_f = np.zeros((max(nf, 1), 6))
        self.flow_rate = np.zeros(nf)
        self.gen_end = self.schedule.start_delay + self.schedule.duration
        first_ticks = []
        for i, g in enumerate(self.generators):
            bits = float(size_wire_bits(g.frame_size))
            path = self.table.get(g.name)
            access = g.access_rate_bps or topo.link(path.links[0]).rate_bps
            interval = bits / (g.load_percent / 100.0 * access)
            start = self.schedule.start_delay + rng.uniform(0.0, interval)
            self.g_f[i] = (start, self.gen_end, interval, bits, 0.0, access)
            self.g_i[i, K.GI_PRIO] = self.templates[i].priority
            if g.kind == "burst":
                start += g.burst_offset
                self.g_f[i, K.GF_START] = start
                self.g_f[i, K.GF_PERIOD] = g.period
                self.g_i[i, K.GI_KIND] = 1
                self.g_i[i, K.GI_BURST_N] = g.burst_count
                self.flow_rate[i] = g.burst_count * bits / g.period
            else:
                self.flow_rate[i] = bits / interval
            if start < self.gen_end:
                first_ticks.append((start, i))

        # frame pool and event heap
        pool = nd * queue_capacity + 8 * max(nf, 1) + 1024
        self.fr_i = np.zeros((pool, 4), dtype=np.int64)
        self.fr_f = np.zeros((pool, 4))
        self.free_stack = np.arange(pool - 1, -1, -1, dtype=np.int64)
        self.st = np.zeros(K.ST_LEN, dtype=np.int64)
        self.st[K.ST_FREE] = pool
        hcap = pool + nd + nf + 16
        self.hp_t = np.zeros(hcap)
        self.hp_i = np.zeros((hcap, 3), dtype=np.int64)
        for t, i in sorted(first_ticks):
            K.heap_push(self.hp_t, self.hp_i, self.st, t, K.EV_GEN, i)

        self.c_i = np.zeros((max(nf, 1), 6), dtype=np.int64)
        self.c_f = np.zeros((max(nf, 1), 5))
        self.l_i = np.zeros((nd, 2), dtype=np.int64)
        self.off_fdw = np.zeros((max(nf, 1), nd, nw), dtype=np.int64)

        self.reroutes: List[dict] = []
        self._guard_active = set()
        self._reroute_threshold: Dict[int, float] = {}
        self._ran = False

    # -- setup helpers -----------------------------------------------------

    def _check_bindings(self):
        topo = self.topology
        for (node, port), stack in self.bindings.items():
            if node not in topo.nodes:
                raise SimError(f"ACL bound to unknown node {node}")
            if port != HOST_PORT and topo.link_at_port(node, port) is None:
                raise SimError(f"ACL bound to {node}:{port}, which has no link")
            if stack.link is not None:
                try:
                    l = topo.link(stack.link)
                except ValueError as e:
                    raise SimError(f"ACL {stack.stack_id}: {e}") from None
                if node not in (l.a[0], l.b[0]):
                    raise SimError(f"ACL {stack.stack_id}: link {stack.link} does not touch node {node}")
            elif port == HOST_PORT and any(isinstance(r.action, acl.ThresholdGuard) for r in stack.rules):
                raise SimError(
                    f"ACL {stack.stack_id} on host port {node}:{port} has guard rules but no associated link"
                )

    def watched_dir(self, stack):
        """Direction index whose load a stack's guard rules compare against."""
        topo = self.topology
        node, port = stack.bound_to
        if stack.link is None:
            l = topo.link_at_port(node, port)
            return topo.dir_index(l.link_id, l.peer(node))
        l = topo.link(stack.link)
        if l.port_at(node) == port:
            return topo.dir_index(l.link_id, l.peer(node))
        return topo.dir_index(l.link_id, node)

    def _ingress(self, path, h):
        node = path.nodes[h]
        if h == 0:
            return node, HOST_PORT
        return node, self.topology.link(path.links[h - 1]).port_at(node)

    def _register_path(self, flow, path: Path) -> int:
        key = (flow, path.links, path.nodes)
        idx = self._path_index.get(key)
        if idx is not None:
            return idx
        idx = len(self._paths)
        self._paths.append(path)
        self._path_index[key] = idx
        n = idx + 1
        self.p_len = _grow_rows(self.p_len, n)
        self.p_dirs = _grow_rows(self.p_dirs, n)
        self.p_verd = _grow_rows(self.p_verd, n)
        self.p_pol = _grow_rows(self.p_pol, n)
        self.p_len[idx] = path.hops
        for h, (lid, u) in enumerate(path.directions()):
            self.p_dirs[idx, h] = self.topology.dir_index(lid, u)
        frame = self.templates[flow]
        for h in range(path.hops + 1):
            node, port = self._ingress(path, h)
            stack = self.bindings.get(node, port)
            if stack is None:
                continue
            v = acl.classify(frame, (node, port), stack, 0.0)
            if v.action == "deny":
                self.p_verd[idx, h] = K.V_DENY
            elif v.policer is not None:
                self.p_verd[idx, h] = K.V_POLICE
                self.p_pol[idx, h] = self._policer(stack, v)
        return idx

    def _policer(self, stack, verdict):
        key = (stack.stack_id, verdict.matched_seq)
        k = self._policer_index.get(key)
        if k is None:
            k = len(self._policer_rows)
            a = verdict.policer
            row = [a.cir_bps, a.normal_burst_bits, a.excess_burst_bits, a.normal_burst_bits, 0.0]
            self._policer_rows.append(row)
            self._policer_index[key] = k
            # paths registered mid-trial: keep the live token state of existing rows
            if hasattr(self, "pol"):
                if k == 0:
                    self.pol = np.array([row], dtype=np.float64)
                else:
                    self.pol = np.vstack([self.pol, np.array([row])])
        return k

    def _grow_pool(self):
        old = self.fr_i.shape[0]
        new = 2 * old
        self.fr_i = _grow_rows(self.fr_i, new)
        self.fr_f = _grow_rows(self.fr_f, new)
        nfree = self.st[K.ST_FREE]
        fs = np.zeros(new, dtype=np.int64)
        fs[:nfree] = self.free_stack[:nfree]
        fs[nfree : nfree + (new - old)] = np.arange(new - 1, old - 1, -1)
        self.free_stack = fs
        self.st[K.ST_FREE] = nfree + (new - old)
        hcap = new + self.nd + self.nf + 16
        self.hp_t = _grow_rows(self.hp_t, hcap)
        self.hp_i = _grow_rows(self.hp_i, hcap)

    # -- stepping ------------------------------------------------------------

    def _advance(self, t_stop):
        while True:
            K.run_until(
                t_stop, self.st, self.hp_t, self.hp_i,
                self.fr_i, self.fr_f, self.free_stack,
                self.q_i, self.q_f, self.q_buf,
                self.p_len, self.p_dirs, self.p_verd, self.p_pol, self.pol,
                self.g_i, self.g_f, self.flow_path,
                self.c_i, self.c_f, self.l_i,
                self.meter.carried, self.meter.offered_bits, self.meter.offered_frames,
                self.off_fdw, self.window_len,
            )
            if self.st[K.ST_STATUS] != K.STATUS_NEED_POOL:
                return
            self._grow_pool()

    def _loads(self, utils):
        topo = self.topology
        out = {}
        for d in range(self.nd):
            l, u, _ = topo.dir_info(d)
            out[(l.link_id, u)] = float(utils[d])
        return out

    def _set_path(self, i, path, t, reason):
        g = self.generators[i]
        old = self._paths[self.flow_path[i]]
        self.table.paths[g.name] = path
        self.flow_path[i] = self._register_path(i, path)
        self.reroutes.append(
            {"t": t, "flow": g.name, "old_path": list(old.links), "new_path": list(path.links), "reason": reason}
        )

    def _boundary(self, w):
        t = (w + 1) * self.window_len
        evaluate_thresholds(self.state, self.thresholds, t)
        self.q_i[:, K.QI_PROTECT] = -1
        if not self.guard_enabled or len(self.bindings) == 0:
            return
        utils = self.meter.utilizations(w)
        loads = None
        margin = self.thresholds.clear_margin
        for i, g in enumerate(self.generators):
            cur = self._paths[self.flow_path[i]]
            orig = self.table.original[g.name]

            if cur != orig and i in self._reroute_threshold:
                clear = self._reroute_threshold[i] - margin
                cur_dirs = {self.topology.dir_index(*x) for x in cur.directions()}
                ok = True
                for x in orig.directions():
                    d = self.topology.dir_index(*x)
                    share = 0.0 if d in cur_dirs else self.flow_rate[i] / self.q_f[d, K.QF_RATE]
                    if utils[d] + share >= clear:
                        ok = False
                        break
                if ok:
                    self._set_path(i, orig, t, "clear")
                    del self._reroute_threshold[i]
                    cur = orig

            for h in range(cur.hops + 1):
                node, port = self._ingress(cur, h)
                stack = self.bindings.get(node, port)
                if stack is None:
                    continue
                d_w = self.watched_dir(stack)
                v = acl.classify(self.templates[i], (node, port), stack, float(utils[d_w]))
                gkey = (i, stack.stack_id, v.matched_seq)
                if v.action != "guard":
                    self._guard_active.discard((i, stack.stack_id, v.matched_seq))
                    continue
                if gkey not in self._guard_active:
                    self._guard_active.add(gkey)
                    self.state.alerts.append(
                        Alert(t, "link", self.topology.dir_name(d_w), float(utils[d_w]), v.threshold)
                    )
                if isinstance(v.guard, acl.AlertOnly):
                    continue
                if loads is None:
                    loads = self._loads(utils)
                out = reroute(self.table, self.topology, g.src, g.dst, loads, v.threshold, key=g.name)
                if isinstance(out, NewPath):
                    self.table.paths[g.name] = cur
                    if out.path != cur:
                        self._set_path(i, out.path, t, "guard")
                        self._reroute_threshold[i] = v.threshold
                elif isinstance(v.guard, acl.DropByPriority):
                    for x in cur.directions():
                        d = self.topology.dir_index(*x)
                        if utils[d] > v.threshold:
                            p = v.guard.min_protected_priority
                            prev = self.q_i[d, K.QI_PROTECT]
                            self.q_i[d, K.QI_PROTECT] = p if prev < 0 else min(prev, p)
                break

    def run(self) -> TrialResult:
        if self._ran:
            raise SimError("a Simulation runs once")
        self._ran = True
        w = 0
        for w in range(self.n_windows):
            t_stop = (w + 1) * self.window_len
            self._advance(t_stop)
            self._boundary(w)
            if self.st[K.ST_HEAP] == 0 and t_stop >= self.gen_end:
                break
        return self._result(min((w + 1) * self.window_len, self.schedule.end))

    def _result(self, end_time) -> TrialResult:
        topo = self.topology
        nw = self.meter.num_windows
        util = np.minimum(1.0, self.meter.carried / (self.meter.rates[:, None] * self.window_len))
        saturated = util >= SATURATED
        flows = []
        for i, g in enumerate(self.generators):
            c = self.c_i[i]
            fs = FlowStats(
                g.name, g.src, g.dst, g.measured,
                tx_frames=int(c[K.CI_TX]),
                rx_frames=int(c[K.CI_RX]),
                filtered=int(c[K.CI_FILTERED]),
                dropped_tail=int(c[K.CI_TAIL]),
                dropped_priority=int(c[K.CI_PRIO]),
                dropped_policer=int(c[K.CI_POLICER]),
                oversub_frames=int(self.off_fdw[i][saturated].sum()),
                max_jitter_us=float(self.c_f[i, K.CF_MAX_JITTER] * 1e6),
                max_latency_us=float(self.c_f[i, K.CF_MAX_LAT] * 1e6),
                min_latency_us=float(self.c_f[i, K.CF_MIN_LAT] * 1e6),
            )
            fs.in_flight = fs.tx_frames - fs.rx_frames - fs.filtered - fs.dropped
            flows.append(fs)
        links = []
        for d in range(self.nd):
            links.append(
                LinkStats(
                    topo.dir_name(d),
                    tx_frames=int(self.l_i[d, K.LI_TX]),
                    dropped=int(self.l_i[d, K.LI_DROP]),
                    oversub_frames=int(self.meter.offered_frames[d][saturated[d]].sum()),
                    max_util=float(util[d].max()) if nw else 0.0,
                    max_offered=float(
                        (self.meter.offered_bits[d] / (self.meter.rates[d] * self.window_len)).max()
                    ),
                )
            )
        return TrialResult(self.seed, flows, links, list(self.state.alerts), list(self.reroutes), end_time)


def run_trial(
    topology: Topology,
    generators,
    acl_bindings: Optional[acl.AclBindings] = None,
    thresholds: Optional[Thresholds] = None,
    seed: int = 0,
    schedule: Optional[Schedule] = None,
    **kw,
) -> TrialResult:
    return Simulation(topology, generators, acl_bindings, thresholds, seed, schedule, **kw).run()
