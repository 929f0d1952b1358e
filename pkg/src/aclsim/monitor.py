"""Windowed link/port/subnetwork utilization and threshold alerts.

Windows are tumbling, aligned to t = 0. Carried bits are attributed to
windows in proportion to the serialization time that falls in each, so a
window can never hold more than ``rate * window_len`` bits. Offered load
is counted separately and can exceed the line rate.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from aclsim._jit import njit
from aclsim.topology import Topology

DEFAULT_WINDOW = 0.1
SATURATED = 1.0 - 1e-9


class MeterError(ValueError):
    pass


def window_of(t, window_len):
    # nudge so that exact multiples (0.3 / 0.1) land in the right window
    return int(math.floor(t / window_len + 1e-9))


@njit(cache=True)
def spread_bits(bits, d, start, end, nbits, window_len):
    """Add *nbits* serialized over [start, end) to row *d* of *bits*."""
    nw = bits.shape[1]
    if end <= start:
        w = int(start / window_len)
        if w < nw:
            bits[d, w] += nbits
        return
    rate = nbits / (end - start)
    w = int(start / window_len)
    t = start
    while t < end and w < nw:
        edge = (w + 1) * window_len
        if edge <= t:
            w += 1
            continue
        stop = end if end < edge else edge
        bits[d, w] += rate * (stop - t)
        t = stop
        w += 1


@dataclass(frozen=True)
class Thresholds:
    link_util: float = 0.9
    port_util: Optional[float] = None
    subnet_avg_util: Optional[float] = None
    clear_margin: float = 0.1

    def __post_init__(self):
        if not 0 < self.link_util <= 1:
            raise ValueError(f"link_util {self.link_util} outside (0, 1]")
        for name in ("port_util", "subnet_avg_util"):
            v = getattr(self, name)
            if v is not None and not 0 < v <= 1:
                raise ValueError(f"{name} {v} outside (0, 1]")
        if self.clear_margin < 0 or self.link_util - self.clear_margin <= 0:
            raise ValueError("clear threshold link_util - clear_margin must be positive")


@dataclass(frozen=True)
class Alert:
    t: float
    scope: str  # "link" | "port" | "subnet"
    id: str
    util: float
    threshold: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, separators=(",", ":"))


class UtilizationMeter:
    """Per link-direction carried/offered bit counters per window.

    Port meters are the same rows seen from either end: the egress meter
    of ``(u, port)`` and the ingress meter of the peer port both read the
    direction ``u -> v``.
    """

    def __init__(self, topology: Topology, window_len: float = DEFAULT_WINDOW, horizon: float = 1.0):
        if window_len <= 0:
            raise MeterError("window length must be positive")
        self.topology = topology
        self.window_len = float(window_len)
        n = max(1, int(math.ceil(horizon / window_len)) + 1)
        nd = topology.num_dirs()
        self.rates = np.array([topology.dir_info(d)[0].rate_bps for d in range(nd)])
        self.carried = np.zeros((nd, n))
        self.offered_bits = np.zeros((nd, n))
        self.offered_frames = np.zeros((nd, n), dtype=np.int64)
        self._last_at = np.full(nd, -np.inf)

    @property
    def num_windows(self):
        return self.carried.shape[1]

    def _grow(self, w):
        if w < self.num_windows:
            return
        extra = w + 1 - self.num_windows
        pad = lambda a: np.concatenate([a, np.zeros((a.shape[0], extra), a.dtype)], axis=1)
        self.carried = pad(self.carried)
        self.offered_bits = pad(self.offered_bits)
        self.offered_frames = pad(self.offered_frames)

    def _dir(self, link_id, from_node):
        try:
            return self.topology.dir_index(link_id, from_node)
        except Exception as e:
            raise MeterError(str(e)) from None

    def record_serialization(self, link_id, from_node, bits, at) -> None:
        d = self._dir(link_id, from_node)
        if at < self._last_at[d]:
            raise MeterError(f"time regression on {link_id}: {at} < {self._last_at[d]}")
        self._last_at[d] = at
        w = window_of(at, self.window_len)
        self._grow(w)
        self.carried[d, w] += bits

    def record_interval(self, link_id, from_node, bits, start, end) -> None:
        d = self._dir(link_id, from_node)
        if start < self._last_at[d]:
            raise MeterError(f"time regression on {link_id}: {start} < {self._last_at[d]}")
        self._last_at[d] = start
        self._grow(window_of(end, self.window_len))
        spread_bits(self.carried, d, float(start), float(end), float(bits), self.window_len)

    def record_offered(self, link_id, from_node, bits, at) -> None:
        d = self._dir(link_id, from_node)
        w = window_of(at, self.window_len)
        self._grow(w)
        self.offered_bits[d, w] += bits
        self.offered_frames[d, w] += 1

    def util_window(self, d, w) -> float:
        if w < 0 or w >= self.num_windows:
            return 0.0
        return min(1.0, self.carried[d, w] / (self.rates[d] * self.window_len))

    def offered_window(self, d, w) -> float:
        if w < 0 or w >= self.num_windows:
            return 0.0
        return self.offered_bits[d, w] / (self.rates[d] * self.window_len)

    def completed_window(self, at) -> int:
        return window_of(at, self.window_len) - 1

    def utilization(self, link_id, from_node, at) -> float:
        """Carried utilization of the last window completed by time *at*."""
        return self.util_window(self._dir(link_id, from_node), self.completed_window(at))

    def utilizations(self, w) -> np.ndarray:
        """All directions' carried utilization in window *w*."""
        if w < 0 or w >= self.num_windows:
            return np.zeros(len(self.rates))
        return np.minimum(1.0, self.carried[:, w] / (self.rates * self.window_len))

    def oversubscription(self, d, w) -> float:
        """Offered over line capacity for one window; may exceed 1."""
        return self.offered_window(d, w)


def utilization(meter: UtilizationMeter, link_id, from_node, at) -> float:
    return meter.utilization(link_id, from_node, at)


def record_serialization(meter: UtilizationMeter, link_id, from_node, bits, at) -> None:
    meter.record_serialization(link_id, from_node, bits, at)


@dataclass
class CongestionState:
    meter: UtilizationMeter
    subnet: Dict[str, str] = field(default_factory=dict)
    link_above: Dict[int, bool] = field(default_factory=dict)
    port_above: Dict[str, bool] = field(default_factory=dict)
    alerts: List[Alert] = field(default_factory=list)
    last_window: int = -1

    def __post_init__(self):
        for name in self.meter.topology.subnetworks:
            self.subnet.setdefault(name, "clear")

    def is_congested(self, name) -> bool:
        return self.subnet.get(name) == "congested"

    def alert_log(self) -> str:
        return "".join(a.to_json() + "\n" for a in self.alerts)


def _hysteresis(above, value, on, off, inclusive):
    """Return (new_above, crossed_up)."""
    hit = value >= on if inclusive else value > on
    if not above and hit:
        return True, True
    if above and value < off:
        return False, False
    return above, False


def evaluate_thresholds(state: CongestionState, thresholds: Thresholds, at: float) -> list:
    """Judge the window completed at *at*; return the alerts it raised.

    Links and ports alert when utilization goes strictly above their
    threshold, subnetworks when the mean over member links reaches
    ``subnet_avg_util``. Each scope re-arms only after dropping below
    ``threshold - clear_margin``.
    """
    meter = state.meter
    topo = meter.topology
    w = meter.completed_window(at)
    if w <= state.last_window:
        return []
    state.last_window = w
    utils = meter.utilizations(w)
    margin = thresholds.clear_margin
    new = []

    on = thresholds.link_util
    for d in range(len(utils)):
        above, up = _hysteresis(state.link_above.get(d, False), utils[d], on, on - margin, False)
        state.link_above[d] = above
        if up:
            new.append(Alert(at, "link", topo.dir_name(d), float(utils[d]), on))

    if thresholds.port_util is not None:
        on = thresholds.port_util
        for d in range(len(utils)):
            l, u, v = topo.dir_info(d)
            for pid in (f"{u}:{l.port_at(u)}:egress", f"{v}:{l.port_at(v)}:ingress"):
                above, up = _hysteresis(state.port_above.get(pid, False), utils[d], on, on - margin, False)
                state.port_above[pid] = above
                if up:
                    new.append(Alert(at, "port", pid, float(utils[d]), on))

    on = thresholds.subnet_avg_util
    if on is None:
        on = thresholds.link_util
    for name in sorted(topo.subnetworks):
        # a duplex link counts at its busier direction
        per_link = []
        for lid in topo.subnetworks[name]:
            l = topo.link(lid)
            per_link.append(max(utils[topo.dir_index(lid, l.a[0])], utils[topo.dir_index(lid, l.b[0])]))
        mean = float(np.mean(per_link)) if per_link else 0.0
        was = state.subnet[name] == "congested"
        above, up = _hysteresis(was, mean, on, on - margin, True)
        state.subnet[name] = "congested" if above else "clear"
        if up:
            new.append(Alert(at, "subnet", name, mean, on))

    state.alerts.extend(new)
    return new
