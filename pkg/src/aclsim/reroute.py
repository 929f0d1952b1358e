"""Congestion-avoiding path selection and priority-based drop choice."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

from aclsim.packet import wire_bits
from aclsim.topology import Topology

MAX_PENALTY_UTIL = 0.99


class RerouteError(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    nodes: Tuple[int, ...]
    links: Tuple[str, ...]
    cost: float = 0.0

    @property
    def hops(self):
        return len(self.links)

    def directions(self):
        """(link_id, from_node) per hop."""
        return list(zip(self.links, self.nodes[:-1]))


def _weight(weights, link, u):
    if weights is None:
        return link.base_weight
    if callable(weights):
        return weights(link, u)
    w = weights.get((link.link_id, u))
    if w is None:
        w = weights.get(link.link_id, link.base_weight)
    return w


def shortest_path(topology: Topology, src, dst, weights=None, exclude=()) -> Optional[Path]:
    """Minimum-weight simple path from *src* to *dst*, or None.

    *weights* maps ``link_id`` or ``(link_id, from_node)`` to a positive
    weight (missing entries use the link's base weight), or is a callable
    ``(link, from_node) -> weight``. Directions listed in *exclude* as
    ``(link_id, from_node)`` are unusable. Ties go to fewer hops, then to
    the lexicographically smallest node sequence.
    """
    if src == dst:
        raise RerouteError("source and destination are the same node")
    topology.neighbors(src)
    topology.neighbors(dst)
    exclude = set(exclude)
    heap = [(0.0, 0, (src,), ())]
    done = set()
    while heap:
        cost, hops, nodes, links = heapq.heappop(heap)
        u = nodes[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return Path(nodes, links, cost)
        for link, v in topology.neighbors(u):
            if v in done or (link.link_id, u) in exclude:
                continue
            w = _weight(weights, link, u)
            if not w > 0:
                raise RerouteError(f"non-positive weight on {link.link_id}")
            heapq.heappush(heap, (cost + w, hops + 1, nodes + (v,), links + (link.link_id,)))
    return None


@dataclass(frozen=True)
class NewPath:
    path: Path


@dataclass(frozen=True)
class NoAlternative:
    pass


@dataclass
class RouteTable:
    paths: Dict[object, Path] = field(default_factory=dict)
    original: Dict[object, Path] = field(default_factory=dict)
    epoch: int = 0

    def set(self, key, path: Path, original=False):
        self.paths[key] = path
        if original:
            self.original[key] = path

    def get(self, key) -> Optional[Path]:
        return self.paths.get(key)

    def is_rerouted(self, key) -> bool:
        return key in self.original and self.paths.get(key) != self.original[key]


def penalized_weight(base_weight, util):
    return base_weight / (1.0 - min(util, MAX_PENALTY_UTIL))


def reroute(table: RouteTable, topology: Topology, src, dst, loads: Mapping, threshold: float, key=None):
    """Re-path a flow around links loaded above *threshold*.

    *loads* maps ``(link_id, from_node)`` to carried utilization (missing
    means idle). Remaining directions are weighted
    ``base_weight / (1 - util)`` so lightly loaded links win.
    """
    try:
        topology.neighbors(src)
        topology.neighbors(dst)
    except Exception as e:
        raise RerouteError(f"unknown flow endpoint: {e}") from None
    if key is None:
        key = (src, dst)
    hot = {k for k, u in loads.items() if u > threshold}

    def weight(link, u):
        return penalized_weight(link.base_weight, loads.get((link.link_id, u), 0.0))

    path = shortest_path(topology, src, dst, weight, exclude=hot)
    if path is None:
        return NoAlternative()
    for d in path.directions():
        assert d not in hot, f"over-threshold direction {d} in rerouted path"
    table.paths[key] = path
    table.epoch += 1
    return NewPath(path)


def reroute_event(t, flow, old: Path, new: Path, reason="guard") -> str:
    return json.dumps(
        {"t": t, "flow": flow, "old_path": list(old.links), "new_path": list(new.links), "reason": reason},
        separators=(",", ":"),
    )


def _bits(item):
    b = getattr(item, "wire_bits", None)
    if b is not None:
        return b
    return wire_bits(item)


def priority_drop_decision(queue_snapshot, needed_bits, min_protected_priority=8) -> set:
    """Frame ids to discard so *needed_bits* of queue space frees up.

    Victims go lowest priority first, oldest first among equals (the
    snapshot is in queue order, oldest first). Frames at or above
    *min_protected_priority* are never chosen, so the result may free
    less than asked; when it is empty the arriving frame has to go.
    """
    candidates = [
        (f.priority, i, f) for i, f in enumerate(queue_snapshot) if f.priority < min_protected_priority
    ]
    candidates.sort(key=lambda c: (c[0], c[1]))
    out = set()
    freed = 0
    for _, _, f in candidates:
        if freed >= needed_bits:
            break
        out.add(f.frame_id)
        freed += _bits(f)
    return out
