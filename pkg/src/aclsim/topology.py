"""Node/port/link graph with line rates, weights and subnetwork groupings.

Topology documents are line oriented::

    node 1 2 3
    link L1 1:1 2:1 rate 1e9 weight 1.0 delay 0
    subnet core L1 L2

or a single ``preset <name>`` line. Port 0 of every node is the host port
where traffic generators attach; links use ports >= 1. Links are full
duplex: each direction is metered and queued on its own.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

HOST_PORT = 0
DEFAULT_RATE_BPS = 1e9


class TopologyError(ValueError):
    def __init__(self, msg, line=None, entity=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.msg = msg
        self.line = line
        self.entity = entity


def natural_key(s):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", str(s))]


@dataclass(frozen=True)
class Link:
    link_id: str
    a: Tuple[int, int]
    b: Tuple[int, int]
    rate_bps: float = DEFAULT_RATE_BPS
    base_weight: float = 1.0
    delay_s: float = 0.0

    def __post_init__(self):
        if not self.rate_bps > 0:
            raise TopologyError(f"link {self.link_id}: rate must be positive")
        if not self.base_weight > 0:
            raise TopologyError(f"link {self.link_id}: weight must be positive")
        if self.delay_s < 0:
            raise TopologyError(f"link {self.link_id}: negative delay")
        if self.a[0] == self.b[0]:
            raise TopologyError(f"link {self.link_id}: endpoints on the same node")

    def peer(self, node):
        if node == self.a[0]:
            return self.b[0]
        if node == self.b[0]:
            return self.a[0]
        raise KeyError(node)

    def port_at(self, node):
        if node == self.a[0]:
            return self.a[1]
        if node == self.b[0]:
            return self.b[1]
        raise KeyError(node)


@dataclass
class Topology:
    nodes: List[int]
    links: List[Link]
    subnetworks: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.nodes = sorted(self.nodes)
        self.links = sorted(self.links, key=lambda l: natural_key(l.link_id))
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise TopologyError("duplicate node id")
        self._by_id = {}
        used = {}
        for l in self.links:
            if l.link_id in self._by_id:
                raise TopologyError(f"duplicate link id {l.link_id}", entity=l.link_id)
            for end in (l.a, l.b):
                if end[0] not in node_set:
                    raise TopologyError(
                        f"link {l.link_id}: dangling endpoint {end[0]}:{end[1]}", entity=l.link_id
                    )
                if end[1] == HOST_PORT:
                    raise TopologyError(
                        f"link {l.link_id}: port {HOST_PORT} is the host port", entity=l.link_id
                    )
                if end in used:
                    raise TopologyError(
                        f"link {l.link_id}: port {end[0]}:{end[1]} already used by {used[end]}",
                        entity=l.link_id,
                    )
                used[end] = l.link_id
            self._by_id[l.link_id] = l
        for name, members in self.subnetworks.items():
            for m in members:
                if m not in self._by_id:
                    raise TopologyError(f"subnet {name}: unknown link {m}", entity="subnet " + name)
        self._index = {l.link_id: i for i, l in enumerate(self.links)}
        self._port_link = used
        self._adj = {n: [] for n in self.nodes}
        for l in self.links:
            self._adj[l.a[0]].append((l, l.b[0]))
            self._adj[l.b[0]].append((l, l.a[0]))

    def link(self, link_id) -> Link:
        try:
            return self._by_id[link_id]
        except KeyError:
            raise TopologyError(f"unknown link {link_id}") from None

    def has_link(self, link_id):
        return link_id in self._by_id

    def link_at_port(self, node, port):
        lid = self._port_link.get((node, port))
        return None if lid is None else self._by_id[lid]

    def ports(self, node):
        return [HOST_PORT] + sorted(l.port_at(node) for l, _ in self._adj[node])

    # link-direction indexing: 2*i for a->b, 2*i+1 for b->a
    def num_dirs(self):
        return 2 * len(self.links)

    def dir_index(self, link_id, from_node) -> int:
        l = self.link(link_id)
        i = self._index[link_id]
        if from_node == l.a[0]:
            return 2 * i
        if from_node == l.b[0]:
            return 2 * i + 1
        raise TopologyError(f"node {from_node} is not on link {link_id}")

    def dir_info(self, d):
        """(link, from_node, to_node) for a direction index."""
        l = self.links[d // 2]
        if d % 2 == 0:
            return l, l.a[0], l.b[0]
        return l, l.b[0], l.a[0]

    def dir_name(self, d):
        l, u, v = self.dir_info(d)
        return f"{l.link_id}:{u}>{v}"

    def neighbors(self, node):
        if node not in self._adj:
            raise TopologyError(f"unknown node {node}")
        return list(self._adj[node])

    def to_document(self) -> str:
        lines = ["node " + " ".join(str(n) for n in self.nodes)]
        for l in self.links:
            lines.append(
                f"link {l.link_id} {l.a[0]}:{l.a[1]} {l.b[0]}:{l.b[1]} "
                f"rate {_g(l.rate_bps)} weight {_g(l.base_weight)} delay {_g(l.delay_s)}"
            )
        for name in sorted(self.subnetworks):
            lines.append(f"subnet {name} " + " ".join(self.subnetworks[name]))
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.links == other.links
            and self.subnetworks == other.subnetworks
        )


def _g(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def neighbors(topology: Topology, node):
    return topology.neighbors(node)


def _endpoint(text, lineno):
    try:
        n, p = text.split(":")
        return int(n), int(p)
    except ValueError:
        raise TopologyError(f"bad endpoint {text!r}, expected <node>:<port>", lineno) from None


def load_topology(document: str) -> Topology:
    """Parse a topology document (or ``preset <name>``)."""
    nodes = []
    links = []
    subnets = {}
    preset = None
    where = {}  # entity -> line, for errors found once the graph is assembled
    for lineno, raw in enumerate(document.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kw = words[0]
        if kw == "preset":
            if len(words) != 2:
                raise TopologyError("preset takes one name", lineno)
            preset = (words[1], lineno)
        elif kw == "node":
            try:
                nodes.extend(int(w) for w in words[1:])
            except ValueError:
                raise TopologyError("node ids must be integers", lineno) from None
        elif kw == "link":
            if len(words) < 4:
                raise TopologyError("link needs <id> <node:port> <node:port>", lineno)
            opts = {"rate": DEFAULT_RATE_BPS, "weight": 1.0, "delay": 0.0}
            rest = words[4:]
            if len(rest) % 2:
                raise TopologyError("link options come in key/value pairs", lineno)
            for k, v in zip(rest[::2], rest[1::2]):
                if k not in opts:
                    raise TopologyError(f"unknown link option {k!r}", lineno)
                try:
                    opts[k] = float(v)
                except ValueError:
                    raise TopologyError(f"bad {k} value {v!r}", lineno) from None
            where[words[1]] = lineno
            try:
                links.append(
                    Link(words[1], _endpoint(words[2], lineno), _endpoint(words[3], lineno),
                         opts["rate"], opts["weight"], opts["delay"])
                )
            except TopologyError as e:
                raise TopologyError(str(e), lineno) from None
        elif kw == "subnet":
            if len(words) < 3:
                raise TopologyError("subnet needs a name and at least one link", lineno)
            subnets[words[1]] = tuple(words[2:])
            where["subnet " + words[1]] = lineno
        else:
            raise TopologyError(f"unknown keyword {kw!r}", lineno)
    if preset is not None:
        if nodes or links or subnets:
            raise TopologyError("preset cannot be combined with inline nodes/links", preset[1])
        return preset_topology(preset[0])
    try:
        return Topology(nodes, links, subnets)
    except TopologyError as e:
        raise TopologyError(e.msg, where.get(e.entity), e.entity) from None


# ---------------------------------------------------------------------------
# presets

# Ten nodes, eighteen links. Nodes 1 and 10 are the generator/receiver pair;
# nodes 3 and 5 source the cross traffic. The default 1<->10 route is
# 1-2-5-8-10; 1-4-7-9-10 is a link-disjoint alternate. Links 5-8 and 8-10
# form the "core" subnetwork where cross traffic meets the main flow.
PAPER10_EDGES = [
    ("L1", 1, 2), ("L2", 1, 4), ("L3", 2, 5), ("L4", 5, 8), ("L5", 8, 10),
    ("L6", 4, 7), ("L7", 7, 9), ("L8", 9, 10), ("L9", 2, 3), ("L10", 3, 5),
    ("L11", 3, 6), ("L12", 5, 6), ("L13", 6, 9), ("L14", 8, 9), ("L15", 4, 5),
    ("L16", 7, 8), ("L17", 2, 4), ("L18", 6, 8),
]

# Main flow 1->4 over 1-2-4 or 1-3-4; node 5 injects cross traffic on 2-4
# and node 6 can load the alternate 3-4.
TWOPATH_EDGES = [
    ("L1", 1, 2), ("L2", 2, 4), ("L3", 1, 3), ("L4", 3, 4), ("L5", 5, 2), ("L6", 6, 3),
]

LINE3_EDGES = [("L1", 1, 2), ("L2", 2, 3)]


def _from_edges(name, edges, rate_bps=DEFAULT_RATE_BPS, subnets=None):
    next_port = {}
    links = []
    for lid, u, v in edges:
        pu = next_port.get(u, 1)
        pv = next_port.get(v, 1)
        next_port[u] = pu + 1
        next_port[v] = pv + 1
        links.append(Link(lid, (u, pu), (v, pv), rate_bps))
    nodes = sorted({n for _, u, v in edges for n in (u, v)})
    return Topology(nodes, links, subnets or {}, name=name)


PRESETS = {
    "paper10": lambda: _from_edges("paper10", PAPER10_EDGES, subnets={"core": ("L4", "L5")}),
    "twopath": lambda: _from_edges("twopath", TWOPATH_EDGES, subnets={"primary": ("L1", "L2")}),
    "line3": lambda: _from_edges("line3", LINE3_EDGES),
}


def preset_topology(name: str) -> Topology:
    try:
        return PRESETS[name]()
    except KeyError:
        raise TopologyError(f"unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})") from None
