"""Sectioned text scenario files.

Example::

    [topology]
    preset paper10

    [generators]
    a 1 10 load 85 size 512
    x3 3 8 load 6 size 74 kind burst period 10 count 800 measured no

    [acl]
    bind 8:1 guard.acl
    rule 4:1 10 guard srcip 10.0.0.1/32 threshold 0.9 action reroute

    [thresholds]
    link 0.9
    margin 0.1

    [schedule]
    start 2
    duration 100
    drain 15
    scale 0.01

    [sweep]
    mode loss
    loads 95 85
    sizes 512 1024 1280 1518
    trials 4

    [run]
    seed 0
    guard on
    format csv

Times (schedule, burst period and offset) are written at full scale and
multiplied by ``scale`` when run. ``bind`` paths are relative to the
scenario file. ``rule`` lines build an inline stack for that port, in
order. Generator tokens of the form ``key=value`` set frame headers
(``ip.dscp=40``).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from aclsim import acl
from aclsim.acltext import AclSyntaxError, format_rule, parse_acl, parse_rule
from aclsim.monitor import Thresholds
from aclsim.sim import GeneratorSpec, Schedule, SimError
from aclsim.topology import Topology, TopologyError, load_topology

SECTIONS = ("topology", "generators", "acl", "thresholds", "schedule", "sweep", "run")
MODES = ("loss", "throughput", "compare")


class ScenarioError(ValueError):
    def __init__(self, msg, line=None, col=None, source=None):
        where = ""
        if line is not None:
            where = f"{source or '<scenario>'}:{line}:{col or 1}: "
        super().__init__(where + msg)
        self.line = line
        self.col = col


@dataclass
class SweepSection:
    mode: str = "loss"
    loads: Tuple[float, ...] = (100, 90, 80, 70, 60, 50, 40, 30, 20, 10)
    sizes: Tuple[int, ...] = (512, 1024, 1280, 1518)
    trials: int = 4
    resolution: Optional[float] = None


@dataclass
class Scenario:
    topology_doc: str
    topology: Topology
    generators: List[GeneratorSpec]
    acl_files: Dict[Tuple[int, int], str] = field(default_factory=dict)
    acl_rules: Dict[Tuple[int, int], list] = field(default_factory=dict)
    acl_links: Dict[Tuple[int, int], str] = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)
    schedule: Schedule = field(default_factory=Schedule)
    duration_scale: float = 1.0
    queue_capacity: int = 128
    sweep: Optional[SweepSection] = None
    seed: int = 0
    guard: bool = True
    format: str = "csv"
    out: Optional[str] = None
    base_dir: str = "."

    def acl_texts(self) -> Dict[Tuple[int, int], Tuple[str, Optional[str]]]:
        """(node, port) -> (ACL text, link) with files read and inline rules rendered."""
        out = {}
        for key, path in self.acl_files.items():
            full = path if os.path.isabs(path) else os.path.join(self.base_dir, path)
            try:
                with open(full) as fh:
                    text = fh.read()
            except OSError:
                raise ScenarioError(f"ACL file not found: {path}") from None
            try:
                parse_acl(text, source=path)
            except AclSyntaxError as e:
                raise ScenarioError(str(e)) from None
            out[key] = (text, self.acl_links.get(key))
        for key, rules in self.acl_rules.items():
            out[key] = ("".join(format_rule(r) + "\n" for r in rules), self.acl_links.get(key))
        return out

    def bindings(self) -> acl.AclBindings:
        b = acl.AclBindings()
        for (node, port), (text, link) in sorted(self.acl_texts().items()):
            b.bind(acl.AclStack(f"acl-{node}-{port}", parse_acl(text)), node, port, link)
        return b

    def scaled_schedule(self) -> Schedule:
        s = self.duration_scale
        return Schedule(self.schedule.start_delay * s, self.schedule.duration * s, self.schedule.drain * s)

    def scaled_generators(self) -> List[GeneratorSpec]:
        s = self.duration_scale
        return [replace(g, period=g.period * s, burst_offset=g.burst_offset * s) for g in self.generators]


# -- parsing -----------------------------------------------------------------


def _num(tok, line, col, kind=float):
    try:
        v = kind(tok)
    except ValueError:
        raise ScenarioError(f"expected a number, got {tok!r}", line, col) from None
    return v


def _tokens(text):
    """(col, word) pairs of a line."""
    out = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < len(text) and not text[j].isspace():
            j += 1
        out.append((i + 1, text[i:j]))
        i = j
    return out


def _header_value(v):
    try:
        return int(v, 0)
    except ValueError:
        return v


def _parse_generator(toks, line):
    if len(toks) < 3:
        raise ScenarioError("generator needs <name> <src> <dst>", line, toks[0][0])
    name = toks[0][1]
    src = _num(toks[1][1], line, toks[1][0], int)
    dst = _num(toks[2][1], line, toks[2][0], int)
    kw = {}
    headers = {}
    keys = {
        "load": ("load_percent", float), "size": ("frame_size", int), "kind": ("kind", str),
        "period": ("period", float), "count": ("burst_count", int), "offset": ("burst_offset", float),
        "measured": ("measured", str), "access": ("access_rate_bps", float),
    }
    rest = toks[3:]
    i = 0
    while i < len(rest):
        col, word = rest[i]
        if "=" in word:
            k, v = word.split("=", 1)
            headers[k] = _header_value(v)
            i += 1
            continue
        if word not in keys:
            raise ScenarioError(f"unknown generator option {word!r}", line, col)
        if i + 1 >= len(rest):
            raise ScenarioError(f"{word} needs a value", line, col)
        attr, kind = keys[word]
        vcol, val = rest[i + 1]
        if attr == "measured":
            if val not in ("yes", "no"):
                raise ScenarioError("measured takes yes or no", line, vcol)
            kw[attr] = val == "yes"
        elif kind is str:
            kw[attr] = val
        else:
            kw[attr] = _num(val, line, vcol, kind)
        i += 2
    if "load_percent" not in kw:
        raise ScenarioError(f"generator {name} needs a load", line, toks[0][0])
    try:
        return GeneratorSpec(name, src, dst, headers=headers or None, **kw)
    except SimError as e:
        raise ScenarioError(str(e), line, toks[0][0]) from None


def _port(tok, line, col):
    try:
        n, p = tok.split(":")
        return int(n), int(p)
    except ValueError:
        raise ScenarioError(f"expected <node>:<port>, got {tok!r}", line, col) from None


def _on_off(tok, line, col):
    if tok not in ("on", "off"):
        raise ScenarioError("expected on or off", line, col)
    return tok == "on"


def parse_scenario(text: str, source=None, base_dir=".") -> Scenario:
    sections: Dict[str, List[Tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        s = line.strip()
        if s.startswith("["):
            if not s.endswith("]") or s[1:-1] not in SECTIONS:
                raise ScenarioError(f"unknown section {s}", lineno, 1, source)
            current = s[1:-1]
            if current in sections:
                raise ScenarioError(f"section [{current}] appears twice", lineno, 1, source)
            sections[current] = []
            continue
        if current is None:
            raise ScenarioError("content before the first section", lineno, 1, source)
        sections[current].append((lineno, line))

    def fail(msg, line=None, col=None):
        raise ScenarioError(msg, line, col, source)

    if "topology" not in sections or not sections["topology"]:
        fail("missing [topology] section")
    topo_lines = sections["topology"]
    doc = "\n".join(l.strip() for _, l in topo_lines) + "\n"
    try:
        topology = load_topology(doc)
    except TopologyError as e:
        # report against the scenario's own line numbers
        line = topo_lines[e.line - 1][0] if e.line else topo_lines[0][0]
        fail(e.msg, line, 1)

    sc = Scenario(doc, topology, [], base_dir=base_dir)
    try:
        for lineno, line in sections.get("generators", []):
            sc.generators.append(_parse_generator(_tokens(line), lineno))
        names = [g.name for g in sc.generators]
        if len(set(names)) != len(names):
            fail("duplicate generator names")
        for g in sc.generators:
            for n in (g.src, g.dst):
                if n not in topology.nodes:
                    fail(f"generator {g.name}: unknown node {n}")

        for lineno, line in sections.get("acl", []):
            toks = _tokens(line)
            verb = toks[0][1]
            if verb not in ("bind", "rule", "link") or len(toks) < 3:
                fail("expected 'bind <node>:<port> <file>', 'rule <node>:<port> <rule>' "
                     "or 'link <node>:<port> <link-id>'", lineno, toks[0][0])
            key = _port(toks[1][1], lineno, toks[1][0])
            node, port = key
            if node not in topology.nodes:
                fail(f"unknown node {node}", lineno, toks[1][0])
            if port != 0 and topology.link_at_port(node, port) is None:
                fail(f"node {node} has no port {port}", lineno, toks[1][0])
            if verb == "bind":
                if key in sc.acl_files or key in sc.acl_rules:
                    fail(f"port {node}:{port} already has an ACL", lineno, toks[0][0])
                sc.acl_files[key] = toks[2][1]
            elif verb == "link":
                if not topology.has_link(toks[2][1]):
                    fail(f"unknown link {toks[2][1]}", lineno, toks[2][0])
                sc.acl_links[key] = toks[2][1]
            else:
                if key in sc.acl_files:
                    fail(f"port {node}:{port} already has an ACL file", lineno, toks[0][0])
                col = toks[2][0]
                try:
                    rule = parse_rule(line[col - 1:], lineno, source)
                except AclSyntaxError as e:
                    raise ScenarioError(str(e)) from None
                rules = sc.acl_rules.setdefault(key, [])
                if rules and rule.seq <= rules[-1].seq:
                    fail(f"rule seq {rule.seq} not above {rules[-1].seq}", lineno, col)
                rules.append(rule)
        for key in sc.acl_links:
            if key not in sc.acl_files and key not in sc.acl_rules:
                fail(f"link given for {key[0]}:{key[1]} which has no ACL")

        th = {}
        names = {"link": "link_util", "port": "port_util", "subnet": "subnet_avg_util", "margin": "clear_margin"}
        for lineno, line in sections.get("thresholds", []):
            toks = _tokens(line)
            if len(toks) != 2 or toks[0][1] not in names:
                fail("expected 'link|port|subnet|margin <value>'", lineno, toks[0][0])
            th[names[toks[0][1]]] = _num(toks[1][1], lineno, toks[1][0])
        try:
            sc.thresholds = Thresholds(**th)
        except ValueError as e:
            fail(str(e))

        sched = {}
        names = {"start": "start_delay", "duration": "duration", "drain": "drain"}
        for lineno, line in sections.get("schedule", []):
            toks = _tokens(line)
            if len(toks) != 2:
                fail("expected '<key> <value>'", lineno, toks[0][0])
            k, v = toks[0][1], toks[1]
            if k in names:
                sched[names[k]] = _num(v[1], lineno, v[0])
            elif k == "scale":
                sc.duration_scale = _num(v[1], lineno, v[0])
                if sc.duration_scale <= 0:
                    fail("scale must be positive", lineno, v[0])
            elif k == "queue":
                sc.queue_capacity = _num(v[1], lineno, v[0], int)
                if sc.queue_capacity < 1:
                    fail("queue must be at least 1", lineno, v[0])
            else:
                fail(f"unknown schedule key {k!r}", lineno, toks[0][0])
        try:
            sc.schedule = Schedule(**sched)
        except SimError as e:
            fail(str(e))

        if "sweep" in sections:
            sw = SweepSection()
            for lineno, line in sections["sweep"]:
                toks = _tokens(line)
                k = toks[0][1]
                vals = toks[1:]
                if not vals:
                    fail(f"{k} needs a value", lineno, toks[0][0])
                if k == "mode":
                    if vals[0][1] not in MODES:
                        fail(f"mode must be one of {', '.join(MODES)}", lineno, vals[0][0])
                    sw.mode = vals[0][1]
                elif k == "loads":
                    sw.loads = tuple(_num(w, lineno, c) for c, w in vals)
                elif k == "sizes":
                    sw.sizes = tuple(_num(w, lineno, c, int) for c, w in vals)
                elif k == "trials":
                    sw.trials = _num(vals[0][1], lineno, vals[0][0], int)
                elif k == "resolution":
                    sw.resolution = _num(vals[0][1], lineno, vals[0][0])
                else:
                    fail(f"unknown sweep key {k!r}", lineno, toks[0][0])
            if not any(g.measured for g in sc.generators):
                fail("a sweep needs at least one measured generator")
            sc.sweep = sw

        for lineno, line in sections.get("run", []):
            toks = _tokens(line)
            if len(toks) != 2:
                fail("expected '<key> <value>'", lineno, toks[0][0])
            k, (vc, v) = toks[0][1], toks[1]
            if k == "seed":
                sc.seed = _num(v, lineno, vc, int)
            elif k == "guard":
                sc.guard = _on_off(v, lineno, vc)
            elif k == "format":
                if v not in ("csv", "json"):
                    fail("format must be csv or json", lineno, vc)
                sc.format = v
            elif k == "out":
                sc.out = v
            else:
                fail(f"unknown run key {k!r}", lineno, toks[0][0])
    except ScenarioError as e:
        if e.line is not None and source and not str(e).startswith(source):
            raise ScenarioError(str(e).split(": ", 1)[-1], e.line, e.col, source) from None
        raise
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        text = fh.read()
    return parse_scenario(text, source=str(path), base_dir=os.path.dirname(os.path.abspath(path)))


# -- canonical printing --------------------------------------------------------


def _g(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def format_generator(g: GeneratorSpec) -> str:
    parts = [g.name, str(g.src), str(g.dst), "load", _g(g.load_percent), "size", str(g.frame_size)]
    burst = g.kind != "constant"
    if burst:
        parts += ["kind", g.kind]
    if burst or g.period != 10.0:
        parts += ["period", _g(g.period)]
    if burst or g.burst_count != 1:
        parts += ["count", str(g.burst_count)]
    if g.burst_offset:
        parts += ["offset", _g(g.burst_offset)]
    if not g.measured:
        parts += ["measured", "no"]
    if g.access_rate_bps is not None:
        parts += ["access", _g(g.access_rate_bps)]
    for k in sorted(g.headers or {}):
        parts.append(f"{k}={g.headers[k]}")
    return " ".join(parts)


def format_scenario(sc: Scenario) -> str:
    out = ["[topology]"]
    out += sc.topology_doc.strip().splitlines()
    out += ["", "[generators]"]
    out += [format_generator(g) for g in sc.generators]
    out += ["", "[acl]"]
    for (n, p) in sorted(sc.acl_files):
        out.append(f"bind {n}:{p} {sc.acl_files[(n, p)]}")
    for (n, p) in sorted(sc.acl_rules):
        out += [f"rule {n}:{p} {format_rule(r)}" for r in sc.acl_rules[(n, p)]]
    for (n, p) in sorted(sc.acl_links):
        out.append(f"link {n}:{p} {sc.acl_links[(n, p)]}")
    t = sc.thresholds
    out += ["", "[thresholds]", f"link {_g(t.link_util)}"]
    if t.port_util is not None:
        out.append(f"port {_g(t.port_util)}")
    if t.subnet_avg_util is not None:
        out.append(f"subnet {_g(t.subnet_avg_util)}")
    out.append(f"margin {_g(t.clear_margin)}")
    s = sc.schedule
    out += [
        "", "[schedule]", f"start {_g(s.start_delay)}", f"duration {_g(s.duration)}",
        f"drain {_g(s.drain)}", f"scale {_g(sc.duration_scale)}", f"queue {sc.queue_capacity}",
    ]
    if sc.sweep is not None:
        w = sc.sweep
        out += [
            "", "[sweep]", f"mode {w.mode}", "loads " + " ".join(_g(x) for x in w.loads),
            "sizes " + " ".join(str(x) for x in w.sizes), f"trials {w.trials}",
        ]
        if w.resolution is not None:
            out.append(f"resolution {_g(w.resolution)}")
    out += ["", "[run]", f"seed {sc.seed}", f"guard {'on' if sc.guard else 'off'}", f"format {sc.format}"]
    if sc.out is not None:
        out.append(f"out {sc.out}")
    return "\n".join(out) + "\n"
