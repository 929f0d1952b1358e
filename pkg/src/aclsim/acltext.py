"""Line-oriented ACL text format.

One rule per line::

    <seq> <permit|deny|guard> [ethertype <hex>] [proto <n>] [len <min>-<max>]
        [vlan <id>] [ivlan <id>] [srcip <addr>/<prefix>] [dstip <addr>/<prefix>]
        [srcmac <mac>/<mask>] [dstmac <mac>/<mask>] [inport <id>]
        [sport <min>-<max>] [dport <min>-<max>] [tcpflags <val>/<mask>] [dscp <n>]
        [threshold <0.xx> action <alert|reroute|prio-drop <p>>]
        [police cir <bps> nb <bits> eb <bits>]

``#`` starts a comment. IP and MAC masks may also be written in address
form (``10.0.0.0/255.0.255.0``).
"""
from __future__ import annotations

import ipaddress

from aclsim import acl
from aclsim.packet import format_mac, parse_mac


class AclSyntaxError(ValueError):
    def __init__(self, msg, line=None, col=None, source=None):
        loc = ""
        if source:
            loc += f"{source}:"
        if line is not None:
            loc += f"{line}:{col or 1}: "
        super().__init__(loc + msg)
        self.line = line
        self.col = col


def _int(text):
    return int(text, 0)


def _num(text):
    v = float(text)
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"not a finite number: {text}")
    return v


def _range(text):
    if "-" in text:
        lo, hi = text.split("-", 1)
        return _int(lo), _int(hi)
    v = _int(text)
    return v, v


def _ip_masked(text):
    if "/" not in text:
        a = ipaddress.ip_address(text)
        return int(a), (1 << a.max_prefixlen) - 1, a.version
    addr, m = text.split("/", 1)
    a = ipaddress.ip_address(addr)
    width = a.max_prefixlen
    if "." in m or ":" in m:
        mask_addr = ipaddress.ip_address(m)
        if mask_addr.version != a.version:
            raise ValueError("mask and address families differ")
        mask = int(mask_addr)
    else:
        mask = acl.prefix_mask(int(m), width)
    return int(a), mask, a.version


def _mac_masked(text):
    if "/" not in text:
        return parse_mac(text), 2**48 - 1
    v, m = text.split("/", 1)
    if ":" in m or "-" in m:
        return parse_mac(v), parse_mac(m)
    return parse_mac(v), acl.prefix_mask(int(m), 48)


def _flags(text):
    if "/" in text:
        v, m = text.split("/", 1)
        return _int(v), _int(m)
    return _int(text), 0xFF


_FIELD_PARSERS = {
    "ethertype": lambda t: acl.Ethertype(int(t, 16) if not t.lower().startswith("0x") else int(t, 0)),
    "proto": lambda t: acl.IpProtocol(_int(t)),
    "len": lambda t: acl.PacketLength(*_range(t)),
    "vlan": lambda t: acl.VlanOuter(_int(t)),
    "ivlan": lambda t: acl.VlanInner(_int(t)),
    "srcip": lambda t: acl.SrcIp(*_ip_masked(t)),
    "dstip": lambda t: acl.DstIp(*_ip_masked(t)),
    "srcmac": lambda t: acl.SrcMac(*_mac_masked(t)),
    "dstmac": lambda t: acl.DstMac(*_mac_masked(t)),
    "inport": lambda t: acl.IngressPort(_int(t)),
    "sport": lambda t: acl.L4SrcPort(*_range(t)),
    "dport": lambda t: acl.L4DstPort(*_range(t)),
    "tcpflags": lambda t: acl.TcpControl(*_flags(t)),
    "dscp": lambda t: acl.Dscp(_int(t)),
}


def _tokens(line):
    """Yield (token, 1-based column)."""
    i, n = 0, len(line)
    while i < n:
        while i < n and line[i].isspace():
            i += 1
        if i >= n:
            break
        j = i
        while j < n and not line[j].isspace():
            j += 1
        yield line[i:j], i + 1
        i = j


def parse_rule(line: str, lineno=None, source=None) -> acl.AclRule:
    text = line.split("#", 1)[0]
    toks = list(_tokens(text))
    if not toks:
        raise AclSyntaxError("empty rule", lineno, 1, source)

    def err(msg, col):
        return AclSyntaxError(msg, lineno, col, source)

    def need(k):
        if k >= len(toks):
            raise err(f"missing value after {toks[k - 1][0]!r}", toks[k - 1][1])
        return toks[k]

    seq_tok, col = toks[0]
    try:
        seq = int(seq_tok)
    except ValueError:
        raise err(f"expected sequence number, got {seq_tok!r}", col) from None
    if len(toks) < 2:
        raise err("missing action", len(text) + 1)
    verb, vcol = toks[1]
    if verb not in ("permit", "deny", "guard"):
        raise err(f"unknown action {verb!r}", vcol)

    fields = []
    threshold = None
    guard_action = None
    police = None
    k = 2
    while k < len(toks):
        word, wcol = toks[k]
        if word in _FIELD_PARSERS:
            val, c = need(k + 1)
            try:
                fields.append(_FIELD_PARSERS[word](val))
            except (ValueError, acl.RuleError) as e:
                raise err(f"bad {word} value {val!r}: {e}", c) from None
            k += 2
        elif word == "threshold":
            val, c = need(k + 1)
            try:
                threshold = _num(val)
            except ValueError:
                raise err(f"bad threshold {val!r}", c) from None
            kw, c2 = need(k + 2)
            if kw != "action":
                raise err("expected 'action' after threshold value", c2)
            act, c3 = need(k + 3)
            k += 4
            if act == "alert":
                guard_action = acl.AlertOnly()
            elif act == "reroute":
                guard_action = acl.Reroute()
            elif act == "prio-drop":
                p, c4 = need(k)
                try:
                    guard_action = acl.DropByPriority(_int(p))
                except (ValueError, acl.RuleError) as e:
                    raise err(f"bad protected priority {p!r}: {e}", c4) from None
                k += 1
            else:
                raise err(f"unknown guard action {act!r}", c3)
        elif word == "police":
            vals = {}
            k += 1
            for name in ("cir", "nb", "eb"):
                kw, c = need(k)
                if kw != name:
                    raise err(f"expected {name!r}", c)
                val, c = need(k + 1)
                try:
                    vals[name] = _num(val)
                except ValueError:
                    raise err(f"bad {name} value {val!r}", c) from None
                k += 2
            police = (vals["cir"], vals["nb"], vals["eb"])
        else:
            raise err(f"unknown keyword {word!r}", wcol)

    try:
        if verb == "guard":
            if threshold is None:
                raise err("guard rule needs 'threshold <x> action <...>'", vcol)
            if police is not None:
                raise err("guard rule cannot police", vcol)
            action = acl.ThresholdGuard(threshold, guard_action)
        else:
            if threshold is not None:
                raise err(f"threshold only allowed on guard rules", vcol)
            if police is not None:
                if verb == "deny":
                    raise err("deny rule cannot police", vcol)
                action = acl.PermitPoliced(*police)
            else:
                action = acl.Permit() if verb == "permit" else acl.Deny()
        return acl.AclRule(seq, tuple(fields), action)
    except acl.RuleError as e:
        raise err(str(e), col) from None


def parse_acl(text: str, source=None) -> list:
    rules = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.split("#", 1)[0].strip():
            continue
        rule = parse_rule(line, lineno, source)
        if rule.seq in seen:
            raise AclSyntaxError(f"duplicate seq {rule.seq} (first on line {seen[rule.seq]})", lineno, 1, source)
        seen[rule.seq] = lineno
        rules.append(rule)
    return rules


def load_acl(path, stack_id=None) -> acl.AclStack:
    with open(path) as fh:
        text = fh.read()
    return acl.AclStack(stack_id or str(path), parse_acl(text, source=str(path)))


# ---------------------------------------------------------------------------
# canonical printing


def _fmt_num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e18 else repr(v)


def _fmt_range(lo, hi):
    return str(lo) if lo == hi else f"{lo}-{hi}"


def _fmt_ip(f):
    width = 32 if f.version == 4 else 128
    cls = ipaddress.IPv4Address if f.version == 4 else ipaddress.IPv6Address
    addr = cls(f.value)
    inv = ~f.mask & ((1 << width) - 1)
    if inv & (inv + 1) == 0:
        return f"{addr}/{width - inv.bit_length()}"
    return f"{addr}/{cls(f.mask)}"


def format_field(f) -> str:
    if isinstance(f, acl.Ethertype):
        return f"ethertype 0x{f.value:04x}"
    if isinstance(f, acl.IpProtocol):
        return f"proto {f.value}"
    if isinstance(f, acl.PacketLength):
        return f"len {f.min}-{f.max}"
    if isinstance(f, acl.VlanOuter):
        return f"vlan {f.id}"
    if isinstance(f, acl.VlanInner):
        return f"ivlan {f.id}"
    if isinstance(f, acl.SrcIp):
        return f"srcip {_fmt_ip(f)}"
    if isinstance(f, acl.DstIp):
        return f"dstip {_fmt_ip(f)}"
    if isinstance(f, acl.SrcMac):
        return f"srcmac {format_mac(f.value)}/{format_mac(f.mask)}"
    if isinstance(f, acl.DstMac):
        return f"dstmac {format_mac(f.value)}/{format_mac(f.mask)}"
    if isinstance(f, acl.IngressPort):
        return f"inport {f.port}"
    if isinstance(f, acl.L4SrcPort):
        return f"sport {_fmt_range(f.min, f.max)}"
    if isinstance(f, acl.L4DstPort):
        return f"dport {_fmt_range(f.min, f.max)}"
    if isinstance(f, acl.TcpControl):
        return f"tcpflags 0x{f.value:02x}/0x{f.mask:02x}"
    if isinstance(f, acl.Dscp):
        return f"dscp {f.value}"
    raise TypeError(f"unknown field {f!r}")


def format_rule(rule: acl.AclRule) -> str:
    a = rule.action
    verb = {acl.Deny: "deny", acl.ThresholdGuard: "guard"}.get(type(a), "permit")
    parts = [str(rule.seq), verb]
    parts += [format_field(f) for f in rule.fields]
    if isinstance(a, acl.ThresholdGuard):
        g = a.on_exceed
        if isinstance(g, acl.AlertOnly):
            act = "alert"
        elif isinstance(g, acl.Reroute):
            act = "reroute"
        else:
            act = f"prio-drop {g.min_protected_priority}"
        parts.append(f"threshold {a.link_load_threshold!r} action {act}")
    elif isinstance(a, acl.PermitPoliced):
        parts.append(
            f"police cir {_fmt_num(a.cir_bps)} nb {_fmt_num(a.normal_burst_bits)} "
            f"eb {_fmt_num(a.excess_burst_bits)}"
        )
    return " ".join(parts)


def format_acl(rules) -> str:
    if isinstance(rules, acl.AclStack):
        rules = rules.rules
    return "".join(format_rule(r) + "\n" for r in rules)
