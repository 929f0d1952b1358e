"""Ordered first-match ACLs with masked fields, policing and load guards."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

from aclsim.packet import Frame, wire_bits


class AclError(Exception):
    pass


class RuleError(AclError, ValueError):
    """Malformed rule or match field."""


class EditError(AclError):
    """Duplicate or missing sequence number, bad reorder."""


class EmptinessError(EditError):
    pass


class BindingError(AclError):
    pass


class ClockError(AclError, ValueError):
    pass


# ---------------------------------------------------------------------------
# match fields


def _check_masked(name, value, mask, width):
    top = (1 << width) - 1
    if not 0 <= mask <= top:
        raise RuleError(f"{name}: mask out of range")
    if not 0 <= value <= top:
        raise RuleError(f"{name}: value out of range")
    if value & ~mask:
        raise RuleError(f"{name}: value has bits set outside the mask")


def _masked_covers(a_value, a_mask, b_value, b_mask):
    # every address matching b also matches a
    return (a_mask & ~b_mask) == 0 and (b_value & a_mask) == a_value


def _check_range(name, lo, hi, top):
    if not (0 <= lo <= hi <= top):
        raise RuleError(f"{name}: need 0 <= min <= max <= {top}, got {lo}-{hi}")


@dataclass(frozen=True)
class Ethertype:
    value: int

    def __post_init__(self):
        _check_range("ethertype", self.value, self.value, 0xFFFF)

    def matches(self, frame, port):
        return frame.ethertype == self.value

    def covers(self, other):
        return self == other


@dataclass(frozen=True)
class IpProtocol:
    value: int

    def __post_init__(self):
        _check_range("proto", self.value, self.value, 255)

    def matches(self, frame, port):
        return frame.ip is not None and frame.ip.protocol == self.value

    def covers(self, other):
        return self == other


@dataclass(frozen=True)
class PacketLength:
    min: int
    max: int

    def __post_init__(self):
        _check_range("len", self.min, self.max, 0xFFFF)

    def matches(self, frame, port):
        return self.min <= frame.size_bytes <= self.max

    def covers(self, other):
        return self.min <= other.min and other.max <= self.max


@dataclass(frozen=True)
class VlanOuter:
    id: int

    def __post_init__(self):
        _check_range("vlan", self.id, self.id, 4095)

    def matches(self, frame, port):
        return frame.vlan is not None and frame.vlan.outer_id == self.id

    def covers(self, other):
        return self == other


@dataclass(frozen=True)
class VlanInner:
    id: int

    def __post_init__(self):
        _check_range("ivlan", self.id, self.id, 4095)

    def matches(self, frame, port):
        return frame.vlan is not None and frame.vlan.inner_id == self.id

    def covers(self, other):
        return self == other


@dataclass(frozen=True)
class SrcMac:
    value: int
    mask: int = 2**48 - 1

    def __post_init__(self):
        _check_masked("srcmac", self.value, self.mask, 48)

    def matches(self, frame, port):
        return frame.src_mac & self.mask == self.value

    def covers(self, other):
        return _masked_covers(self.value, self.mask, other.value, other.mask)


@dataclass(frozen=True)
class DstMac:
    value: int
    mask: int = 2**48 - 1

    def __post_init__(self):
        _check_masked("dstmac", self.value, self.mask, 48)

    def matches(self, frame, port):
        return frame.dst_mac & self.mask == self.value

    def covers(self, other):
        return _masked_covers(self.value, self.mask, other.value, other.mask)


def prefix_mask(prefix: int, width: int) -> int:
    if not 0 <= prefix <= width:
        raise RuleError(f"prefix length {prefix} outside [0, {width}]")
    return ((1 << prefix) - 1) << (width - prefix)


@dataclass(frozen=True)
class _IpMatch:
    value: int
    mask: int
    version: int = 4

    def __post_init__(self):
        if self.version not in (4, 6):
            raise RuleError("ip version must be 4 or 6")
        _check_masked(type(self).__name__, self.value, self.mask, 32 if self.version == 4 else 128)

    @classmethod
    def from_prefix(cls, text: str):
        import ipaddress

        net = ipaddress.ip_network(text, strict=True)
        width = net.max_prefixlen
        return cls(int(net.network_address), prefix_mask(net.prefixlen, width), net.version)

    def covers(self, other):
        return self.version == other.version and _masked_covers(
            self.value, self.mask, other.value, other.mask
        )


class SrcIp(_IpMatch):
    def matches(self, frame, port):
        ip = frame.ip
        return ip is not None and ip.version == self.version and ip.src_addr & self.mask == self.value


class DstIp(_IpMatch):
    def matches(self, frame, port):
        ip = frame.ip
        return ip is not None and ip.version == self.version and ip.dst_addr & self.mask == self.value


@dataclass(frozen=True)
class IngressPort:
    port: int

    def matches(self, frame, port):
        if isinstance(port, tuple):
            port = port[1]
        return port == self.port

    def covers(self, other):
        return self == other


@dataclass(frozen=True)
class L4SrcPort:
    min: int
    max: int

    def __post_init__(self):
        _check_range("sport", self.min, self.max, 0xFFFF)

    def matches(self, frame, port):
        return frame.l4 is not None and self.min <= frame.l4.src_port <= self.max

    def covers(self, other):
        return self.min <= other.min and other.max <= self.max


@dataclass(frozen=True)
class L4DstPort:
    min: int
    max: int

    def __post_init__(self):
        _check_range("dport", self.min, self.max, 0xFFFF)

    def matches(self, frame, port):
        return frame.l4 is not None and self.min <= frame.l4.dst_port <= self.max

    def covers(self, other):
        return self.min <= other.min and other.max <= self.max


@dataclass(frozen=True)
class TcpControl:
    value: int
    mask: int = 0xFF

    def __post_init__(self):
        _check_masked("tcpflags", self.value, self.mask, 8)

    def matches(self, frame, port):
        return frame.l4 is not None and frame.l4.tcp_flags & self.mask == self.value

    def covers(self, other):
        return _masked_covers(self.value, self.mask, other.value, other.mask)


@dataclass(frozen=True)
class Dscp:
    value: int

    def __post_init__(self):
        _check_range("dscp", self.value, self.value, 63)

    def matches(self, frame, port):
        return frame.ip is not None and frame.ip.dscp == self.value

    def covers(self, other):
        return self == other


# canonical field order, also the text-format order
FIELD_KINDS = (
    Ethertype, IpProtocol, PacketLength, VlanOuter, VlanInner, SrcIp, DstIp,
    SrcMac, DstMac, IngressPort, L4SrcPort, L4DstPort, TcpControl, Dscp,
)
_KIND_ORDER = {k: i for i, k in enumerate(FIELD_KINDS)}

MatchField = Union[
    Ethertype, IpProtocol, PacketLength, VlanOuter, VlanInner, SrcIp, DstIp,
    SrcMac, DstMac, IngressPort, L4SrcPort, L4DstPort, TcpControl, Dscp,
]


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Permit:
    pass


@dataclass(frozen=True)
class Deny:
    pass


@dataclass(frozen=True)
class PermitPoliced:
    cir_bps: float
    normal_burst_bits: float
    excess_burst_bits: float

    def __post_init__(self):
        if min(self.cir_bps, self.normal_burst_bits, self.excess_burst_bits) <= 0:
            raise RuleError("police: rates and bursts must be positive")
        if self.normal_burst_bits > self.excess_burst_bits:
            raise RuleError("police: normal burst exceeds excess burst")


@dataclass(frozen=True)
class AlertOnly:
    pass


@dataclass(frozen=True)
class Reroute:
    pass


@dataclass(frozen=True)
class DropByPriority:
    min_protected_priority: int

    def __post_init__(self):
        if not 0 <= self.min_protected_priority <= 7:
            raise RuleError("prio-drop: protected priority outside 0..7")


GuardAction = Union[AlertOnly, Reroute, DropByPriority]


@dataclass(frozen=True)
class ThresholdGuard:
    link_load_threshold: float
    on_exceed: GuardAction = Reroute()

    def __post_init__(self):
        if not 0 < self.link_load_threshold <= 1:
            raise RuleError(f"threshold {self.link_load_threshold} outside (0, 1]")


Action = Union[Permit, Deny, PermitPoliced, ThresholdGuard]


@dataclass(frozen=True)
class AclRule:
    seq: int
    fields: Tuple[MatchField, ...] = ()
    action: Action = Permit()

    def __post_init__(self):
        if not isinstance(self.seq, int) or self.seq < 0:
            raise RuleError(f"seq must be a non-negative integer, got {self.seq!r}")
        kinds = [type(f) for f in self.fields]
        if len(set(kinds)) != len(kinds):
            raise RuleError(f"seq {self.seq}: more than one match field of the same kind")
        for k in kinds:
            if k not in _KIND_ORDER:
                raise RuleError(f"seq {self.seq}: unknown match field {k.__name__}")
        ordered = tuple(sorted(self.fields, key=lambda f: _KIND_ORDER[type(f)]))
        object.__setattr__(self, "fields", ordered)

    def matches(self, frame: Frame, port=None) -> bool:
        return all(f.matches(frame, port) for f in self.fields)


# ---------------------------------------------------------------------------
# stacks


class AclStack:
    """An ordered rule list; seq numbers strictly increase in list order.

    Edits happen in place. A stack bound to an ingress port (see
    :class:`AclBindings`) may not become empty.
    """

    def __init__(self, stack_id: str, rules: Iterable[AclRule] = ()):
        self.stack_id = stack_id
        self.rules: list = []
        self.bound_to = None
        self.link = None
        for r in sorted(rules, key=lambda r: r.seq):
            self.insert(r)

    def __repr__(self):
        return f"AclStack({self.stack_id!r}, seqs={self.seqs()})"

    def __len__(self):
        return len(self.rules)

    def seqs(self):
        return [r.seq for r in self.rules]

    def insert(self, rule: AclRule) -> "AclStack":
        if any(r.seq == rule.seq for r in self.rules):
            raise EditError(f"duplicate seq {rule.seq}")
        i = 0
        while i < len(self.rules) and self.rules[i].seq < rule.seq:
            i += 1
        self.rules.insert(i, rule)
        return self

    def delete(self, seq: int) -> "AclStack":
        for i, r in enumerate(self.rules):
            if r.seq == seq:
                break
        else:
            raise EditError(f"no rule with seq {seq}")
        if self.bound_to is not None and len(self.rules) == 1:
            raise EmptinessError(f"stack {self.stack_id} is bound and would become empty")
        del self.rules[i]
        return self

    def replace(self, rule: AclRule) -> "AclStack":
        for i, r in enumerate(self.rules):
            if r.seq == rule.seq:
                self.rules[i] = rule
                return self
        raise EditError(f"no rule with seq {rule.seq}")

    def reorder(self, new_seq_order: Sequence[int]) -> "AclStack":
        """Put rules in the order given by their current seqs.

        The rules are then renumbered with the existing seq values in
        ascending order so seqs keep increasing down the list.
        """
        old = self.seqs()
        if sorted(new_seq_order) != old:
            raise EditError(f"{list(new_seq_order)} is not a permutation of {old}")
        by_seq = {r.seq: r for r in self.rules}
        self.rules = [
            AclRule(seq, by_seq[s].fields, by_seq[s].action)
            for seq, s in zip(old, new_seq_order)
        ]
        return self

    def clear(self):
        if self.bound_to is not None:
            raise EmptinessError(f"stack {self.stack_id} is bound")
        self.rules = []


class AclBindings:
    """At most one stack per ingress (node, port)."""

    def __init__(self):
        self._by_port: dict = {}

    def bind(self, stack: AclStack, node, port, link=None) -> None:
        key = (node, port)
        if key in self._by_port:
            raise BindingError(f"port {node}:{port} already has stack {self._by_port[key].stack_id}")
        if stack.bound_to is not None:
            raise BindingError(f"stack {stack.stack_id} already bound to {stack.bound_to}")
        if not stack.rules:
            raise EmptinessError(f"cannot bind empty stack {stack.stack_id}")
        stack.bound_to = key
        stack.link = link
        self._by_port[key] = stack

    def unbind(self, node, port) -> AclStack:
        stack = self._by_port.pop((node, port))
        stack.bound_to = None
        return stack

    def get(self, node, port) -> Optional[AclStack]:
        return self._by_port.get((node, port))

    def items(self):
        return sorted(self._by_port.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1])))

    def __len__(self):
        return len(self._by_port)


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class Verdict:
    action: str  # "permit" | "deny" | "guard"
    matched_seq: Optional[int] = None
    guard: Optional[GuardAction] = None
    policer: Optional[PermitPoliced] = None
    threshold: Optional[float] = None

    @property
    def forwarded(self) -> bool:
        return self.action != "deny"


IMPLICIT_DENY = Verdict("deny")


def classify(frame: Frame, ingress_port, stack: AclStack, link_load: float = 0.0) -> Verdict:
    """First-match classification of *frame* arriving on *ingress_port*.

    *ingress_port* is either a port id or a ``(node, port)`` pair. A
    matching threshold guard only yields a guard verdict when *link_load*
    is strictly above its threshold; otherwise it permits.
    """
    if stack.bound_to is not None:
        bound = stack.bound_to
        ok = ingress_port == bound if isinstance(ingress_port, tuple) else ingress_port == bound[1]
        if not ok:
            raise BindingError(f"stack {stack.stack_id} is bound to {bound}, not {ingress_port}")
    for rule in stack.rules:
        for f in rule.fields:
            if not f.matches(frame, ingress_port):
                break
        else:
            a = rule.action
            if isinstance(a, Permit):
                return Verdict("permit", rule.seq)
            if isinstance(a, Deny):
                return Verdict("deny", rule.seq)
            if isinstance(a, PermitPoliced):
                return Verdict("permit", rule.seq, policer=a)
            if link_load > a.link_load_threshold:
                return Verdict("guard", rule.seq, guard=a.on_exceed, threshold=a.link_load_threshold)
            return Verdict("permit", rule.seq, threshold=a.link_load_threshold)
    return IMPLICIT_DENY


def rule_covers(general: AclRule, specific: AclRule) -> bool:
    """True when every frame matching *specific* also matches *general*.

    Field-wise and conservative: a False result does not prove the rules
    overlap only partially.
    """
    by_kind = {type(f): f for f in specific.fields}
    for g in general.fields:
        s = by_kind.get(type(g))
        if s is None or not g.covers(s):
            return False
    return True


@dataclass(frozen=True)
class LintWarning:
    shadowed_seq: int
    by_seq: int

    def __str__(self):
        return f"seq {self.shadowed_seq} shadowed by seq {self.by_seq}: it can never match"


def lint_specific_before_general(stack: AclStack) -> list:
    out = []
    rules = stack.rules
    for j in range(len(rules)):
        for i in range(j):
            if rule_covers(rules[i], rules[j]):
                out.append(LintWarning(rules[j].seq, rules[i].seq))
    return out


# ---------------------------------------------------------------------------
# policing

CONFORM = "conform"
EXCEED = "exceed"
VIOLATE = "violate"

# absorbs float rounding in tokens accrued over elapsed time
TOKEN_EPS = 1e-6


@dataclass
class Policer:
    """Token bucket with a normal and an excess burst ceiling.

    Tokens accrue at ``cir_bps`` up to ``excess_burst_bits``. A frame
    conforms if it fits in ``min(tokens, normal_burst_bits)``, exceeds if
    it fits in the tokens available, and violates otherwise. Violating
    frames take no tokens.
    """

    cir_bps: float
    normal_burst_bits: float
    excess_burst_bits: float
    tokens: float = field(default=-1.0)
    last_update: float = 0.0

    def __post_init__(self):
        PermitPoliced(self.cir_bps, self.normal_burst_bits, self.excess_burst_bits)
        if self.tokens < 0:
            self.tokens = float(self.normal_burst_bits)

    @classmethod
    def from_action(cls, action: PermitPoliced, now: float = 0.0) -> "Policer":
        return cls(action.cir_bps, action.normal_burst_bits, action.excess_burst_bits, last_update=now)

    def police_bits(self, bits: float, now: float) -> str:
        if now < self.last_update:
            raise ClockError(f"time went backwards: {now} < {self.last_update}")
        self.tokens = min(
            self.excess_burst_bits, self.tokens + self.cir_bps * (now - self.last_update)
        )
        self.last_update = now
        if bits <= min(self.tokens, self.normal_burst_bits) + TOKEN_EPS:
            self.tokens = max(0.0, self.tokens - bits)
            return CONFORM
        if bits <= self.tokens + TOKEN_EPS:
            self.tokens = max(0.0, self.tokens - bits)
            return EXCEED
        return VIOLATE


def police(policer: Policer, frame: Frame, now: float) -> str:
    return policer.police_bits(wire_bits(frame), now)
