"""Simulated Ethernet/IP frames.

Headers are kept as plain fields rather than byte buffers; the classifier
only ever needs field values.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Any, Mapping, Optional

MIN_FRAME = 64
MAX_FRAME = 1518
MAX_TAGGED_FRAME = 1522
MIN_ICMP_FRAME = 74

# 8 bytes preamble/SFD + 12 bytes inter-frame gap
WIRE_OVERHEAD_BYTES = 20

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17


class FrameError(ValueError):
    """A header value is out of range."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


class FrameSizeError(FrameError):
    pass


@dataclass(frozen=True)
class VlanTag:
    outer_id: int
    inner_id: Optional[int] = None
    pcp: int = 0


@dataclass(frozen=True)
class IpHeader:
    version: int
    src_addr: int
    dst_addr: int
    protocol: int = 0
    dscp: int = 0


@dataclass(frozen=True)
class L4Header:
    src_port: int
    dst_port: int
    tcp_flags: int = 0


@dataclass(frozen=True)
class Frame:
    frame_id: int
    size_bytes: int
    ethertype: int
    src_mac: int = 0
    dst_mac: int = 0
    vlan: Optional[VlanTag] = None
    ip: Optional[IpHeader] = None
    l4: Optional[L4Header] = None
    priority: int = 0
    flow_id: str = ""
    created_at: float = 0.0
    last_hop_arrival: float = 0.0


def wire_bits(frame: Frame) -> int:
    return (frame.size_bytes + WIRE_OVERHEAD_BYTES) * 8


def size_wire_bits(size_bytes: int) -> int:
    return (size_bytes + WIRE_OVERHEAD_BYTES) * 8


def min_size_for(vlan, ip) -> int:
    if ip is not None and ip.protocol == PROTO_ICMP:
        return MIN_ICMP_FRAME
    return MIN_FRAME


def derive_priority(vlan, ip) -> int:
    if vlan is not None:
        return vlan.pcp
    if ip is not None:
        return ip.dscp >> 3
    return 0


def check_frame(frame: Frame) -> None:
    """Raise FrameError if *frame* violates any invariant."""
    if not isinstance(frame.size_bytes, int) or isinstance(frame.size_bytes, bool):
        raise FrameSizeError("size_bytes", f"expected integer, got {frame.size_bytes!r}")
    _range("ethertype", frame.ethertype, 0, 0xFFFF)
    _range("src_mac", frame.src_mac, 0, 2**48 - 1)
    _range("dst_mac", frame.dst_mac, 0, 2**48 - 1)
    if frame.vlan is not None:
        v = frame.vlan
        _range("vlan.outer_id", v.outer_id, 0, 4095)
        if v.inner_id is not None:
            _range("vlan.inner_id", v.inner_id, 0, 4095)
        _range("vlan.pcp", v.pcp, 0, 7)
    if frame.ip is not None:
        ip = frame.ip
        if ip.version not in (4, 6):
            raise FrameError("ip.version", f"must be 4 or 6, got {ip.version}")
        width = 32 if ip.version == 4 else 128
        _range("ip.src_addr", ip.src_addr, 0, 2**width - 1)
        _range("ip.dst_addr", ip.dst_addr, 0, 2**width - 1)
        _range("ip.protocol", ip.protocol, 0, 255)
        _range("ip.dscp", ip.dscp, 0, 63)
    if frame.l4 is not None:
        if frame.ip is None:
            raise FrameError("l4", "layer-4 header requires an ip header")
        _range("l4.src_port", frame.l4.src_port, 0, 0xFFFF)
        _range("l4.dst_port", frame.l4.dst_port, 0, 0xFFFF)
        _range("l4.tcp_flags", frame.l4.tcp_flags, 0, 0xFF)
    _range("priority", frame.priority, 0, 7)

    lo = min_size_for(frame.vlan, frame.ip)
    hi = MAX_TAGGED_FRAME if frame.vlan is not None else MAX_FRAME
    if not lo <= frame.size_bytes <= hi:
        raise FrameSizeError("size_bytes", f"{frame.size_bytes} outside [{lo}, {hi}]")


def _range(field, value, lo, hi):
    if not isinstance(value, int) or isinstance(value, bool):
        raise FrameError(field, f"expected integer, got {value!r}")
    if not lo <= value <= hi:
        raise FrameError(field, f"{value} outside [{lo}, {hi}]")


def parse_mac(value) -> int:
    if isinstance(value, int):
        return value
    parts = str(value).replace("-", ":").split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {value!r}")
    return int("".join(p.zfill(2) for p in parts), 16)


def format_mac(value: int) -> str:
    h = f"{value:012x}"
    return ":".join(h[i : i + 2] for i in range(0, 12, 2))


def _addr(value, version):
    if isinstance(value, int):
        return value
    a = ipaddress.ip_address(value)
    if version is not None and a.version != version:
        raise FrameError("ip", f"{value} is not IPv{version}")
    return int(a)


def _flatten(spec: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in spec.items():
        if isinstance(v, Mapping):
            for k2, v2 in v.items():
                out[f"{k}.{k2}"] = v2
        else:
            out[k] = v
    return out


def make_frame(spec: Mapping[str, Any], size_bytes: int, created_at: float = 0.0) -> Frame:
    """Build a validated Frame.

    *spec* uses dotted keys (``"ip.protocol"``) or nested mappings
    (``{"ip": {"protocol": 1}}``). Any ``ip.*`` key adds an IP header, any
    ``l4.*`` key a layer-4 header, any ``vlan.*`` key a VLAN tag. Addresses
    may be given as strings or integers.
    """
    s = _flatten(spec)
    known = {
        "frame_id", "ethertype", "src_mac", "dst_mac", "flow_id",
        "vlan.outer_id", "vlan.inner_id", "vlan.pcp",
        "ip.version", "ip.src_addr", "ip.dst_addr", "ip.protocol", "ip.dscp",
        "l4.src_port", "l4.dst_port", "l4.tcp_flags",
    }
    for k in s:
        if k not in known:
            raise FrameError(k, "unknown header field")

    vlan = None
    if any(k.startswith("vlan.") for k in s):
        vlan = VlanTag(
            outer_id=s.get("vlan.outer_id", 0),
            inner_id=s.get("vlan.inner_id"),
            pcp=s.get("vlan.pcp", 0),
        )

    ip = None
    if any(k.startswith("ip.") for k in s) or any(k.startswith("l4.") for k in s):
        version = s.get("ip.version")
        if version is None:
            src = s.get("ip.src_addr", 0)
            version = 6 if isinstance(src, str) and ":" in src else 4
            if s.get("ethertype") == ETH_IPV6:
                version = 6
        ip = IpHeader(
            version=version,
            src_addr=_addr(s.get("ip.src_addr", 0), version),
            dst_addr=_addr(s.get("ip.dst_addr", 0), version),
            protocol=s.get("ip.protocol", 0),
            dscp=s.get("ip.dscp", 0),
        )

    l4 = None
    if any(k.startswith("l4.") for k in s):
        l4 = L4Header(
            src_port=s.get("l4.src_port", 0),
            dst_port=s.get("l4.dst_port", 0),
            tcp_flags=s.get("l4.tcp_flags", 0),
        )

    default_et = 0
    if ip is not None:
        default_et = ETH_IPV4 if ip.version == 4 else ETH_IPV6

    if vlan is not None:
        _range("vlan.pcp", vlan.pcp, 0, 7)
    if ip is not None:
        _range("ip.dscp", ip.dscp, 0, 63)

    frame = Frame(
        frame_id=s.get("frame_id", 0),
        size_bytes=size_bytes,
        ethertype=s.get("ethertype", default_et),
        src_mac=parse_mac(s.get("src_mac", 0)),
        dst_mac=parse_mac(s.get("dst_mac", 0)),
        vlan=vlan,
        ip=ip,
        l4=l4,
        priority=derive_priority(vlan, ip),
        flow_id=s.get("flow_id", ""),
        created_at=float(created_at),
        last_hop_arrival=float(created_at),
    )
    check_frame(frame)
    return frame
