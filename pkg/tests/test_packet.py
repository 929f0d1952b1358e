import pytest
from hypothesis import given, strategies as st

from aclsim.packet import (
    Frame,
    FrameError,
    FrameSizeError,
    L4Header,
    check_frame,
    format_mac,
    make_frame,
    parse_mac,
    size_wire_bits,
    wire_bits,
)


def test_icmp_74_bytes_priority_zero():
    f = make_frame({"ethertype": 0x0800, "ip.protocol": 1}, 74)
    assert f.priority == 0
    assert f.size_bytes == 74
    assert f.ip.protocol == 1


def test_below_64_is_size_error():
    with pytest.raises(FrameSizeError):
        make_frame({"ethertype": 0x0800}, 63)


def test_pcp_wins_over_dscp():
    f = make_frame({"vlan.pcp": 5, "ip.dscp": 0}, 512)
    assert f.priority == 5


def test_dscp_priority():
    assert make_frame({"ip.dscp": 46}, 512).priority == 5
    assert make_frame({}, 512).priority == 0


def test_icmp_below_74_rejected():
    with pytest.raises(FrameSizeError):
        make_frame({"ip.protocol": 1}, 73)


def test_tagged_limit():
    make_frame({"vlan.outer_id": 7}, 1522)
    with pytest.raises(FrameSizeError):
        make_frame({}, 1519)
    with pytest.raises(FrameSizeError):
        make_frame({"vlan.outer_id": 7}, 1523)


def test_out_of_range_names_field():
    with pytest.raises(FrameError) as e:
        make_frame({"vlan.outer_id": 5000}, 512)
    assert e.value.field == "vlan.outer_id"
    with pytest.raises(FrameError) as e:
        make_frame({"ip.dscp": 64}, 512)
    assert e.value.field == "ip.dscp"


def test_unknown_field():
    with pytest.raises(FrameError):
        make_frame({"ip.ttl": 3}, 512)


def test_nested_spec_equals_dotted():
    a = make_frame({"ip": {"src_addr": "10.0.0.1", "protocol": 17}, "l4": {"dst_port": 53}}, 128)
    b = make_frame({"ip.src_addr": "10.0.0.1", "ip.protocol": 17, "l4.dst_port": 53}, 128)
    assert a == b


def test_ipv6_addresses():
    f = make_frame({"ip.version": 6, "ip.src_addr": "2001:db8::1"}, 128)
    assert f.ip.src_addr == 0x20010DB8000000000000000000000001
    with pytest.raises(FrameError):
        make_frame({"ip.version": 4, "ip.src_addr": "2001:db8::1"}, 128)


def test_l4_requires_ip():
    with pytest.raises(FrameError):
        check_frame(Frame(0, 128, 0x0800, l4=L4Header(1, 2)))


@pytest.mark.parametrize("size,bits", [(512, 4256), (1518, 12304), (64, 672)])
def test_wire_bits(size, bits):
    assert wire_bits(make_frame({}, size)) == bits
    assert size_wire_bits(size) == bits


@given(st.integers(64, 1517))
def test_wire_bits_monotone(n):
    assert size_wire_bits(n + 1) > size_wire_bits(n)


def test_mac_round_trip():
    assert parse_mac("00:1b:21:3a:4f:9e") == 0x001B213A4F9E
    assert format_mac(0x001B213A4F9E) == "00:1b:21:3a:4f:9e"


# Random header specs, some deliberately out of range. An accepted spec
# must produce a frame passing every invariant; a rejected one must
# actually break a rule that we check independently here.
spec_values = st.fixed_dictionaries(
    {},
    optional={
        "ethertype": st.integers(-5, 0x10005),
        "vlan.outer_id": st.integers(-2, 4100),
        "vlan.pcp": st.integers(-1, 9),
        "ip.version": st.sampled_from([4, 6, 5]),
        "ip.protocol": st.sampled_from([1, 6, 17, 300]),
        "ip.dscp": st.integers(-1, 70),
        "l4.src_port": st.integers(-1, 70000),
        "l4.tcp_flags": st.integers(0, 300),
    },
)


def _violates(spec, size):
    rng = {
        "ethertype": (0, 0xFFFF), "vlan.outer_id": (0, 4095), "vlan.pcp": (0, 7),
        "ip.protocol": (0, 255), "ip.dscp": (0, 63), "l4.src_port": (0, 0xFFFF), "l4.tcp_flags": (0, 255),
    }
    for k, (lo, hi) in rng.items():
        if k in spec and not lo <= spec[k] <= hi:
            return True
    if spec.get("ip.version", 4) not in (4, 6):
        return True
    tagged = any(k.startswith("vlan.") for k in spec)
    icmp = spec.get("ip.protocol") == 1
    lo = 74 if icmp else 64
    hi = 1522 if tagged else 1518
    return not lo <= size <= hi


@given(spec_values, st.integers(40, 1530))
def test_construction_respects_invariants(spec, size):
    try:
        f = make_frame(spec, size)
    except FrameError:
        assert _violates(spec, size)
        return
    assert not _violates(spec, size)
    check_frame(f)
    if f.size_bytes > 1518:
        assert f.vlan is not None
    if f.l4 is not None:
        assert f.ip is not None
    if f.ip is not None and f.ip.protocol == 1:
        assert f.size_bytes >= 74
