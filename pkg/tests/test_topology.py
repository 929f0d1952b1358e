import pytest
from hypothesis import given, strategies as st

from aclsim.reroute import shortest_path
from aclsim.topology import Link, Topology, TopologyError, load_topology, neighbors, preset_topology


def test_paper10_counts():
    t = load_topology("preset paper10")
    assert len(t.nodes) == 10
    assert len(t.links) == 18
    assert sum(len(neighbors(t, n)) for n in t.nodes) == 36


def test_paper10_has_disjoint_alternate():
    t = preset_topology("paper10")
    main = shortest_path(t, 1, 10)
    assert main.nodes == (1, 2, 5, 8, 10)
    excl = [(l, n) for l in main.links for n in (t.link(l).a[0], t.link(l).b[0])]
    alt = shortest_path(t, 1, 10, exclude=excl)
    assert alt is not None and not set(alt.links) & set(main.links)


def test_single_link_document():
    t = load_topology("node 1 2\nlink L1 1:1 2:1\n")
    assert t.nodes == [1, 2] and len(t.links) == 1
    l, peer = neighbors(t, 1)[0]
    assert (l.link_id, peer) == ("L1", 2)


def test_isolated_node():
    t = load_topology("node 1 2 3\nlink L1 1:1 2:1\n")
    assert neighbors(t, 3) == []
    with pytest.raises(TopologyError):
        neighbors(t, 9)


def test_port_used_twice():
    with pytest.raises(TopologyError) as e:
        load_topology("node 1 2 3\nlink L1 1:1 2:1\nlink L2 1:1 3:1\n")
    assert e.value.line == 3


@pytest.mark.parametrize("doc", [
    "node 1\nlink L1 1:1 2:1\n",  # dangling
    "node 1 2\nlink L1 1:0 2:1\n",  # host port
    "node 1 2\nlink L1 1:1 2:1\nsubnet s L9\n",  # unknown member
    "node 1 2\nlink L1 1:1 2:1 rate 0\n",
    "node 1 2\nlink L1 1:1 2:1 weight -1\n",
    "node 1 2\nlink L1 1-1 2:1\n",
    "node 1 2\nbogus\n",
    "preset nope\n",
])
def test_schema_errors(doc):
    with pytest.raises(TopologyError):
        load_topology(doc)


def test_document_round_trip():
    for name in ("paper10", "twopath", "line3"):
        t = preset_topology(name)
        again = load_topology(t.to_document())
        assert again == t
        assert again.to_document() == t.to_document()


def test_dir_index():
    t = load_topology("node 1 2\nlink L1 1:1 2:3 rate 1e8\n")
    assert t.dir_index("L1", 1) == 0 and t.dir_index("L1", 2) == 1
    assert t.dir_name(1) == "L1:2>1"
    assert t.link_at_port(2, 3).link_id == "L1"
    assert t.ports(2) == [0, 3]


@st.composite
def graphs(draw):
    n = draw(st.integers(2, 8))
    pairs = [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    port = {}
    lines = ["node " + " ".join(str(i) for i in range(1, n + 1))]
    for i, (u, v) in enumerate(chosen, 1):
        pu = port[u] = port.get(u, 0) + 1
        pv = port[v] = port.get(v, 0) + 1
        lines.append(f"link L{i} {u}:{pu} {v}:{pv}")
    return "\n".join(lines) + "\n"


@given(graphs())
def test_handshake_and_purity(doc):
    t = load_topology(doc)
    assert sum(len(t.neighbors(n)) for n in t.nodes) == 2 * len(t.links)
    assert load_topology(doc) == t
    for n in t.nodes:
        ids = [l.link_id for l, _ in t.neighbors(n)]
        assert ids == sorted(ids, key=lambda s: int(s[1:]))
