"""Random weighted graphs and exhaustive simple-path search."""
import random

from aclsim.topology import Link, Topology


def random_graph(rng: random.Random, max_nodes=10):
    n = rng.randint(2, max_nodes)
    pairs = [(u, v) for u in range(1, n + 1) for v in range(u + 1, n + 1)]
    rng.shuffle(pairs)
    k = rng.randint(1, len(pairs))
    ports = {}
    links = []
    for i, (u, v) in enumerate(sorted(pairs[:k]), 1):
        pu = ports[u] = ports.get(u, 0) + 1
        pv = ports[v] = ports.get(v, 0) + 1
        links.append(Link(f"L{i}", (u, pu), (v, pv), 1e9, float(rng.randint(1, 5))))
    return Topology(list(range(1, n + 1)), links)


def all_simple_paths(topo, src, dst, exclude=()):
    exclude = set(exclude)
    out = []

    def walk(nodes, links):
        u = nodes[-1]
        if u == dst:
            out.append((tuple(nodes), tuple(links)))
            return
        for link, v in topo.neighbors(u):
            if v in nodes or (link.link_id, u) in exclude:
                continue
            walk(nodes + [v], links + [link])

    walk([src], [])
    return out


def brute_best(topo, src, dst, weight, exclude=()):
    """(cost, hops, nodes) minimum, summing weights hop by hop like the pathfinder."""
    best = None
    for nodes, links in all_simple_paths(topo, src, dst, exclude):
        cost = 0.0
        for l, u in zip(links, nodes):
            cost = cost + weight(l, u)
        key = (cost, len(links), nodes)
        if best is None or key < best:
            best = key
    return best
