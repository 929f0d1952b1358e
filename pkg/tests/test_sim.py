import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aclsim import acl
from aclsim import kernels as K
from aclsim.acltext import parse_acl
from aclsim.packet import make_frame, size_wire_bits
from aclsim.sim import (
    Dropped,
    Enqueued,
    GeneratorSpec,
    PortQueue,
    Schedule,
    SimError,
    Simulation,
    enqueue_or_drop,
    run_trial,
)
from aclsim.topology import preset_topology

SHORT = Schedule(0.2, 0.3, 0.1)


def _frame(fid, prio):
    return make_frame({"frame_id": fid, "vlan.pcp": prio}, 512)


# -- reference queue ------------------------------------------------------------


def test_empty_queue_accepts():
    q = PortQueue(1, capacity=2)
    assert enqueue_or_drop(q, _frame(1, 0)) == Enqueued()
    assert len(q) == 1


def test_full_queue_without_guard_tail_drops():
    q = PortQueue(1, capacity=2)
    for i in range(2):
        enqueue_or_drop(q, _frame(i, 7))
    assert enqueue_or_drop(q, _frame(9, 7)) == Dropped("tail")
    assert [f.frame_id for f in q.frames] == [0, 1]


def test_guard_evicts_oldest_lowest_priority():
    q = PortQueue(1, capacity=3)
    for i in range(3):
        enqueue_or_drop(q, _frame(i, 0))
    out = enqueue_or_drop(q, _frame(9, 7), acl.DropByPriority(5))
    assert isinstance(out, Enqueued)
    assert [f.frame_id for f in out.evicted] == [0]
    assert [f.frame_id for f in q.frames] == [1, 2, 9]


def test_guard_drops_low_priority_arrival():
    q = PortQueue(1, capacity=2)
    for i in range(2):
        enqueue_or_drop(q, _frame(i, 3))
    assert enqueue_or_drop(q, _frame(9, 1), 5) == Dropped("priority")


def test_guard_with_everything_protected_tail_drops():
    q = PortQueue(1, capacity=2)
    for i in range(2):
        enqueue_or_drop(q, _frame(i, 6))
    assert enqueue_or_drop(q, _frame(9, 7), 5) == Dropped("tail")


def test_queue_capacity_must_be_positive():
    with pytest.raises(SimError):
        PortQueue(1, capacity=0)


# -- kernel enqueue against the reference ---------------------------------------

RESULT_CODES = {0: "enq", 1: "tail", 2: "priority", 3: "evict"}


def _classify_ref(out):
    if isinstance(out, Enqueued):
        return "evict" if out.evicted else "enq"
    return out.reason


@settings(max_examples=200, deadline=None)
@given(
    cap=st.integers(1, 5),
    protect=st.integers(-1, 8),
    ops=st.lists(st.tuples(st.booleans(), st.integers(0, 7)), min_size=1, max_size=40),
)
def test_kernel_enqueue_matches_reference(cap, protect, ops):
    pool = len(ops) + 2
    busy = pool - 1
    q_i = np.zeros((1, 5), dtype=np.int64)
    q_i[0, K.QI_CAP] = cap
    q_i[0, K.QI_BUSY] = busy  # link busy, so every arrival goes through the queue
    q_i[0, K.QI_PROTECT] = protect
    q_f = np.array([[1e9, 0.0]])
    q_buf = np.zeros((1, cap), dtype=np.int64)
    fr_i = np.zeros((pool, 4), dtype=np.int64)
    fr_f = np.zeros((pool, 4))
    free_stack = np.zeros(pool, dtype=np.int64)
    st_ = np.zeros(K.ST_LEN, dtype=np.int64)
    hp_t = np.zeros(4)
    hp_i = np.zeros((4, 3), dtype=np.int64)
    carried = np.zeros((1, 4))
    l_i = np.zeros((1, 2), dtype=np.int64)
    c_i = np.zeros((pool, 6), dtype=np.int64)

    ref = PortQueue(1, capacity=cap)
    ctx = None if protect < 0 else protect
    for fid, (pop, prio) in enumerate(ops):
        if pop and len(ref):
            ref.frames.popleft()
            q_i[0, K.QI_HEAD] = (q_i[0, K.QI_HEAD] + 1) % cap
            q_i[0, K.QI_LEN] -= 1
        fr_i[fid, K.FI_FLOW] = fid
        fr_i[fid, K.FI_PRIO] = prio
        code = K.enqueue(0, fid, 0.0, fr_i, fr_f, q_i, q_f, q_buf, hp_t, hp_i, st_, carried,
                         l_i, c_i, free_stack, 0.1)
        want = _classify_ref(enqueue_or_drop(ref, _frame(fid, prio), ctx))
        assert RESULT_CODES[code] == want
        head, n = q_i[0, K.QI_HEAD], q_i[0, K.QI_LEN]
        got = [int(q_buf[0, (head + k) % cap]) for k in range(n)]
        assert got == [f.frame_id for f in ref.frames]
    # every drop is charged to the frame's own flow exactly once
    assert l_i[0, K.LI_DROP] == c_i[:, K.CI_TAIL].sum() + c_i[:, K.CI_PRIO].sum()
    assert st_[K.ST_FREE] == l_i[0, K.LI_DROP]


# -- heap ---------------------------------------------------------------------------


@given(st.lists(st.integers(0, 20), max_size=60))
def test_heap_pops_in_time_then_insertion_order(times):
    n = len(times) + 1
    hp_t = np.zeros(n)
    hp_i = np.zeros((n, 3), dtype=np.int64)
    st_ = np.zeros(K.ST_LEN, dtype=np.int64)
    for k, t in enumerate(times):
        K.heap_push(hp_t, hp_i, st_, float(t), 0, k)
    out = []
    while st_[K.ST_HEAP]:
        out.append(int(hp_i[0, K.H_ARG]))
        K.heap_pop(hp_t, hp_i, st_)
    assert out == sorted(range(len(times)), key=lambda k: (times[k], k))


# -- whole trials ---------------------------------------------------------------------


def test_uncongested_line_counts_and_latency():
    topo = preset_topology("line3")
    bits = size_wire_bits(512)
    interval = bits / 0.5e9
    r = run_trial(topo, [GeneratorSpec("m", 1, 3, 50.0, 512)], seed=3, schedule=Schedule(2.0, 1.0, 0.5))
    f = r.flow("m")
    # first frame lands uniformly inside the first interval
    base = math.floor(1.0 / interval)
    assert f.tx_frames in (base, base + 1)
    assert f.rx_frames == f.tx_frames
    assert f.frames_lost == 0 and f.dropped == 0
    # nothing ever queues: two store-and-forward serializations per frame
    assert f.min_latency_us == pytest.approx(2 * bits / 1e9 * 1e6, rel=1e-6)
    assert f.max_latency_us == pytest.approx(2 * bits / 1e9 * 1e6, rel=1e-6)
    assert f.max_jitter_us == pytest.approx(0.0, abs=1e-6)


def test_overload_loses_frames_and_counts_oversubscription():
    topo = preset_topology("line3")
    gens = [GeneratorSpec("m", 1, 3, 100.0, 512), GeneratorSpec("x", 2, 3, 7.0, 1000, measured=False)]
    r = run_trial(topo, gens, seed=0, schedule=SHORT)
    assert r.flow("m").frames_lost > 0
    assert r.oversub_frames > 0
    assert r.conserved() and r.in_flight == 0


def test_below_capacity_no_loss():
    topo = preset_topology("line3")
    gens = [GeneratorSpec("m", 1, 3, 90.0, 512), GeneratorSpec("x", 2, 3, 7.0, 1000, measured=False)]
    r = run_trial(topo, gens, seed=0, schedule=SHORT)
    assert r.measured_counts()[2] == 0


def test_nothing_offered_before_start_delay():
    topo = preset_topology("line3")
    sim = Simulation(topo, [GeneratorSpec("m", 1, 3, 80.0)], seed=1, schedule=Schedule(0.2, 0.2, 0.1))
    r = sim.run()
    assert sim.meter.offered_frames[:, :2].sum() == 0
    assert sim.meter.offered_frames[:, 2:].sum() > 0
    assert r.in_flight == 0


def test_latency_floor_under_cross_traffic():
    topo = preset_topology("twopath")
    gens = [GeneratorSpec("m", 1, 4, 70.0, 1280), GeneratorSpec("x", 5, 4, 60.0, 1000, measured=False)]
    r = run_trial(topo, gens, seed=2, schedule=SHORT)
    f = r.flow("m")
    floor = 2 * size_wire_bits(1280) / 1e9 * 1e6
    assert f.min_latency_us >= floor * (1 - 1e-9)
    assert f.max_latency_us > floor


def test_deny_counts_as_filtered_not_lost():
    topo = preset_topology("line3")
    b = acl.AclBindings()
    b.bind(acl.AclStack("in", parse_acl("10 deny proto 17\n20 permit\n")), 2, topo.link("L1").port_at(2))
    r = run_trial(topo, [GeneratorSpec("m", 1, 3, 30.0)], b, seed=0, schedule=SHORT)
    f = r.flow("m")
    assert f.filtered == f.tx_frames > 0
    assert f.rx_frames == 0 and f.frames_lost == f.tx_frames - f.filtered == 0
    assert r.conserved()


def test_policer_caps_delivered_rate():
    topo = preset_topology("line3")
    bits = size_wire_bits(512)
    rate = 0.4e9
    cir = rate / 2
    b = acl.AclBindings()
    text = f"10 permit proto 17 police cir {cir:.0f} nb {bits} eb {2 * bits}\n20 permit\n"
    b.bind(acl.AclStack("pol", parse_acl(text)), 2, topo.link("L1").port_at(2))
    sched = Schedule(0.2, 0.5, 0.1)
    r = run_trial(topo, [GeneratorSpec("m", 1, 3, 40.0, 512)], b, seed=0, schedule=sched)
    f = r.flow("m")
    assert f.dropped_policer > 0
    # long-run admitted rate is the CIR, plus at most the excess bucket up front
    admitted = f.tx_frames - f.dropped_policer
    upper = (cir * sched.duration + 2 * bits) / bits + 2
    lower = cir * sched.duration / bits - 2
    assert lower <= admitted <= upper
    assert r.conserved()


def test_sim_rejects_bad_generators():
    topo = preset_topology("line3")
    with pytest.raises(SimError):
        GeneratorSpec("g", 1, 1, 50.0)
    with pytest.raises(SimError):
        GeneratorSpec("g", 1, 3, 0.0)
    with pytest.raises(SimError):
        Simulation(topo, [GeneratorSpec("g", 1, 99, 10.0)])
    with pytest.raises(SimError):
        Simulation(topo, [GeneratorSpec("g", 1, 3, 10.0), GeneratorSpec("g", 3, 1, 10.0)])
    with pytest.raises(SimError):
        Simulation(topo, [GeneratorSpec("g", 1, 3, 10.0)], queue_capacity=0)


def test_guard_on_host_port_without_link_rejected():
    topo = preset_topology("line3")
    b = acl.AclBindings()
    b.bind(acl.AclStack("g", parse_acl("10 guard srcip 10.0.0.1/32 threshold 0.9 action reroute\n20 permit\n")), 1, 0)
    with pytest.raises(SimError):
        Simulation(topo, [GeneratorSpec("g", 1, 3, 10.0)], b)


def test_simulation_runs_once():
    sim = Simulation(preset_topology("line3"), [GeneratorSpec("g", 1, 3, 10.0)], schedule=SHORT)
    sim.run()
    with pytest.raises(SimError):
        sim.run()


scenario = st.fixed_dictionaries({
    "preset": st.sampled_from(["line3", "twopath"]),
    "load": st.floats(5.0, 100.0),
    "size": st.sampled_from([64, 512, 1024, 1518]),
    "cross": st.floats(5.0, 100.0),
    "guard": st.booleans(),
    "seed": st.integers(0, 2**31),
})


def _build(p):
    from aclsim.bench import workload

    wl = workload("twopath" if p["preset"] == "twopath" else "line3-cross", 0.005)
    gens = [
        g if g.measured else GeneratorSpec(g.name, g.src, g.dst, p["cross"], g.frame_size, measured=False)
        for g in wl.generators(p["load"], p["size"])
    ]
    return wl.topology, gens, wl.bindings(), wl.thresholds


@settings(max_examples=25, deadline=None)
@given(scenario)
def test_conservation_and_determinism(p):
    topo, gens, _, thr = _build(p)
    sched = Schedule(0.1, 0.3, 0.1)
    runs = []
    for _ in range(2):
        _, _, b, _ = _build(p)
        runs.append(run_trial(topo, gens, b, thr, p["seed"], sched, guard_enabled=p["guard"]))
    a, b = runs
    assert a.conserved()
    assert a.in_flight == 0
    for f in a.flows:
        assert f.rx_frames + f.filtered + f.dropped == f.tx_frames
    assert a.to_json() == b.to_json()


def test_different_seeds_shift_phases():
    topo = preset_topology("line3")
    gens = [GeneratorSpec("m", 1, 3, 100.0, 512), GeneratorSpec("x", 2, 3, 7.0, 1000, measured=False)]
    outs = {run_trial(topo, gens, seed=s, schedule=SHORT).to_json() for s in range(3)}
    assert len(outs) > 1


FALLBACK_SCRIPT = """
from aclsim._jit import HAS_NUMBA
from aclsim.bench import workload
from aclsim.sim import Schedule, run_trial
assert not HAS_NUMBA
wl = workload("twopath")
r = run_trial(wl.topology, wl.generators(70.0, 512), wl.bindings(), wl.thresholds, 5, Schedule(0.1, 0.15, 0.02))
print(r.to_json())
"""


def test_python_fallback_matches_numba():
    import os
    import subprocess
    import sys

    from aclsim.bench import workload

    env = dict(os.environ, ACLSIM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", FALLBACK_SCRIPT], env=env, capture_output=True, text=True, check=True)
    wl = workload("twopath")
    r = run_trial(wl.topology, wl.generators(70.0, 512), wl.bindings(), wl.thresholds, 5, Schedule(0.1, 0.15, 0.02))
    assert r.reroutes
    assert out.stdout.strip() == r.to_json()
