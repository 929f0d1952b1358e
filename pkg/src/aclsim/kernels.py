"""Event-loop kernels.

Everything here works on flat numpy arrays so it compiles under numba's
nopython mode; with ``ACLSIM_DISABLE_NUMBA=1`` the same functions run as
ordinary Python. Column layouts are fixed by the constants below and are
filled in by :mod:`aclsim.sim`.
"""
import numpy as np

from aclsim._jit import njit
from aclsim.monitor import spread_bits

# event kinds
EV_GEN = 0
EV_ARRIVE = 1
EV_DONE = 2

# st (scalar state)
ST_HEAP = 0
ST_SEQ = 1
ST_FREE = 2
ST_STATUS = 3
ST_LEN = 4

STATUS_OK = 0
STATUS_NEED_POOL = 1

# heap integer columns
H_SEQ = 0
H_KIND = 1
H_ARG = 2

# frame pool
FI_FLOW = 0
FI_PATH = 1
FI_HOP = 2
FI_PRIO = 3
FF_BITS = 0
FF_CREATED = 1
FF_LAT = 2
FF_FBI = 3  # first bit in at the current node

# queues
QI_HEAD = 0
QI_LEN = 1
QI_CAP = 2
QI_BUSY = 3
QI_PROTECT = 4  # -1: plain tail drop, else min protected priority
QF_RATE = 0
QF_DELAY = 1

# verdicts
V_PERMIT = 0
V_DENY = 1
V_POLICE = 2

# policers
PF_CIR = 0
PF_NB = 1
PF_EB = 2
PF_TOKENS = 3
PF_LAST = 4
TOKEN_EPS = 1e-6

# generators
GI_KIND = 0  # 0 constant, 1 periodic burst
GI_COUNT = 1
GI_BURST_N = 2
GI_PRIO = 3
GF_START = 0
GF_END = 1
GF_INTERVAL = 2
GF_BITS = 3
GF_PERIOD = 4
GF_ACCESS_RATE = 5

# per-flow counters
CI_TX = 0
CI_RX = 1
CI_FILTERED = 2
CI_TAIL = 3
CI_PRIO = 4
CI_POLICER = 5
CF_LAST_LAT = 0
CF_MAX_JITTER = 1
CF_HAS_LAST = 2
CF_MAX_LAT = 3
CF_MIN_LAT = 4

# per-direction counters
LI_TX = 0
LI_DROP = 1


@njit(cache=True)
def heap_push(hp_t, hp_i, st, t, kind, arg):
    n = st[ST_HEAP]
    seq = st[ST_SEQ]
    st[ST_SEQ] = seq + 1
    i = n
    while i > 0:
        parent = (i - 1) >> 1
        pt = hp_t[parent]
        if pt < t or (pt == t and hp_i[parent, H_SEQ] < seq):
            break
        hp_t[i] = pt
        hp_i[i, 0] = hp_i[parent, 0]
        hp_i[i, 1] = hp_i[parent, 1]
        hp_i[i, 2] = hp_i[parent, 2]
        i = parent
    hp_t[i] = t
    hp_i[i, H_SEQ] = seq
    hp_i[i, H_KIND] = kind
    hp_i[i, H_ARG] = arg
    st[ST_HEAP] = n + 1


@njit(cache=True)
def heap_pop(hp_t, hp_i, st):
    """Remove the root; caller has already read it."""
    n = st[ST_HEAP] - 1
    st[ST_HEAP] = n
    if n == 0:
        return
    t = hp_t[n]
    seq = hp_i[n, H_SEQ]
    kind = hp_i[n, H_KIND]
    arg = hp_i[n, H_ARG]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= n:
            break
        r = c + 1
        if r < n and (hp_t[r] < hp_t[c] or (hp_t[r] == hp_t[c] and hp_i[r, H_SEQ] < hp_i[c, H_SEQ])):
            c = r
        if t < hp_t[c] or (t == hp_t[c] and seq < hp_i[c, H_SEQ]):
            break
        hp_t[i] = hp_t[c]
        hp_i[i, 0] = hp_i[c, 0]
        hp_i[i, 1] = hp_i[c, 1]
        hp_i[i, 2] = hp_i[c, 2]
        i = c
    hp_t[i] = t
    hp_i[i, H_SEQ] = seq
    hp_i[i, H_KIND] = kind
    hp_i[i, H_ARG] = arg


@njit(cache=True)
def police_bits(pol, k, bits, now):
    """0 conform, 1 exceed, 2 violate; same rule as acl.Policer."""
    tokens = pol[k, PF_TOKENS] + pol[k, PF_CIR] * (now - pol[k, PF_LAST])
    if tokens > pol[k, PF_EB]:
        tokens = pol[k, PF_EB]
    pol[k, PF_LAST] = now
    nb = pol[k, PF_NB]
    cap = tokens if tokens < nb else nb
    if bits <= cap + TOKEN_EPS:
        res = 0
    elif bits <= tokens + TOKEN_EPS:
        res = 1
    else:
        pol[k, PF_TOKENS] = tokens
        return 2
    tokens -= bits
    if tokens < 0.0:
        tokens = 0.0
    pol[k, PF_TOKENS] = tokens
    return res


@njit(cache=True)
def free_frame(free_stack, st, fs):
    free_stack[st[ST_FREE]] = fs
    st[ST_FREE] += 1


@njit(cache=True)
def start_service(d, fs, t, fr_i, fr_f, q_i, q_f, hp_t, hp_i, st, carried, l_i, window_len):
    bits = fr_f[fs, FF_BITS]
    end = t + bits / q_f[d, QF_RATE]
    q_i[d, QI_BUSY] = fs
    # bit forwarding: first bit in -> first bit out
    fr_f[fs, FF_LAT] += t - fr_f[fs, FF_FBI]
    fr_f[fs, FF_FBI] = t + q_f[d, QF_DELAY]
    spread_bits(carried, d, t, end, bits, window_len)
    l_i[d, LI_TX] += 1
    heap_push(hp_t, hp_i, st, end, EV_DONE, d)


@njit(cache=True)
def enqueue(d, fs, t, fr_i, fr_f, q_i, q_f, q_buf, hp_t, hp_i, st, carried, l_i,
            c_i, free_stack, window_len):
    """Offer frame *fs* to the egress queue of direction *d*.

    Returns 0 when accepted, 1 when the arriving frame was tail dropped,
    2 when it lost a priority contest, 3 when a queued frame was evicted
    to make room.
    """
    if q_i[d, QI_BUSY] < 0 and q_i[d, QI_LEN] == 0:
        start_service(d, fs, t, fr_i, fr_f, q_i, q_f, hp_t, hp_i, st, carried, l_i, window_len)
        return 0
    qc = q_buf.shape[1]
    head = q_i[d, QI_HEAD]
    n = q_i[d, QI_LEN]
    if n < q_i[d, QI_CAP]:
        q_buf[d, (head + n) % qc] = fs
        q_i[d, QI_LEN] = n + 1
        return 0
    protect = q_i[d, QI_PROTECT]
    flow = fr_i[fs, FI_FLOW]
    if protect < 0:
        c_i[flow, CI_TAIL] += 1
        l_i[d, LI_DROP] += 1
        free_frame(free_stack, st, fs)
        return 1
    # lowest priority, oldest first, never a protected frame
    best = -1
    best_prio = protect
    for k in range(n):
        p = fr_i[q_buf[d, (head + k) % qc], FI_PRIO]
        if p < best_prio:
            best_prio = p
            best = k
    arr_prio = fr_i[fs, FI_PRIO]
    if best < 0 or arr_prio < best_prio:
        if arr_prio < protect:
            c_i[flow, CI_PRIO] += 1
            res = 2
        else:
            c_i[flow, CI_TAIL] += 1
            res = 1
        l_i[d, LI_DROP] += 1
        free_frame(free_stack, st, fs)
        return res
    victim = q_buf[d, (head + best) % qc]
    c_i[fr_i[victim, FI_FLOW], CI_PRIO] += 1
    l_i[d, LI_DROP] += 1
    free_frame(free_stack, st, victim)
    for k in range(best, n - 1):
        q_buf[d, (head + k) % qc] = q_buf[d, (head + k + 1) % qc]
    q_buf[d, (head + n - 1) % qc] = fs
    return 3


@njit(cache=True)
def run_until(
    t_stop, st, hp_t, hp_i,
    fr_i, fr_f, free_stack,
    q_i, q_f, q_buf,
    p_len, p_dirs, p_verd, p_pol, pol,
    g_i, g_f, flow_path,
    c_i, c_f, l_i,
    carried, off_bits, off_frames, off_fdw, window_len,
):
    """Dispatch events with time < t_stop in (time, seq) order."""
    nw = carried.shape[1]
    while st[ST_HEAP] > 0:
        t = hp_t[0]
        if t >= t_stop:
            break
        kind = hp_i[0, H_KIND]
        arg = hp_i[0, H_ARG]
        if kind == EV_GEN and st[ST_FREE] == 0:
            st[ST_STATUS] = STATUS_NEED_POOL
            return
        heap_pop(hp_t, hp_i, st)

        if kind == EV_GEN:
            g = arg
            st[ST_FREE] -= 1
            fs = free_stack[st[ST_FREE]]
            bits = g_f[g, GF_BITS]
            fr_i[fs, FI_FLOW] = g
            fr_i[fs, FI_PATH] = flow_path[g]
            fr_i[fs, FI_HOP] = 0
            fr_i[fs, FI_PRIO] = g_i[g, GI_PRIO]
            fr_f[fs, FF_BITS] = bits
            fr_f[fs, FF_CREATED] = t
            fr_f[fs, FF_LAT] = 0.0
            fr_f[fs, FF_FBI] = t
            c_i[g, CI_TX] += 1
            # fully received at the source node after the access port
            heap_push(hp_t, hp_i, st, t + bits / g_f[g, GF_ACCESS_RATE], EV_ARRIVE, fs)
            k = g_i[g, GI_COUNT] + 1
            g_i[g, GI_COUNT] = k
            if g_i[g, GI_KIND] == 0:
                nxt = g_f[g, GF_START] + k * g_f[g, GF_INTERVAL]
            else:
                bn = g_i[g, GI_BURST_N]
                nxt = (g_f[g, GF_START] + (k // bn) * g_f[g, GF_PERIOD]
                       + (k % bn) * g_f[g, GF_INTERVAL])
            if nxt < g_f[g, GF_END]:
                heap_push(hp_t, hp_i, st, nxt, EV_GEN, g)

        elif kind == EV_ARRIVE:
            fs = arg
            p = fr_i[fs, FI_PATH]
            h = fr_i[fs, FI_HOP]
            flow = fr_i[fs, FI_FLOW]
            v = p_verd[p, h]
            if v == V_DENY:
                c_i[flow, CI_FILTERED] += 1
                free_frame(free_stack, st, fs)
                continue
            if v == V_POLICE:
                if police_bits(pol, p_pol[p, h], fr_f[fs, FF_BITS], t) == 2:
                    c_i[flow, CI_POLICER] += 1
                    free_frame(free_stack, st, fs)
                    continue
            if h == p_len[p]:
                lat = fr_f[fs, FF_LAT]
                c_i[flow, CI_RX] += 1
                if c_f[flow, CF_HAS_LAST] == 0.0 or lat < c_f[flow, CF_MIN_LAT]:
                    c_f[flow, CF_MIN_LAT] = lat
                if c_f[flow, CF_HAS_LAST] > 0.0:
                    j = abs(lat - c_f[flow, CF_LAST_LAT])
                    if j > c_f[flow, CF_MAX_JITTER]:
                        c_f[flow, CF_MAX_JITTER] = j
                c_f[flow, CF_LAST_LAT] = lat
                c_f[flow, CF_HAS_LAST] = 1.0
                if lat > c_f[flow, CF_MAX_LAT]:
                    c_f[flow, CF_MAX_LAT] = lat
                free_frame(free_stack, st, fs)
                continue
            d = p_dirs[p, h]
            w = int(t / window_len)
            if w < nw:
                off_bits[d, w] += fr_f[fs, FF_BITS]
                off_frames[d, w] += 1
                off_fdw[flow, d, w] += 1
            enqueue(d, fs, t, fr_i, fr_f, q_i, q_f, q_buf, hp_t, hp_i, st, carried,
                    l_i, c_i, free_stack, window_len)

        else:
            d = arg
            fs = q_i[d, QI_BUSY]
            fr_i[fs, FI_HOP] += 1
            heap_push(hp_t, hp_i, st, t + q_f[d, QF_DELAY], EV_ARRIVE, fs)
            q_i[d, QI_BUSY] = -1
            n = q_i[d, QI_LEN]
            if n > 0:
                head = q_i[d, QI_HEAD]
                nxt_fs = q_buf[d, head]
                q_i[d, QI_HEAD] = (head + 1) % q_buf.shape[1]
                q_i[d, QI_LEN] = n - 1
                start_service(d, nxt_fs, t, fr_i, fr_f, q_i, q_f, hp_t, hp_i, st,
                              carried, l_i, window_len)
    st[ST_STATUS] = STATUS_OK
