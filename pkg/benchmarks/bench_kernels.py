"""Compare the numba event loop with the plain-Python fallback.

Each path runs in its own interpreter because the choice is made when
aclsim is first imported (ACLSIM_DISABLE_NUMBA). The numba child does one
small warm-up trial first so compile time is reported separately.

    python3 benchmarks/bench_kernels.py --duration 0.05
"""
import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def child(duration, load, size):
    from aclsim._jit import HAS_NUMBA
    from aclsim.bench import workload
    from aclsim.sim import Schedule, run_trial

    wl = workload("twopath")
    gens = wl.generators(load, size)

    def once(d):
        return run_trial(wl.topology, gens, wl.bindings(), wl.thresholds, 0, Schedule(0.1, d, 0.05))

    t0 = time.perf_counter()
    once(0.001)
    warm = time.perf_counter() - t0
    t0 = time.perf_counter()
    r = once(duration)
    secs = time.perf_counter() - t0
    print(json.dumps({
        "numba": HAS_NUMBA,
        "warmup_s": warm,
        "run_s": secs,
        "frames": r.tx,
        "digest": hashlib.sha256(r.to_json().encode()).hexdigest(),
    }))


def spawn(disable, args):
    env = dict(os.environ)
    env.pop("ACLSIM_DISABLE_NUMBA", None)
    if disable:
        env["ACLSIM_DISABLE_NUMBA"] = "1"
    cmd = [sys.executable, __file__, "--child", "--duration", str(args.duration),
           "--load", str(args.load), "--size", str(args.size)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--duration", type=float, default=0.05, help="simulated seconds of traffic")
    p.add_argument("--load", type=float, default=60.0)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        child(args.duration, args.load, args.size)
        return

    jit = spawn(False, args)
    py = spawn(True, args)
    print(f"{'path':<8} {'frames':>8} {'warm-up s':>10} {'run s':>9} {'frames/s':>12}")
    for name, r in (("numba", jit), ("python", py)):
        print(f"{name:<8} {r['frames']:>8} {r['warmup_s']:>10.3f} {r['run_s']:>9.3f} "
              f"{r['frames'] / r['run_s']:>12.0f}")
    print(f"speedup  {py['run_s'] / jit['run_s']:.1f}x")
    print("results identical" if jit["digest"] == py["digest"] else "RESULTS DIFFER")
    if not jit["numba"]:
        print("note: numba unavailable, both runs used the fallback")


if __name__ == "__main__":
    main()
