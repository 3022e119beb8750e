"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--events N] [--repeat R]

Also times one full scenario under each backend (the backend is picked at
import time, so that part runs in a subprocess).
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from epcmig.kernels import backends


def heap_workload(mod, n, seed=1):
    rng = random.Random(seed)
    times = [rng.randrange(10**9) for _ in range(n)]

    def run():
        h = mod.EventHeap()
        for seq, t in enumerate(times):
            h.push(t, seq, None)
        while len(h):
            h.pop()

    return run


def scan_workload(mod, horizon_us, seed=2):
    rng = random.Random(seed)
    starts, ends = [], []
    t = 0
    while t < horizon_us:
        t += rng.randrange(1_000_000, 5_000_000)
        d = rng.randrange(1_000, 500_000)
        starts.append(t)
        ends.append(t + d)
        t += d
    return lambda: mod.scan_probes(0, t + 1_000, 1_000, starts, ends)


SCENARIO = (
    "import time; from epcmig.orchestrator import Scenario, run_scenario;"
    "sc = Scenario('openroadm', 'spgw', 'vm');"
    "t = time.perf_counter(); [run_scenario(sc) for _ in range({n})]; print(time.perf_counter() - t)"
)


def scenario_time(pure, n):
    env = dict(os.environ, EPCMIG_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SCENARIO.format(n=n)], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--horizon-s", type=int, default=600)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenarios", type=int, default=20)
    args = ap.parse_args(argv)

    mods = backends()
    if "cython" not in mods:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    print(f"{'workload':<28}{'backend':<10}{'best (ms)':>12}{'speedup':>10}")
    for label, make in (
        (f"heap push/pop x{args.events}", lambda m: heap_workload(m, args.events)),
        (f"probe scan {args.horizon_s} s @ 1 ms", lambda m: scan_workload(m, args.horizon_s * 1_000_000)),
    ):
        base = None
        for name in ("python", "cython"):
            if name not in mods:
                continue
            best = min(timeit.repeat(make(mods[name]), number=1, repeat=args.repeat)) * 1000
            base = base or best
            print(f"{label:<28}{name:<10}{best:>12.2f}{base / best:>9.2f}x")
    py = scenario_time(True, args.scenarios)
    print(f"{'scenario x' + str(args.scenarios):<28}{'python':<10}{py * 1000:>12.2f}{1:>9.2f}x")
    if "cython" in mods:
        cy = scenario_time(False, args.scenarios)
        print(f"{'scenario x' + str(args.scenarios):<28}{'cython':<10}{cy * 1000:>12.2f}{py / cy:>9.2f}x")


if __name__ == "__main__":
    main()
