"""Time the numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the choice is read from
COOPMC_BACKEND at import time.  Usage:

    python benchmarks/bench_backends.py [--trials N] [--repeat R]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from coopmc._accel import backend_name
from coopmc._kernels import mixture_cdf_rows
from coopmc.analytical import Thresholds, average_error
from coopmc.channel import DiffusionParams, ProtocolTiming
from coopmc.schemes import report_share
from coopmc.simulator import SimConfig, estimate_error
from coopmc.topology import build_symmetric_ring

trials, repeat = int(sys.argv[1]), int(sys.argv[2])
topo, timing = build_symmetric_ring(3), ProtocolTiming()
params = DiffusionParams(S_B=report_share(3))
rng = np.random.default_rng(0)
w = rng.dirichlet(np.ones(64), 512)
mu = rng.uniform(0, 150, (512, 64))


def best(fn):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


out = {
    "backend": backend_name(),
    "mixture_cdf 512x64 to 400": best(lambda: mixture_cdf_rows(w, mu, 400)),
    "average_error K=3 L=10": best(lambda: average_error(topo, params, timing, Thresholds(20, 6))),
    f"simulate {trials} trials": best(
        lambda: estimate_error(topo, params, timing, Thresholds(20, 6), 10, 0.5,
                               SimConfig(trials=trials, culling="aggressive"))
    ),
}
print(json.dumps(out))
"""


def run(backend, trials, repeat):
    env = dict(os.environ, COOPMC_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKER, str(trials), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    fast = run("numba", args.trials, args.repeat)
    slow = run("numpy", args.trials, args.repeat)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    print(f"{'kernel':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speed-up':>9s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:32s} {fast[key]:10.4f} {slow[key]:10.4f} {slow[key] / fast[key]:8.1f}x")


if __name__ == "__main__":
    main()
