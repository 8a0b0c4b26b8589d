"""Compare the compiled and pure-Python tape kernels.

Two workloads per backend:

* ``eval``: repeated evaluation of the full controller tape at a fixed state;
* ``run``: a complete closed-loop simulation of a shipped scenario.

Usage::

    python benchmarks/bench_kernel.py [--scenario ex1] [--t-end 5] [--repeat 3]
"""

import argparse
import time
from importlib import resources

import numpy as np

from nonovershoot import load_scenario, sim
from nonovershoot.tape import available_backends, get_backend


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_eval(sc, backend, n_evals, repeat):
    loop = sim.ClosedLoop(sc, backend=backend)
    kernel = get_backend(backend).TapeKernel(loop.tape)
    regs = loop.tape.fresh_registers()
    rng = np.random.default_rng(0)
    regs[: len(loop.tape.inputs)] = rng.uniform(-1.0, 1.0, len(loop.tape.inputs))
    hi = len(loop.tape.segments) - 1

    def work():
        for _ in range(n_evals):
            kernel.eval(regs, 0, hi)

    return best_of(work, repeat) / n_evals, loop.tape.n_instructions


def bench_run(sc, backend, repeat):
    return best_of(lambda: sim.run(sc, backend=backend), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="ex1", help="shipped scenario name or path to a TOML file")
    ap.add_argument("--t-end", type=float, default=5.0)
    ap.add_argument("--evals", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    path = args.scenario
    if not path.endswith(".toml"):
        path = resources.files("nonovershoot") / "scenarios" / f"{path}.toml"
    sc = load_scenario(path).with_changes(**{"sim.t_end": args.t_end})

    backends = available_backends()
    print(f"scenario {sc.name}, t_end {args.t_end}, dt {sc.dt}, backends {backends}")
    print(f"{'backend':<8} {'instr':>6} {'eval [us]':>10} {'run [s]':>9}")
    res = {}
    for b in backends:
        per_eval, n_instr = bench_eval(sc, b, args.evals, args.repeat)
        wall = bench_run(sc, b, args.repeat)
        res[b] = (per_eval, wall)
        print(f"{b:<8} {n_instr:>6d} {per_eval * 1e6:>10.2f} {wall:>9.3f}")
    if {"python", "cython"} <= res.keys():
        print("speedup  eval x{:.1f}, run x{:.1f}".format(res["python"][0] / res["cython"][0],
                                                         res["python"][1] / res["cython"][1]))


if __name__ == "__main__":
    main()
