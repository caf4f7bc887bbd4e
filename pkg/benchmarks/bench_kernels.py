"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from lemae.kernels import backends


def walk_case(impl):
    rng = np.random.default_rng(0)
    u = rng.random((4096, 256))

    def go():
        n = u.shape[0]
        impl.walk_advance(u, np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64),
                          np.zeros(n, np.bool_), 20, 0.6, True)
    return go


def td_case(impl):
    rng = np.random.default_rng(1)
    T, S = 20_000, 500
    q = np.zeros((S, 4))
    keys, nxt = rng.integers(0, S, T), rng.integers(0, S, T)
    acts, rew = rng.integers(0, 4, T), rng.random(T)
    term = (rng.random(T) < 0.01).astype(np.uint8)
    return lambda: impl.td_sweep(q, keys, acts, rew, nxt, term, 0.02, 0.99)


def shaping_case(impl):
    rng = np.random.default_rng(2)
    states = rng.integers(0, 30, size=(301, 5)).astype(np.int64)
    idx = np.array([0, 2], dtype=np.int64)
    goal = np.array([16.0, 16.0])
    out = np.zeros(300)
    return lambda: [impl.segment_shaping(states, 0, 300, idx, goal, out) for _ in range(100)]


CASES = {"walk_advance": walk_case, "td_sweep": td_case, "segment_shaping x100": shaping_case}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = backends()
    if "cython" not in impls:
        print("compiled kernels are not built; only the fallback is timed")
    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, make in CASES.items():
        best = {name: min(timeit.repeat(make(impl), number=1, repeat=args.repeat)) for name, impl in impls.items()}
        row = f"{label:<22}" + "".join(f"{best[n] * 1e3:>10.2f}ms" for n in impls)
        if "cython" in best:
            row += f"{best['python'] / best['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
