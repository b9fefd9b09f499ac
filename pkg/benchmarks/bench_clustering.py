"""Compare the numba and numpy clustering kernels.

    python3 benchmarks/bench_clustering.py --sizes 200 1000 3000 --repeat 3

Each row times the pairwise similarity matrix and the agglomerative merge loop
on seeded count vectors drawn from a few noisy patterns. The numba kernels are
compiled (or loaded from cache) before timing starts. Labels from the two
backends are compared on every run.
"""

import argparse
import time

import numpy as np

from alertpilot.clustering import _kernels


def workload(n: int, dim: int, patterns: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    protos = rng.integers(0, 6, size=(patterns, dim)) * (rng.random((patterns, dim)) < 0.3)
    protos[:, 0] += 1
    counts = protos[rng.integers(0, patterns, size=n)]
    noise = rng.integers(0, 3, size=(n, dim)) * (rng.random((n, dim)) < 0.05)
    return counts + noise


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def run(sizes, dim, patterns, theta, repeat, seed):
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    before = _kernels.backend()
    _kernels.set_backend("numba")
    warm = workload(8, dim, patterns, seed)
    _kernels.hac_labels(_kernels.cosine_matrix(warm), theta)

    header = f"{'n':>6} {'backend':>8} {'similarity s':>13} {'hac s':>10} {'clusters':>9}"
    print(header)
    print("-" * len(header))
    try:
        for n in sizes:
            counts = workload(n, dim, patterns, seed)
            labels = {}
            for name in ("numpy", "numba"):
                _kernels.set_backend(name)
                t_sim, sim = best_of(lambda: _kernels.cosine_matrix(counts), repeat)
                t_hac, lab = best_of(lambda: _kernels.hac_labels(sim, theta), repeat)
                labels[name] = lab
                print(f"{n:>6} {name:>8} {t_sim:>13.4f} {t_hac:>10.4f} {len(np.unique(lab)):>9}")
            if not np.array_equal(labels["numpy"], labels["numba"]):
                raise SystemExit(f"backends disagree at n={n}")
    finally:
        _kernels.set_backend(before)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 3000])
    p.add_argument("--dim", type=int, default=60, help="vocabulary size")
    p.add_argument("--patterns", type=int, default=10)
    p.add_argument("--theta", type=float, default=0.7)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    run(a.sizes, a.dim, a.patterns, a.theta, a.repeat, a.seed)


if __name__ == "__main__":
    main()
