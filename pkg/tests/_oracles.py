"""Independent straight-line oracles shared by the module tests and the acceptance suite."""

import math
import random

TIE_EPS = 1e-12


def log_cosine(a, b):
    """Cosine of log(1 + x) vectors, evaluated element by element with math.fsum."""
    la = [math.log(1.0 + x) for x in a]
    lb = [math.log(1.0 + x) for x in b]
    dot = math.fsum(x * y for x, y in zip(la, lb))
    na = math.sqrt(math.fsum(x * x for x in la))
    nb = math.sqrt(math.fsum(y * y for y in lb))
    return dot / (na * nb)


def brute_force_hac(ids, vectors, theta, linkage="average"):
    """Naive agglomeration: rescan every cluster pair from scratch after each merge.

    Linkage similarity is recomputed from member pairs each time. Near-ties
    (within TIE_EPS) go to the pair whose sorted (min id, min id) is smallest.
    """
    pair = {}
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            pair[a, b] = min(1.0, max(0.0, log_cosine(vectors[i], vectors[j])))
    clusters = [[x] for x in sorted(ids)]
    while len(clusters) > 1:
        scored = []
        for p in range(len(clusters)):
            for q in range(p + 1, len(clusters)):
                cross = [pair[a, b] for a in clusters[p] for b in clusters[q]]
                if linkage == "average":
                    s = math.fsum(cross) / len(cross)
                elif linkage == "single":
                    s = max(cross)
                else:
                    s = min(cross)
                scored.append((s, p, q))
        best = max(s for s, _, _ in scored)
        if best < theta:
            break
        tied = [(min(clusters[p]), min(clusters[q]), p, q) for s, p, q in scored if s >= best - TIE_EPS]
        _, _, p, q = min((min(x, y), max(x, y), p, q) for x, y, p, q in tied)
        clusters[p] = sorted(clusters[p] + clusters[q])
        del clusters[q]
    return {frozenset(c) for c in clusters}


def random_vector(rng, dim, hi=6):
    while True:
        v = [rng.randint(0, hi) if rng.random() < 0.6 else 0 for _ in range(dim)]
        if any(v):
            return v


def random_hac_instance(rng: random.Random, max_n=12):
    """Mixture of a few noisy prototypes so that merges, near-ties and duplicates all occur."""
    n = rng.randint(1, max_n)
    dim = rng.randint(2, 8)
    protos = [random_vector(rng, dim) for _ in range(rng.randint(1, 4))]
    vectors = []
    for _ in range(n):
        base = list(rng.choice(protos))
        if rng.random() < 0.5:
            k = rng.randrange(dim)
            base[k] = max(0, base[k] + rng.randint(-2, 4))
        if not any(base):
            base[0] = 1
        vectors.append(base)
    ids = [f"req-{rng.randrange(10**6):06d}-{i}" for i in range(n)]
    theta = round(rng.uniform(0.2, 0.99), 6)
    return ids, vectors, theta
