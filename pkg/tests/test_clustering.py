import math
import random

import numpy as np
import pytest

from _oracles import brute_force_hac, log_cosine, random_hac_instance, random_vector
from alertpilot.clustering import (
    RequestEmbedding,
    build_vocabulary,
    embed_request,
    hac_cluster,
    select_representative,
    similarity,
    similarity_matrix,
)
from alertpilot.clustering import _kernels
from alertpilot.errors import DimensionMismatch, EmptyInput, UnknownEvent


def emb(rid, counts):
    return RequestEmbedding(rid, np.asarray(counts, dtype=np.int64))


@pytest.fixture(params=["numba", "numpy"])
def each_backend(request):
    before = _kernels.backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(before)


# --------------------------------------------------------------------------
# vocabulary and embeddings


def test_vocabulary():
    assert build_vocabulary([["A", "B"], ["B", "C"]]).entries == ("A", "B", "C")
    assert len(build_vocabulary([["A"]])) == 1
    assert build_vocabulary([["C", "A"], ["B"]]) == build_vocabulary([["B"], ["A", "C"]])
    with pytest.raises(EmptyInput):
        build_vocabulary([[], []])


def test_embed_request():
    vocab = build_vocabulary([["A", "B", "C"]])
    assert embed_request("r", ["A", "A", "B"], vocab).counts.tolist() == [2, 1, 0]
    assert embed_request("r", ["A", "B", "C"], vocab).counts.tolist() == [1, 1, 1]
    assert embed_request("r", ["B"] * 10, vocab).counts.tolist() == [0, 10, 0]
    with pytest.raises(UnknownEvent):
        embed_request("r", ["Z"], vocab)


# --------------------------------------------------------------------------
# similarity


def test_similarity_examples():
    assert similarity(emb("a", [2, 1, 0]), emb("b", [2, 1, 0])) == pytest.approx(1.0, abs=1e-12)
    assert similarity(emb("a", [1, 0]), emb("b", [0, 1])) == 0.0
    # ln10 * ln2 * 2 / (ln10^2 + ln2^2)
    expected = 2 * math.log(10) * math.log(2) / (math.log(10) ** 2 + math.log(2) ** 2)
    assert similarity(emb("a", [9, 0, 1]), emb("b", [1, 0, 9])) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.5520, abs=1e-4)


def test_similarity_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        similarity(emb("a", [1, 0]), emb("b", [1, 0, 0]))
    with pytest.raises(DimensionMismatch):
        similarity_matrix([emb("a", [1, 0]), emb("b", [1, 0, 0])])


def test_similarity_against_oracle_1000_pairs():
    rng = random.Random(7)
    for _ in range(1000):
        dim = rng.randint(1, 30)
        a, b = random_vector(rng, dim, 500), random_vector(rng, dim, 500)
        got = similarity(emb("a", a), emb("b", b))
        assert abs(got - log_cosine(a, b)) <= 1e-9
        assert abs(got - similarity(emb("b", b), emb("a", a))) <= 1e-12
        assert abs(similarity(emb("a", a), emb("a", a)) - 1.0) <= 1e-12
        assert 0.0 <= got <= 1.0


def test_similarity_matrix_matches_pairwise(each_backend):
    rng = random.Random(11)
    es = [emb(f"r{i}", random_vector(rng, 12, 40)) for i in range(25)]
    sim = similarity_matrix(es)
    for i in range(25):
        for j in range(25):
            assert abs(sim[i, j] - similarity(es[i], es[j])) <= 1e-12


def test_load_robustness_fixture():
    # Two requests share four events; one of them retries the last event k times.
    # Log scaling damps the effect of the retry burst on the similarity.
    base = [1, 1, 1, 1]
    for k in (2, 5, 20, 100):
        burst = [1, 1, 1, k]
        plain_drop = 1.0 - float(np.dot(base, burst) / (np.linalg.norm(base) * np.linalg.norm(burst)))
        log_drop = 1.0 - log_cosine(base, burst)
        assert log_drop < plain_drop
    assert log_cosine(base, [1, 1, 1, 20]) == pytest.approx(0.7828, abs=1e-4)


def test_uniform_load_scaling_leaves_plain_cosine_unchanged():
    # Multiplying a whole vector by k cannot move plain cosine, so log scaling cannot beat it there.
    a, b = [5, 1, 0, 2], [3, 3, 1, 0]
    for k in (2, 10):
        ka = [k * x for x in a]
        plain = lambda x, y: float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))  # noqa: E731
        assert plain(ka, b) == pytest.approx(plain(a, b), abs=1e-12)
        assert log_cosine(ka, b) != pytest.approx(log_cosine(a, b), abs=1e-6)


# --------------------------------------------------------------------------
# clustering


def test_single_and_identical():
    assert hac_cluster([emb("a", [1, 2])]).partition() == {frozenset({"a"})}
    assert hac_cluster([emb("a", [1, 2]), emb("b", [1, 2])], 0.7).partition() == {frozenset({"a", "b"})}


def test_two_patterns_eight_requests(each_backend):
    pattern_a = [[3, 2, 1, 0, 0, 0], [3, 2, 1, 0, 0, 0], [4, 2, 1, 0, 0, 0], [3, 2, 2, 0, 0, 0]]
    pattern_b = [[0, 0, 0, 1, 5, 2], [0, 0, 0, 1, 5, 2], [0, 0, 0, 1, 6, 2], [0, 0, 1, 1, 5, 2]]
    ids = [f"a{i}" for i in range(4)] + [f"b{i}" for i in range(4)]
    vecs = pattern_a + pattern_b
    for x, va in zip(ids, vecs):
        for y, vb in zip(ids, vecs):
            s = log_cosine(va, vb)
            assert s > 0.9 if x[0] == y[0] else s < 0.3
    got = hac_cluster([emb(i, v) for i, v in zip(ids, vecs)], 0.7).partition()
    assert got == {frozenset(ids[:4]), frozenset(ids[4:])}
    assert got == brute_force_hac(ids, vecs, 0.7)


@pytest.mark.parametrize("linkage", ["average", "single", "complete"])
def test_hac_matches_brute_force_oracle(each_backend, linkage):
    rng = random.Random(2024)
    for _ in range(200):
        ids, vecs, theta = random_hac_instance(rng)
        got = hac_cluster([emb(i, v) for i, v in zip(ids, vecs)], theta, linkage)
        assert got.partition() == brute_force_hac(ids, vecs, theta, linkage), (ids, vecs, theta)


def test_backend_parity():
    rng = np.random.default_rng(5)
    for n in (1, 2, 7, 40, 150):
        counts = rng.integers(0, 4, size=(n, 15)) * (rng.random((n, 15)) < 0.4)
        counts[:, 0] += 1
        mats, labels = {}, {}
        before = _kernels.backend()
        try:
            for name in ("numba", "numpy"):
                _kernels.set_backend(name)
                mats[name] = _kernels.cosine_matrix(counts)
                labels[name] = {lk: _kernels.hac_labels(mats[name], 0.6, lk).tolist() for lk in _kernels.LINKAGES}
        finally:
            _kernels.set_backend(before)
        assert np.max(np.abs(mats["numba"] - mats["numpy"])) <= 1e-12
        assert labels["numba"] == labels["numpy"]


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")


def test_vocabulary_permutation_invariance():
    rng = random.Random(99)
    for _ in range(30):
        ids, vecs, theta = random_hac_instance(rng)
        perm = list(range(len(vecs[0])))
        rng.shuffle(perm)
        plain = [emb(i, v) for i, v in zip(ids, vecs)]
        permuted = [emb(i, [v[p] for p in perm]) for i, v in zip(ids, vecs)]
        assert np.allclose(similarity_matrix(plain), similarity_matrix(permuted), atol=1e-12, rtol=0)
        a, b = hac_cluster(plain, theta), hac_cluster(permuted, theta)
        assert a.partition() == b.partition()
        assert {c.representative for c in a.clusters} == {c.representative for c in b.clusters}


def test_input_order_invariance():
    rng = random.Random(3)
    ids, vecs, theta = random_hac_instance(rng, 12)
    es = [emb(i, v) for i, v in zip(ids, vecs)]
    assert hac_cluster(es, theta) == hac_cluster(list(reversed(es)), theta)


def test_threshold_extremes():
    rng = random.Random(17)
    for _ in range(20):
        dim = 6
        vecs = [random_vector(rng, dim) for _ in range(rng.randint(2, 10))]
        for v in vecs:
            v[0] += 1  # every pair shares an event, so every similarity is positive
        es = [emb(f"r{i}", v) for i, v in enumerate(vecs)]
        assert len(hac_cluster(es, 1e-9).clusters) == 1
    distinct = [emb("a", [1, 0, 2]), emb("b", [2, 0, 1]), emb("c", [1, 1, 1])]
    assert len(hac_cluster(distinct, 1.0).clusters) == 3


def test_threshold_validation():
    with pytest.raises(ValueError):
        hac_cluster([emb("a", [1])], 0.0)
    with pytest.raises(ValueError):
        hac_cluster([emb("a", [1])], 0.5, linkage="ward")
    with pytest.raises(EmptyInput):
        hac_cluster([])


def test_cluster_set_json_and_order():
    es = [emb("x", [1, 0]), emb("y", [0, 1]), emb("z", [0, 1])]
    doc = hac_cluster(es, 0.7).to_json()
    assert doc == {"threshold": 0.7, "clusters": [
        {"cluster_id": "c1", "members": ["y", "z"], "representative": "y"},
        {"cluster_id": "c2", "members": ["x"], "representative": "x"},
    ]}


# --------------------------------------------------------------------------
# representatives


def test_representative_singleton():
    assert select_representative(["only"], {"only": emb("only", [1])}) == "only"


def test_representative_prefers_identical_pair():
    # scaled: b = a = [ln3, ln2, 0] ~ [1.0986, 0.6931, 0], c = [0, ln2, ln4] ~ [0, 0.6931, 1.3863]
    # centroid ~ [0.7324, 0.6931, 0.4621]; cos(a, centroid) ~ 0.892, cos(c, centroid) ~ 0.652
    es = {"b": emb("b", [2, 1, 0]), "a": emb("a", [2, 1, 0]), "c": emb("c", [0, 1, 3])}
    assert select_representative(["c", "b", "a"], es) == "a"


def test_representative_all_identical_is_smallest_id():
    es = {k: emb(k, [3, 1]) for k in ("r9", "r10", "r2")}
    assert select_representative(list(es), es) == "r10"


def test_representative_is_a_member_and_centroid_closest():
    rng = random.Random(8)
    for _ in range(50):
        ids, vecs, _ = random_hac_instance(rng)
        es = {i: emb(i, v) for i, v in zip(ids, vecs)}
        rep = select_representative(ids, es)
        scaled = {i: [math.log1p(x) for x in v] for i, v in zip(ids, vecs)}
        centroid = [math.fsum(col) / len(ids) for col in zip(*scaled.values())]

        def cos(u):
            return math.fsum(x * y for x, y in zip(u, centroid)) / (
                math.sqrt(math.fsum(x * x for x in u)) * math.sqrt(math.fsum(y * y for y in centroid)))

        best = max(cos(u) for u in scaled.values())
        assert rep in es
        assert cos(scaled[rep]) >= best - 1e-9
        assert rep == min(i for i in ids if cos(scaled[i]) >= best - 1e-9)


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path

    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_clustering.py"))
    bench["run"]([30, 60], dim=12, patterns=3, theta=0.7, repeat=1, seed=1)
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 + 4 and {"numba", "numpy"} <= {ln.split()[1] for ln in lines[2:]}
