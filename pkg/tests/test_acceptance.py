"""Acceptance suite: one test per criterion, summarised as PASS/FAIL lines at the end of the run."""

import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from _fixtures import (
    GEN, GOOD, HEALTHY, MISSING_PROPAGATION, REFINE, SILENT, WARN_ON_SUCCESS, dsl, expected_ids,
    quality_kinds, random_scoping_fixture, scoping_alert, scoping_store,
)
from _oracles import brute_force_hac, log_cosine, random_hac_instance, random_vector
from alertpilot.chains import build_chain
from alertpilot.clustering import RequestEmbedding, hac_cluster, similarity
from alertpilot.errors import ScopingFailed
from alertpilot.llm import ScriptedLlm, ScriptRule
from alertpilot.logstore import RawLogRecord
from alertpilot.parsing import parse_all
from alertpilot.pipeline import cluster_requests, run_diagnose
from alertpilot.promql import load_alert, parse_alert_expr
from alertpilot.scoping import ToolCache, check_alignment, scope_logs
from alertpilot.synth import default_spec, gen_synth, generate_records
from make_golden import GOLDEN, run_golden
from test_chains import check_chain_invariants, _random_request
from test_parsing import load_corpus

THETAS = (0.60, 0.65, 0.70, 0.75, 0.80)


def _emb(rid, counts):
    return RequestEmbedding(rid, np.asarray(counts, dtype=np.int64))


@pytest.mark.criterion(1, "similarity matches the straight-line oracle on 1000 pairs (1e-9), symmetric, self=1 (1e-12), < 1 s")
def test_criterion_01_similarity_oracle():
    rng = random.Random(1)
    pairs = []
    for _ in range(1000):
        dim = rng.randint(1, 40)
        pairs.append((random_vector(rng, dim, 1000), random_vector(rng, dim, 1000)))
    start = time.perf_counter()
    for a, b in pairs:
        ea, eb = _emb("a", a), _emb("b", b)
        got = similarity(ea, eb)
        assert abs(got - log_cosine(a, b)) <= 1e-9
        assert abs(got - similarity(eb, ea)) <= 1e-12
        assert abs(similarity(ea, ea) - 1.0) <= 1e-12
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "HAC partition equals the brute-force oracle on 200 instances of <= 12 requests, < 10 s")
def test_criterion_02_hac_oracle():
    rng = random.Random(2)
    instances = [random_hac_instance(rng, 12) for _ in range(200)]
    start = time.perf_counter()
    for ids, vecs, theta in instances:
        got = hac_cluster([_emb(i, v) for i, v in zip(ids, vecs)], theta, "average").partition()
        assert got == brute_force_hac(ids, vecs, theta, "average")
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(3, "3-pattern workload: purity 1.0 for every theta in 0.60..0.80, cluster count non-decreasing")
def test_criterion_03_threshold_sensitivity():
    docs, truth = generate_records(default_spec(300, 3, seed=3))
    records = [RawLogRecord.from_json(d, seq=i) for i, d in enumerate(docs) if d["request_id"] in truth]
    _, assigned = parse_all(records)
    event_of = {a.record_seq: a.event_id for a in assigned}
    by_request = {}
    for r in records:
        by_request.setdefault(r.request_id, []).append(r)
    counts = []
    for theta in THETAS:
        clusters = cluster_requests(by_request, event_of, theta)
        for c in clusters.clusters:
            assert len({truth[m] for m in c.members}) == 1, theta
        counts.append(len(clusters.clusters))
    assert counts == sorted(counts)


@pytest.mark.criterion(4, "200-3000 requests with <= 10 patterns: reduction >= 0.95 and RCA calls = clusters")
@pytest.mark.parametrize("n_requests,n_patterns,seed", [(200, 3, 41), (1000, 6, 42), (3000, 10, 43)])
def test_criterion_04_reduction(tmp_path, n_requests, n_patterns, seed):
    out = gen_synth(default_spec(n_requests, n_patterns, seed=seed), tmp_path / "in")
    llm = ScriptedLlm.from_file(out.scenario_file)
    result = run_diagnose(load_alert(out.alert_file), out.log_file, llm, tmp_path / "out")
    m = result.metrics
    assert m.scoped_requests == n_requests
    assert m.reduction_ratio >= 0.95
    assert m.rca_llm_calls == m.clusters


@pytest.mark.criterion(5, "scoping bounds: 1 call, 3 calls, ScopingFailed after 3, warm cache 0 calls with identical records")
def test_criterion_05_scoping_bounds(tmp_path):
    alert, store = scoping_alert(), scoping_store()
    first = ScriptedLlm([ScriptRule(GEN, GOOD)])
    cold = scope_logs(alert, store, ToolCache(tmp_path / "cache.json"), first)
    assert first.usage().calls == 1

    recovering = ScriptedLlm([
        ScriptRule("alignment failure: records must satisfy code=\"403\"", GOOD),
        ScriptRule("UnknownField('resp_code')", dsl('WHERE gateway_id = "gw-1" AND account_id = "1001"')),
        ScriptRule(GEN, dsl('WHERE resp_code = "403"')),
    ])
    out = scope_logs(alert, store, ToolCache(), recovering)
    assert recovering.usage().calls == 3 and out.request_ids == expected_ids()

    failing = ScriptedLlm([
        ScriptRule('WHERE account_id = "1002"', dsl('WHERE code = "500"')),
        ScriptRule(REFINE, dsl('WHERE account_id = "1002"')),
        ScriptRule(GEN, dsl('WHERE gateway_id = "gw-2"')),
    ])
    with pytest.raises(ScopingFailed):
        scope_logs(alert, store, ToolCache(), failing)
    assert failing.usage().calls == 3

    warm_llm = ScriptedLlm([])
    warm = scope_logs(alert, store, ToolCache(tmp_path / "cache.json"), warm_llm)
    assert warm.cache_hit and warm_llm.usage().calls == 0
    assert [r.seq for r in warm.records] == [r.seq for r in cold.records]


@pytest.mark.criterion(6, "every successful scope_logs output passes check_alignment on 50 seeded fixtures")
def test_criterion_06_alignment_soundness():
    for seed in range(50):
        alert, store, llm = random_scoping_fixture(seed)
        out = scope_logs(alert, store, ToolCache(), llm)
        assert check_alignment(parse_alert_expr(alert.expr), out.records) == [], seed


@pytest.mark.criterion(7, "50-line corpus yields exactly the 6 hand-derived templates; parse_all byte-deterministic over 10 runs")
def test_criterion_07_parsing_fixture():
    records, labels, expected = load_corpus()
    runs = [parse_all(records) for _ in range(10)]
    catalog, assigned = runs[0]
    assert [(e.event_id, e.template) for e in catalog] == sorted(expected.values())
    got = {a.record_seq: a.event_id for a in assigned}
    assert [got[r.seq] for r in records] == [expected[lab][0] for lab in labels]
    dumps = {repr(([e.to_json() for e in c], [(a.record_seq, a.event_id) for a in s])) for c, s in runs}
    assert len(dumps) == 1


@pytest.mark.criterion(8, "chain invariants hold on 500 seeded requests")
def test_criterion_08_chain_invariants():
    rng = random.Random(8)
    for i in range(500):
        recs, event_of = _random_request(rng, f"r{i}")
        check_chain_invariants(recs, event_of)
    assert build_chain("x", [RawLogRecord(1, "c", "info", "m", None, "x", {}, 0)], {0: "E"}).event_ids == ["E"]


@pytest.mark.criterion(9, "silent failure, warn-on-success and missing propagation each raise exactly their flag; healthy raises none")
def test_criterion_09_log_quality():
    assert quality_kinds(SILENT) == ["silent_failure"]
    assert quality_kinds(WARN_ON_SUCCESS) == ["level_inconsistency"]
    assert quality_kinds(MISSING_PROPAGATION) == ["missing_propagation"]
    assert quality_kinds(HEALTHY) == []


@pytest.mark.criterion(10, "golden report.json byte-identical across 5 runs and worker counts 1, 2, 8")
def test_criterion_10_end_to_end_determinism(tmp_path):
    expected = (GOLDEN / "expected" / "report.json").read_bytes()
    outputs = []
    for k in range(5):
        run_golden(tmp_path / f"run{k}")
        outputs.append((tmp_path / f"run{k}" / "report.json").read_bytes())
    for workers in (1, 2, 8):
        run_golden(tmp_path / f"w{workers}", workers=workers)
        outputs.append((tmp_path / f"w{workers}" / "report.json").read_bytes())
    assert all(o == expected for o in outputs)


@pytest.mark.criterion(11, "golden fixture (40 requests) diagnoses in < 5 s in a fresh process")
def test_criterion_11_latency():
    script = (
        "import sys, tempfile, time\n"
        f"sys.path.insert(0, {str(Path(__file__).parent)!r})\n"
        "from make_golden import run_golden\n"
        "start = time.perf_counter()\n"
        "result = run_golden(tempfile.mkdtemp())\n"
        "print(time.perf_counter() - start, result.metrics.scoped_requests)\n"
    )
    proc = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True)
    elapsed, requests = proc.stdout.split()
    assert int(requests) == 40
    assert float(elapsed) < 5.0
