"""Acceptance gate: one test per criterion, summarised as one PASS/FAIL line each.

Run on its own with ``pytest tests/test_acceptance.py -v``.  Stats rows written by
criteria 7 and 8 go to ``$ACCEPTANCE_OUT/stats.csv`` (default ``out/acceptance``).
"""

import contextlib
import itertools
import json
import os
import random
import statistics
from pathlib import Path

import pytest

from spinv.adapt import PolicyParams
from spinv.cli import main
from spinv.invariant import (NumericTensor, invariant_naive,
                             make_test_symplectic, numeric_evaluate, symplectic_transform,
                             verify_symplectic)
from spinv.output import StatsRow, append_stats
from spinv.polyarith import deserialize, random_polynomial, scale, serialize
from spinv.schemes import RunConfig, run

from conftest import optimized
from soak import run_soak

RESULTS = {}
TITLES = {
    1: "size-8 invariant is nonzero",
    2: "optimized == naive (sizes 2, 4, 6)",
    3: "scheme x W x g matrix byte-identical",
    4: "symplectic invariance (>=10 pairs, sizes 2, 4)",
    5: "degree-4 homogeneity and c^4 scaling",
    6: "adaptation triggers (addworker, hier, forced sweep)",
    7: "ratio x maxresult grid: equal results",
    8: "mw speedup W=4 vs W=1 at size 8",
    9: "transport soak 1e5 + 1000 round-trips",
}


def stats_path():
    root = Path(os.environ.get("ACCEPTANCE_OUT", Path(__file__).resolve().parents[1] / "out" / "acceptance"))
    return root / "stats.csv"


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is None:
        return
    tr.write_line("")
    tr.write_sep("=", "acceptance criteria")
    for n in sorted(TITLES):
        status, note = RESULTS.get(n, ("NOT RUN", ""))
        tr.write_line(f"criterion {n}: {status:7s} {TITLES[n]}" + (f"  [{note}]" if note else ""))


@contextlib.contextmanager
def criterion(n):
    notes = []
    try:
        yield notes
    except pytest.skip.Exception as exc:
        RESULTS[n] = ("SKIP", str(exc.msg))
        raise
    except BaseException:
        RESULTS[n] = ("FAIL", "; ".join(notes))
        raise
    RESULTS[n] = ("PASS", "; ".join(notes))


def test_criterion_1_nonzero_at_size_8(tmp_path):
    with criterion(1) as notes:
        out = tmp_path / "c1"
        assert main(["compute", "--size", "8", "--algorithm", "optimized", "--out", str(out)]) == 0
        meta = json.loads((out / "metadata.json").read_text())
        poly = deserialize((out / "invariant.bin").read_bytes())
        assert not poly.is_zero() and meta["is_zero"] is False
        notes.append(f"{poly.num_terms()} terms in {meta['wall_seconds']:.2f}s")


def test_criterion_2_oracle_equivalence():
    with criterion(2) as notes:
        for size in (2, 4, 6):
            naive = invariant_naive(size, prune=True)
            assert naive.poly == optimized(size), size
            notes.append(f"S={size}: {naive.poly.num_terms()} terms")


def test_criterion_3_scheme_matrix():
    with criterion(3) as notes:
        runs = 0
        for size in (2, 4):
            n3 = (size // 2) ** 3
            expected = serialize(optimized(size))
            for scheme, W, g in itertools.product(
                    ["mw", "addworker", "hier", "stateful", "combined"], [1, 2, 4, 8], sorted({1, 4, n3})):
                g = min(g, n3)
                res, _ = run(RunConfig(size, scheme, W, g).validate())
                assert serialize(res.poly) == expected, (size, scheme, W, g)
                runs += 1
        notes.append(f"{runs} runs")


def test_criterion_4_symplectic_invariance():
    with criterion(4) as notes:
        checked = 0
        for size in (2, 4):
            poly = optimized(size)
            for i in range(10):
                t = NumericTensor.random(size, f"acceptance/t/{size}/{i}")
                K = make_test_symplectic(size, f"acceptance/K/{size}/{i}")
                assert verify_symplectic(K, size)
                assert numeric_evaluate(poly, symplectic_transform(t, K)) == numeric_evaluate(poly, t)
                checked += 1
        notes.append(f"{checked} pairs")


def test_criterion_5_homogeneity():
    with criterion(5):
        for size in (2, 4, 6, 8):
            poly = optimized(size)
            assert poly.degrees() <= {4}
            t = NumericTensor.random(size, f"acceptance/scale/{size}")
            base = numeric_evaluate(poly, t)
            for c in range(-3, 4):
                assert numeric_evaluate(poly, t.scaled(c)) == c ** 4 * base


def test_criterion_6_adaptation_triggers():
    with criterion(6) as notes:
        # (a) master-side add delay
        res, stats = run(RunConfig(4, "combined", 4, 1, inject_add_delay_ms=10).validate())
        assert res.poly == optimized(4)
        assert stats.switch_events and stats.switch_events[0]["target"] == "addworker"
        notes.append(f"addworker at item {stats.switch_item_index}")
        # (b) dispatch delay starves the workers
        cfg = RunConfig(6, "combined", 4, 1, policy=PolicyParams(maxresult=2, window=4),
                        inject_add_delay_ms=10, inject_dispatch_delay_ms=20).validate()
        res, stats = run(cfg)
        assert res.poly == optimized(6)
        hier = [e for e in stats.switch_events if e["target"] == "hier"]
        assert hier
        notes.append(f"hier at item {hier[0]['item_index']}")
        # (c) forced switches at every index, size 2
        expected = optimized(2)
        for k in range(2):
            for kw in ({"force_addworker_at": k}, {"force_hier_at": k},
                       {"force_addworker_at": k, "force_hier_at": k + 1}):
                for W in (1, 2, 4):
                    assert run(RunConfig(2, "combined", W, 1, **kw).validate())[0].poly == expected


def test_criterion_7_parameter_grid():
    with criterion(7) as notes:
        walls = {}
        hashes = set()
        for ratio, maxresult in itertools.product([0.5, 1.0, 2.0], [4, 16, 64]):
            cfg = RunConfig(8, "combined", 4, 1,
                            policy=PolicyParams(ratio=ratio, maxresult=maxresult)).validate()
            res, stats = run(cfg)
            append_stats(stats_path(), StatsRow.from_run(res, stats, cfg), stats.switch_events)
            hashes.add(serialize(res.poly))
            walls[(ratio, maxresult)] = stats.wall_seconds
        assert len(hashes) == 1
        assert deserialize(hashes.pop()) == optimized(8)
        med = statistics.median(walls.values())
        notes.append(f"wall {min(walls.values()):.2f}-{max(walls.values()):.2f}s, "
                     f"spread {(max(walls.values()) - min(walls.values())) / med:.0%} of median (reported only)")


def test_criterion_8_speedup():
    with criterion(8) as notes:
        walls = {}
        for W in (1, 4):
            cfg = RunConfig(8, "mw", W, 1, transport="tcp", processes=True, timeout=300).validate()
            res, stats = run(cfg)
            assert res.poly == optimized(8)
            append_stats(stats_path(), StatsRow.from_run(res, stats, cfg))
            walls[W] = stats.wall_seconds
        ratio = walls[4] / walls[1]
        cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
        notes.append(f"W=1 {walls[1]:.2f}s, W=4 {walls[4]:.2f}s, ratio {ratio:.2f}, {cores} core(s)")
        if cores < 4:
            pytest.skip(f"needs >= 4 cores, machine has {cores}; measured ratio {ratio:.2f} "
                        f"recorded in {stats_path()}")
        assert ratio <= 0.8


def test_criterion_9_transport_and_serialization():
    with criterion(9) as notes:
        for backend in ("inproc", "tcp"):
            received, violations = run_soak(backend, 100_000)
            assert violations == []
            assert received == 100_000
        rng = random.Random(2024)
        for i in range(1000):
            p = random_polynomial(rng.randint(1, 60), rng.randint(1, 128), rng.randint(1, 6), seed=f"c9/{i}")
            p = scale(p, rng.choice([1, -1, 3 ** 80]))
            data = serialize(p)
            assert deserialize(data) == p and serialize(deserialize(data)) == data
        notes.append("1e5 messages per backend, 1000 polynomials")
