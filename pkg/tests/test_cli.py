import csv
import io
import json
import os
import socket
import subprocess
import sys
import threading
import time

import pytest

from spinv.cli import main
from spinv.output import read_stats, reverify
from spinv.polyarith import content_hash, deserialize, from_text

from conftest import optimized


def spinv(*argv):
    return main([str(a) for a in argv])


def test_compute_writes_files_and_stats(tmp_path, capsys):
    out = tmp_path / "run"
    assert spinv("compute", "--size", 2, "--algorithm", "naive", "--scheme", "seq", "--out", out) == 0
    assert {p.name for p in out.iterdir()} == {"invariant.bin", "invariant.txt", "metadata.json", "stats.csv"}
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["size"] == 2 and meta["algorithm"] == "naive"
    rows, switches = read_stats(out / "stats.csv")
    assert len(rows) == 1 and switches == []
    assert rows[0]["scheme"] == "seq" and rows[0]["switch_item_index"] == "-1"
    assert rows[0]["result_is_zero"] == "True"
    assert reverify(out)


def test_compute_parallel_round_trips(tmp_path):
    out = tmp_path / "run"
    assert spinv("compute", "--size", 4, "--scheme", "stateful", "--workers", 3, "--out", out) == 0
    assert deserialize((out / "invariant.bin").read_bytes()) == optimized(4)
    assert from_text((out / "invariant.txt").read_text()) == (optimized(4), 4)
    assert reverify(out)


def test_compute_formats(tmp_path):
    assert spinv("compute", "--size", 4, "--format", "binary", "--out", tmp_path / "b") == 0
    assert not (tmp_path / "b" / "invariant.txt").exists()
    assert spinv("compute", "--size", 4, "--format", "text", "--out", tmp_path / "t") == 0
    assert not (tmp_path / "t" / "invariant.bin").exists()
    assert reverify(tmp_path / "b") and reverify(tmp_path / "t")


def test_reverify_detects_tampering(tmp_path):
    out = tmp_path / "run"
    spinv("compute", "--size", 4, "--out", out)
    text = (out / "invariant.txt").read_text().splitlines()
    text[1] = text[1].replace("+", "-", 1) if text[1].startswith("+") else text[1].replace("-", "+", 1)
    (out / "invariant.txt").write_text("\n".join(text) + "\n")
    assert not reverify(out)


def test_compute_size_8_combined_nonzero(tmp_path):
    out = tmp_path / "run"
    assert spinv("compute", "--size", 8, "--scheme", "combined", "--workers", 8, "--out", out) == 0
    rows, _ = read_stats(out / "stats.csv")
    assert rows[0]["result_is_zero"] == "False"
    assert int(rows[0]["result_terms"]) == 62208


@pytest.mark.parametrize("size", [3, 0, 1])
def test_compute_odd_size_is_usage_error(size, tmp_path):
    assert spinv("compute", "--size", size, "--out", tmp_path) == 2


def test_bad_policy_is_usage_error(tmp_path):
    assert spinv("compute", "--size", 4, "--scheme", "addworker", "--maxresult", 1, "--out", tmp_path) == 2
    assert spinv("compute", "--size", 4, "--scheme", "mw", "--granularity", 99, "--out", tmp_path) == 2


def test_unknown_flag_is_usage_error():
    assert spinv("compute", "--size", 4, "--frobnicate") == 2


def test_tensor_out_default(tmp_path, monkeypatch):
    monkeypatch.setenv("TENSOR_OUT", str(tmp_path / "env"))
    assert spinv("compute", "--size", 2) == 0
    assert (tmp_path / "env" / "metadata.json").exists()


def test_stats_csv_is_append_only(tmp_path):
    stats = tmp_path / "stats.csv"
    for scheme in ("mw", "addworker"):
        assert spinv("compute", "--size", 4, "--scheme", scheme, "--workers", 2,
                     "--out", tmp_path / scheme, "--stats", stats) == 0
    lines = stats.read_text().splitlines()
    assert sum(1 for line in lines if line.startswith("scheme,")) == 1
    rows, _ = read_stats(stats)
    assert [r["scheme"] for r in rows] == ["mw", "addworker"]
    assert len({r["result_hash"] for r in rows}) == 1


def test_switch_lines_in_stats(tmp_path, capsys):
    stats = tmp_path / "stats.csv"
    assert spinv("compute", "--size", 4, "--scheme", "combined", "--workers", 3,
                 "--force-addworker-at", 2, "--out", tmp_path, "--stats", stats) == 0
    rows, switches = read_stats(stats)
    assert rows[0]["switch_item_index"] == "2"
    assert switches == [{"source": "mw", "target": "addworker", "item_index": 2}]
    assert "switch,mw,addworker,2" in capsys.readouterr().out


def test_verify_size_2(capsys):
    assert spinv("verify", "--size", 2) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") > 10


def test_verify_size_4_subset(capsys):
    assert spinv("verify", "--size", 4, "--schemes", "mw,stateful", "--workers", 4) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_verify_detects_mutation(capsys):
    code = spinv("verify", "--size", 4, "--schemes", "mw", "--workers", 2, "--samples", 2,
                 "--negate-accumulator", "T13")
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL naive == optimized" in out
    assert "first difference: " in out and "T[" in out


def test_verify_size_cap():
    assert spinv("verify", "--size", 6) == 2
    assert spinv("verify", "--size", 3) == 2


def test_bench_poly_one_point(tmp_path):
    out = tmp_path / "b.csv"
    assert spinv("bench-poly", "--terms", 50, "--vars", 8, "--reps", 1, "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["op"] for r in rows] == ["scale", "add"]
    assert all(r["terms"] == "50" and r["vars"] == "8" and float(r["seconds"]) >= 0 for r in rows)


def test_bench_poly_monotone_soft(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert spinv("bench-poly", "--terms", "100,10000", "--vars", 64, "--reps", 5, "--out", out) == 0
    add = {int(r["terms"]): float(r["seconds"]) for r in csv.DictReader(out.open()) if r["op"] == "add"}
    with capsys.disabled():
        print(f"\nbench-poly add median: 1e2 terms {add[100]:.2e}s, 1e4 terms {add[10000]:.2e}s")
    if add[10000] < add[100]:
        pytest.xfail("timing inversion on this machine (soft check)")


def test_bench_scaling_rows(capsys):
    assert spinv("bench-scaling", "--sizes", 4, "--schemes", "mw,addworker", "--workers", "2,4") == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 4
    assert len({r["result_hash"] for r in rows}) == 1
    assert rows[0]["result_hash"] == content_hash(optimized(4))


def test_bench_scaling_to_file(tmp_path):
    stats = tmp_path / "s.csv"
    assert spinv("bench-scaling", "--sizes", "2,4", "--schemes", "stateful", "--workers", 2,
                 "--stats", stats) == 0
    rows, _ = read_stats(stats)
    assert [r["size"] for r in rows] == ["2", "4"]


def test_bench_scaling_mismatch_commits_nothing(tmp_path):
    stats = tmp_path / "s.csv"
    assert spinv("bench-scaling", "--sizes", 4, "--schemes", "mw,addworker", "--workers", "2,4",
                 "--negate-accumulator", "T2", "--stats", stats) == 1
    assert not stats.exists()


def test_bench_scaling_empty_schemes():
    assert spinv("bench-scaling", "--schemes", "") == 2
    assert spinv("bench-scaling", "--schemes", "mw", "--sizes", 5) == 2


def test_worker_connect_failure_is_exit_3():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    assert spinv("compute", "--role", "worker", "--connect", f"127.0.0.1:{port}", "--rank", 1,
                 "--size", 4, "--scheme", "mw", "--transport", "tcp") == 3


def test_worker_needs_connect():
    assert spinv("compute", "--role", "worker", "--size", 4, "--transport", "tcp") == 2


def _port_taken(port):
    # probing with bind avoids handing the master a bogus worker connection
    with socket.socket() as s:
        try:
            s.bind(("127.0.0.1", port))
        except OSError:
            return True
    return False


def test_external_worker_processes(tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    addr = f"127.0.0.1:{port}"
    common = ["--size", "4", "--scheme", "hier", "--workers", "3", "--transport", "tcp"]
    codes = {}
    master = threading.Thread(target=lambda: codes.setdefault(
        "master", spinv("compute", *common, "--listen", addr, "--out", tmp_path, "--timeout", 60)))
    master.start()
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    deadline = time.monotonic() + 30
    while not _port_taken(port):
        assert time.monotonic() < deadline, "master never started listening"
        time.sleep(0.05)
    workers = []
    for rank in (1, 2, 3):
        workers.append(subprocess.Popen(
            [sys.executable, "-m", "spinv", "compute", "--role", "worker", "--connect", addr,
             "--rank", str(rank), *common], stdout=subprocess.PIPE, env=env))
    outs = [w.communicate(timeout=60)[0] for w in workers]
    master.join(60)
    assert codes == {"master": 0}
    assert all(w.returncode == 0 for w in workers)
    assert {json.loads(o.decode().splitlines()[-1])["role"] for o in outs} == {"foreman", "worker"}
    assert deserialize((tmp_path / "invariant.bin").read_bytes()) == optimized(4)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spinv", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("compute", "verify", "bench-poly", "bench-scaling"):
        assert cmd in proc.stdout
