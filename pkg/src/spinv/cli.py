"""Command-line entry point: ``spinv {compute,verify,bench-poly,bench-scaling}``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 transport failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import invariant as inv
from .adapt import PolicyParams
from .output import StatsRow, append_stats, default_out_dir, write_result
from .polyarith import (Polynomial, add, content_hash, random_polynomial_pair, scale, to_text)
from .schemes import SCHEMES, RunConfig, run, worker_main
from .transport import ConfigError, TransportError, connect_worker, parse_address

log = logging.getLogger("spinv")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _policy_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("adaptation policy")
    g.add_argument("--ratio", type=float, default=1.0,
                   help="switch to addworker when t_add > ratio * t_wait (inf disables)")
    g.add_argument("--maxresult", type=int, default=16, help="results batched per ADD task")
    g.add_argument("--window", type=int, default=32, help="requests in the starvation vote window")
    g.add_argument("--starvation-fraction", type=float, default=0.5)
    g.add_argument("--hier-ratio", type=float, default=1.0)
    g.add_argument("--foremen-on-switch", type=int, default=None)
    g.add_argument("--inject-add-delay-ms", type=float, default=0.0)
    g.add_argument("--inject-compute-delay-ms", type=float, default=0.0)
    g.add_argument("--inject-dispatch-delay-ms", type=float, default=0.0)
    g.add_argument("--force-addworker-at", type=int, default=None, help=argparse.SUPPRESS)
    g.add_argument("--force-hier-at", type=int, default=None, help=argparse.SUPPRESS)


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", choices=SCHEMES, default="seq")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--granularity", type=int, default=1)
    p.add_argument("--foremen", type=int, default=None)
    p.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    p.add_argument("--threads", action="store_true",
                   help="with tcp, run workers as threads of this process instead of child processes")
    p.add_argument("--listen", default=None, help="tcp master address host:port")
    p.add_argument("--connect", default=None, help="tcp master address for a worker")
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--role", choices=("master", "worker"), default="master")
    p.add_argument("--timeout", type=float, default=None, help="per-receive timeout in seconds")
    p.add_argument("--negate-accumulator", default=None, help=argparse.SUPPRESS)
    _policy_flags(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compute", help="compute the invariant and write it out")
    c.add_argument("--size", type=int, required=True)
    c.add_argument("--algorithm", choices=("naive", "optimized"), default="optimized")
    _run_flags(c)
    c.add_argument("--out", default=None, help="output directory (default $TENSOR_OUT or ./out/<timestamp>)")
    c.add_argument("--stats", default=None, help="stats CSV to append to (default <out>/stats.csv)")
    c.add_argument("--format", choices=("text", "binary", "both"), default="both")
    c.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("--size", type=int, default=2)
    v.add_argument("--max-size", type=int, default=4, help="refuse sizes above this cap")
    v.add_argument("--schemes", type=_str_list, default=["mw", "addworker", "hier", "stateful", "combined"])
    v.add_argument("--workers", type=_int_list, default=[1, 2, 4])
    v.add_argument("--granularities", type=_int_list, default=None,
                   help="default: 1 and the full triple count")
    v.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    v.add_argument("--samples", type=int, default=10, help="symplectic invariance spot checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--negate-accumulator", default=None, help=argparse.SUPPRESS)
    v.add_argument("--timeout", type=float, default=120.0)

    b = sub.add_parser("bench-poly", help="time scale() and add() on generated polynomials")
    b.add_argument("--terms", type=_int_list, default=[100, 1000, 10000])
    b.add_argument("--vars", type=_int_list, default=[16, 256])
    b.add_argument("--max-exp", type=int, default=3)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV file (default stdout)")

    s = sub.add_parser("bench-scaling", help="sweep sizes x schemes x workers x granularities")
    s.add_argument("--sizes", type=_int_list, default=[4])
    s.add_argument("--schemes", type=_str_list, default=["mw", "addworker"])
    s.add_argument("--workers", type=_int_list, default=[1, 2, 4])
    s.add_argument("--granularities", type=_int_list, default=[1])
    s.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    s.add_argument("--threads", action="store_true")
    s.add_argument("--stats", default=None, help="stats CSV (default stdout)")
    s.add_argument("--timeout", type=float, default=None)
    # test hook: negate this accumulator in the last run of each size group
    s.add_argument("--negate-accumulator", default=None, help=argparse.SUPPRESS)
    _policy_flags(s)
    return ap


def _policy_from(args) -> PolicyParams:
    try:
        return PolicyParams(ratio=args.ratio, maxresult=args.maxresult, window=args.window,
                            starvation_fraction=args.starvation_fraction,
                            foremen_on_switch=args.foremen_on_switch, hier_ratio=args.hier_ratio)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_size(size: int) -> None:
    try:
        inv.half_size(size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def config_from_args(args, size=None, scheme=None, workers=None, granularity=None) -> RunConfig:
    cfg = RunConfig(
        size=args.size if size is None else size,
        scheme=args.scheme if scheme is None else scheme,
        workers=args.workers if workers is None else workers,
        granularity=args.granularity if granularity is None else granularity,
        foremen=getattr(args, "foremen", None),
        policy=_policy_from(args),
        transport=args.transport,
        algorithm=getattr(args, "algorithm", "optimized"),
        processes=args.transport == "tcp" and not getattr(args, "threads", False),
        launch_workers=getattr(args, "listen", None) is None,
        listen=getattr(args, "listen", None) or "127.0.0.1:0",
        timeout=args.timeout,
        inject_add_delay_ms=args.inject_add_delay_ms,
        inject_compute_delay_ms=args.inject_compute_delay_ms,
        inject_dispatch_delay_ms=args.inject_dispatch_delay_ms,
        force_addworker_at=args.force_addworker_at,
        force_hier_at=args.force_hier_at,
        negate_accumulator=getattr(args, "negate_accumulator", None),
    )
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- subcommands -------------------------------------------------------------


def cmd_worker(args) -> int:
    if not args.connect or args.rank is None:
        raise UsageError("--role worker needs --connect host:port and --rank")
    cfg = config_from_args(args)
    host, port = parse_address(args.connect)
    ep = connect_worker(host, port, args.rank)
    ep.timeout = args.timeout
    stats = worker_main(ep, cfg)
    ep.join_readers(5.0)
    print(json.dumps(stats))
    return EXIT_OK


def cmd_compute(args) -> int:
    _check_size(args.size)
    if args.role == "worker":
        return cmd_worker(args)
    cfg = config_from_args(args)
    result, stats = run(cfg)
    out = Path(args.out) if args.out else default_out_dir()
    meta = write_result(out, result, args.format, stats)
    stats_path = Path(args.stats) if args.stats else out / "stats.csv"
    append_stats(stats_path, StatsRow.from_run(result, stats, cfg), stats.switch_events)
    for ev in stats.switch_events:
        print(f"switch,{ev['source']},{ev['target']},{ev['item_index']}")
    print(f"size={cfg.size} scheme={cfg.scheme} terms={meta['terms']} "
          f"is_zero={meta['is_zero']} wall={stats.wall_seconds:.3f}s sha256={meta['sha256'][:16]}")
    print(f"wrote {out}")
    return EXIT_OK


def first_difference(p: Polynomial, q: Polynomial, size: int) -> str | None:
    """Text rendering of the largest monomial where ``p`` and ``q`` disagree."""
    diff = add(p, -q)
    if diff.is_zero():
        return None
    m, _ = diff.sorted_terms()[0]
    left, right = p.terms.get(m, 0), q.terms.get(m, 0)
    mono = to_text(Polynomial({m: 1}), size).splitlines()[1].split(" * ", 1)[1]
    return f"{mono}: {left} vs {right}"


def cmd_verify(args) -> int:
    _check_size(args.size)
    if args.size > args.max_size:
        raise UsageError(f"size {args.size} exceeds the verification cap {args.max_size}")
    size = args.size
    n3 = inv.half_size(size) ** 3
    failures = 0

    def report(name, ok, witness=None):
        nonlocal failures
        failures += not ok
        line = f"{'PASS' if ok else 'FAIL'} {name}"
        if witness:
            line += f"  first difference: {witness}"
        print(line, flush=True)

    naive = inv.invariant_naive(size).poly
    opt = inv.invariant_optimized(size, args.negate_accumulator).poly
    wit = first_difference(naive, opt, size)
    report(f"naive == optimized (size {size}, {naive.num_terms()} terms)", wit is None, wit)
    reference_hash = content_hash(naive)

    grans = args.granularities or sorted({1, n3})
    for scheme, W, g in itertools.product(args.schemes, args.workers, grans):
        if scheme not in SCHEMES or scheme == "seq":
            raise UsageError(f"unknown parallel scheme {scheme!r}")
        g = min(g, n3)
        cfg = RunConfig(size, scheme, W, g, transport=args.transport, timeout=args.timeout,
                        negate_accumulator=args.negate_accumulator)
        try:
            res, _ = run(cfg.validate())
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        ok = content_hash(res.poly) == reference_hash
        report(f"{scheme} W={W} g={g} == naive", ok,
               None if ok else first_difference(naive, res.poly, size))

    for i in range(args.samples):
        t = inv.NumericTensor.random(size, f"{args.seed}/tensor/{i}")
        K = inv.make_test_symplectic(size, f"{args.seed}/K/{i}")
        before = inv.numeric_evaluate(opt, t)
        after = inv.numeric_evaluate(opt, inv.symplectic_transform(t, K))
        report(f"symplectic invariance sample {i}: {before} == {after}", before == after)

    homog = opt.degrees() <= {4}
    report("every monomial has degree 4", homog)
    print(f"{'OK' if not failures else 'FAILED'}: {failures} failing check(s)")
    return EXIT_OK if not failures else EXIT_VERIFY


def cmd_bench_poly(args) -> int:
    if args.reps < 1 or args.max_exp < 1:
        raise UsageError("--reps and --max-exp must be positive")
    rows = []
    for n, v in itertools.product(args.terms, args.vars):
        if n < 1 or v < 1:
            raise UsageError("term and variable counts must be positive")
        p, q = random_polynomial_pair(n, v, args.max_exp, f"{args.seed}/{n}/{v}")
        timings = {"scale": [], "add": []}
        for _ in range(args.reps):
            t0 = time.perf_counter()
            scale(p, 7)
            timings["scale"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            add(p, q)
            timings["add"].append(time.perf_counter() - t0)
        for op in ("scale", "add"):
            rows.append({"op": op, "terms": n, "vars": v,
                         "seconds": f"{statistics.median(timings[op]):.9f}"})
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=["op", "terms", "vars", "seconds"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_bench_scaling(args) -> int:
    if not args.schemes:
        raise UsageError("--schemes must name at least one scheme")
    if not (args.sizes and args.workers and args.granularities):
        raise UsageError("--sizes, --workers and --granularities must be non-empty")
    for size in args.sizes:
        _check_size(size)
    for scheme in args.schemes:
        if scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {scheme!r}")
    pending = []
    for size in args.sizes:
        n3 = inv.half_size(size) ** 3
        group = []
        seen = set()
        grid = []
        for scheme, W, g in itertools.product(args.schemes, args.workers, args.granularities):
            g = min(g, n3)
            if (scheme, W, g) not in seen:
                seen.add((scheme, W, g))
                grid.append((scheme, W, g))
        for i, (scheme, W, g) in enumerate(grid):
            cfg = config_from_args(args, size=size, scheme=scheme, workers=W, granularity=g)
            if i < len(grid) - 1:
                cfg = replace(cfg, negate_accumulator=None)
            result, stats = run(cfg)
            row = StatsRow.from_run(result, stats, cfg)
            group.append((row, stats.switch_events))
            print(f"{scheme:9s} size={size} W={W} g={g} wall={stats.wall_seconds:.3f}s "
                  f"hash={row.result_hash[:12]}", file=sys.stderr)
        hashes = {row.result_hash for row, _ in group}
        if len(hashes) != 1:
            print(f"FAIL size {size}: {len(hashes)} distinct result hashes", file=sys.stderr)
            return EXIT_VERIFY
        pending.extend(group)
    if args.stats:
        for row, events in pending:
            append_stats(args.stats, row, events)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(StatsRow.header())
        for row, events in pending:
            w.writerow([getattr(row, k) for k in StatsRow.header()])
            for ev in events:
                w.writerow(["switch", ev["source"], ev["target"], ev["item_index"]])
    return EXIT_OK


COMMANDS = {
    "compute": cmd_compute,
    "verify": cmd_verify,
    "bench-poly": cmd_bench_poly,
    "bench-scaling": cmd_bench_scaling,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"spinv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"spinv: transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
