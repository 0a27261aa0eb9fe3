"""Result files, JSON metadata and the append-only stats CSV."""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path

from .invariant import InvariantResult
from .polyarith import content_hash, deserialize, from_text, serialize, to_text

TEXT_NAME = "invariant.txt"
BINARY_NAME = "invariant.bin"
META_NAME = "metadata.json"


@dataclass
class StatsRow:
    scheme: str
    size: int
    workers: int
    granularity: int
    ratio: float
    maxresult: int
    wall_seconds: float
    master_t_add: float
    master_t_wait: float
    items_issued: int
    switch_item_index: int
    result_terms: int
    result_is_zero: bool
    result_hash: str = ""

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_run(cls, result: InvariantResult, stats, cfg) -> "StatsRow":
        return cls(
            scheme=cfg.scheme, size=cfg.size, workers=stats.workers,
            granularity=cfg.granularity, ratio=cfg.policy.ratio,
            maxresult=cfg.policy.maxresult, wall_seconds=round(stats.wall_seconds, 6),
            master_t_add=round(stats.master.get("t_add", 0.0), 6),
            master_t_wait=round(stats.master.get("t_wait", 0.0), 6),
            items_issued=stats.items_issued, switch_item_index=stats.switch_item_index,
            result_terms=result.poly.num_terms(), result_is_zero=result.poly.is_zero(),
            result_hash=content_hash(result.poly))


def default_out_dir() -> Path:
    env = os.environ.get("TENSOR_OUT")
    if env:
        return Path(env)
    return Path("out") / time.strftime("%Y%m%d-%H%M%S")


def append_stats(path, row: StatsRow, switch_events=()) -> None:
    """Append one row (header first if the file is new) plus ``switch,...`` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(StatsRow.header())
        w.writerow([getattr(row, name) for name in StatsRow.header()])
        for ev in switch_events:
            w.writerow(["switch", ev["source"], ev["target"], ev["item_index"]])


def read_stats(path) -> tuple[list[dict], list[dict]]:
    """Parse a stats CSV into ``(rows, switch_events)``."""
    rows, switches = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for rec in reader:
            if rec and rec[0] == "switch":
                switches.append({"source": rec[1], "target": rec[2], "item_index": int(rec[3])})
            elif rec:
                rows.append(dict(zip(header, rec)))
    return rows, switches


def write_result(out_dir, result: InvariantResult, fmt: str = "both", stats=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = result.metadata()
    meta["sha256"] = content_hash(result.poly)
    files = []
    if fmt in ("binary", "both"):
        (out / BINARY_NAME).write_bytes(serialize(result.poly))
        files.append(BINARY_NAME)
    if fmt in ("text", "both"):
        (out / TEXT_NAME).write_text(to_text(result.poly, result.size))
        files.append(TEXT_NAME)
    meta["files"] = files
    if stats is not None:
        meta["run"] = stats.as_dict()
    (out / META_NAME).write_text(json.dumps(meta, indent=2, default=str))
    return meta


def reverify(out_dir) -> bool:
    """Re-read the written polynomial files and compare against the recorded hash."""
    out = Path(out_dir)
    meta = json.loads((out / META_NAME).read_text())
    ok = True
    if (out / BINARY_NAME).exists():
        ok &= content_hash(deserialize((out / BINARY_NAME).read_bytes())) == meta["sha256"]
    if (out / TEXT_NAME).exists():
        poly, size = from_text((out / TEXT_NAME).read_text())
        ok &= size == meta["size"] and content_hash(poly) == meta["sha256"]
    return ok
