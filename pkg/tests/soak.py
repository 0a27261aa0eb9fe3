"""Sequence-numbered soak over a transport backend; shared by the unit and acceptance suites."""

import struct
import threading

from spinv.transport import Tag, spawn

SEQ = struct.Struct("<II")


def run_soak(backend, total, workers=4, timeout=120.0):
    """Every worker sends to the master and to its right neighbour; returns (received, violations)."""
    eps = spawn(backend, workers, timeout=timeout)
    per_sender = total // (2 * workers)
    errors = []

    def worker(ep):
        try:
            right = ep.rank % workers + 1
            for i in range(per_sender):
                ep.send(0, Tag.RESULT, SEQ.pack(ep.rank, i))
                if right != ep.rank:
                    ep.send(right, Tag.WORK, SEQ.pack(ep.rank, i))
            left = (ep.rank - 2) % workers + 1
            if left != ep.rank:
                for i in range(per_sender):
                    msg = ep.recv_from(left)
                    if SEQ.unpack(msg.payload) != (left, i) or msg.tag != Tag.WORK:
                        errors.append(("peer", ep.rank, i, msg))
                        return
            ep.send(0, Tag.END)
        except Exception as exc:  # surfaced through the violation list
            errors.append(("raised", ep.rank, exc))

    threads = [threading.Thread(target=worker, args=(ep,)) for ep in eps[1:]]
    for t in threads:
        t.start()
    master = eps[0]
    expected = {r: 0 for r in range(1, workers + 1)}
    ended = 0
    received = 0
    while ended < workers:
        msg = master.recv_any()
        if msg.tag == Tag.END:
            ended += 1
            continue
        src, seq = SEQ.unpack(msg.payload)
        if src != msg.source or seq != expected[src]:
            errors.append(("master", src, seq, expected[src]))
        expected[src] = seq + 1
        received += 1
    for t in threads:
        t.join()
    peer_msgs = per_sender * workers if workers > 1 else 0
    lost = sum(per_sender - n for n in expected.values())
    for ep in eps:
        ep.close()
    return received + peer_msgs, errors + ([("lost", lost)] if lost else [])
