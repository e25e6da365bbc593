"""Persistent queue: durability across crashes, FIFO, retransmission
backoff, bounded-retry parking."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedstation.simharness import run_link_trial
from feedstation.uplinkqueue import LinkModel, QueueMetrics, UplinkQueue


def payload(i):
    return bytes([i % 256]) * 8


def test_enqueue_survives_crash(tmp_path):
    path = str(tmp_path / "queue.log")
    q = UplinkQueue(path)
    seq = q.enqueue(b"hello")
    q.close()  # crash: no confirm written
    q2 = UplinkQueue(path)
    assert q2.pending_seqs() == [seq]
    assert q2._entries[seq].payload == b"hello"


def test_fifo_drain_order(tmp_path):
    q = UplinkQueue(str(tmp_path / "queue.log"))
    seqs = [q.enqueue(payload(i)) for i in range(1000)]
    sent = []
    now = 0
    while q.depth:
        for tx in q.pump(now):
            sent.append(tx.seq)
            q.confirm(tx.seq)
        now += 10
    assert sent == seqs


def test_oversize_payload_rejected():
    q = UplinkQueue()
    with pytest.raises(ValueError, match="51"):
        q.enqueue(bytes(52))


def test_confirm_semantics():
    q = UplinkQueue()
    seq = q.enqueue(b"x")
    q.pump(0)
    q.confirm(seq)
    assert q.depth == 0
    q.confirm(seq)  # duplicate: metric only
    q.confirm(4242)  # never sent
    assert q.metrics.unknown_confirms == 2
    assert q.metrics.confirmed == 1


def test_retransmit_backoff_schedule():
    q = UplinkQueue(timeout_ms=5000, backoff_cap_ms=80_000)
    q.enqueue(b"x")
    times = []
    now = 0
    for _ in range(7):
        while True:
            txs = q.pump(now)
            if txs:
                times.append(now)
                break
            now = q.next_wakeup(now)
    gaps = [b - a for a, b in zip(times, times[1:])]
    assert gaps == [5000, 10_000, 20_000, 40_000, 80_000, 80_000]


def test_duty_cycle_gap_respected():
    q = UplinkQueue(duty_cycle_gap_ms=2000)
    q.enqueue(b"a")
    q.enqueue(b"b")
    first = q.pump(0)
    assert len(first) == 1
    q.confirm(first[0].seq)
    assert q.pump(500) == []  # gap not yet elapsed
    assert q.next_wakeup(500) == 2000
    second = q.pump(2000)
    assert len(second) == 1


def test_bounded_retries_park_with_flag():
    q = UplinkQueue(max_attempts=2, timeout_ms=100)
    q.enqueue(b"x")
    now = 0
    for _ in range(4):
        q.pump(now)
        now = (q.next_wakeup(now) or now + 100)
    assert q.depth == 0
    assert q.metrics.parked == 1
    assert q.error_flag is True


def test_crash_consistency_random_ops(tmp_path):
    rng = random.Random(8)
    for trial in range(25):
        path = str(tmp_path / f"q{trial}.log")
        q = UplinkQueue(path)
        live = {}
        for _ in range(rng.randrange(1, 40)):
            if live and rng.random() < 0.4:
                seq = rng.choice(list(live))
                q.confirm(seq)
                del live[seq]
            else:
                data = rng.randbytes(rng.randrange(1, 30))
                live[q.enqueue(data)] = data
        q.close()  # crash point
        q2 = UplinkQueue(path)
        assert {s: e.payload for s, e in q2._entries.items()} == live
        q2.close()


def test_torn_tail_record_dropped(tmp_path):
    path = str(tmp_path / "queue.log")
    q = UplinkQueue(path)
    q.enqueue(b"keep")
    q.close()
    with open(path, "ab") as f:
        f.write(b"\x01\x05\x00\x03\x00ab")  # truncated record
    q2 = UplinkQueue(path)
    assert len(q2.pending_seqs()) == 1
    assert q2.metrics.dropped_records == 1


def test_unbounded_retries_deliver_everything():
    link = LinkModel(drop_probability=0.3, confirm_drop_probability=0.0,
                     latency_ms=50, duty_cycle_gap_ms=0)
    delivered, attempts = run_link_trial(1995, link, max_attempts=None, seed=21)
    assert delivered == 1.0
    assert attempts == pytest.approx(1 / 0.7, rel=0.05)


def test_bounded_retries_match_geometric_tail():
    link = LinkModel(drop_probability=0.3, confirm_drop_probability=0.0,
                     latency_ms=50, duty_cycle_gap_ms=0)
    delivered, _ = run_link_trial(100_000, link, max_attempts=2, seed=22)
    assert delivered == pytest.approx(1 - 0.3 ** 2, abs=0.01)


def test_confirm_drops_do_not_lose_data():
    link = LinkModel(drop_probability=0.2, latency_ms=50, duty_cycle_gap_ms=0)
    delivered, attempts = run_link_trial(2000, link, max_attempts=None, seed=23)
    assert delivered == 1.0
    # Success needs uplink AND confirm: mean attempts 1/(0.8 * 0.8).
    assert attempts == pytest.approx(1 / 0.64, rel=0.07)
