"""Independent reference implementations the tests check against.

Everything here is deliberately written from the contract, not from the
package internals: different formulations, no shared helpers.
"""

from itertools import permutations


def brute_force_stability_windows(grams, delta=1.0, min_samples=20):
    """Quadratic scan: a window qualifies when no consecutive step inside
    exceeds delta and it spans at least min_samples; keep the maximal ones
    (not extendable on either side)."""
    n = len(grams)
    bad_before = [0] * (n + 1)  # bad steps among the first k samples
    for k in range(1, n):
        bad_before[k + 1] = bad_before[k] + (abs(grams[k] - grams[k - 1]) > delta)

    def window_ok(i, j):
        return 0 <= i <= j < n and j - i + 1 >= 1 and \
            bad_before[j + 1] - bad_before[i + 1] == 0

    windows = []
    for i in range(n):
        for j in range(i + min_samples - 1, n):
            if not window_ok(i, j):
                break
            left_ext = i > 0 and window_ok(i - 1, j)
            right_ext = j + 1 < n and window_ok(i, j + 1)
            if not left_ext and not right_ext:
                windows.append((i, j))
    return windows


def plateau_segments(samples, min_samples=20):
    """Maximal runs of exactly-constant weight (noise-free traces only),
    at least min_samples long: [(level, start_ms, end_ms)]."""
    runs = []
    start = 0
    for k in range(1, len(samples) + 1):
        if k == len(samples) or samples[k][1] != samples[start][1]:
            if k - start >= min_samples:
                runs.append((samples[start][1], samples[start][0], samples[k - 1][0]))
            start = k
    return runs


def exhaustive_visit_oracle(samples, entrance_grams=20.0, tolerance=2.0):
    """Segment a noise-free trace by plateau shifts, then pick the best
    exit-to-entrance assignment by exhaustive search (FIFO tie-break).

    Returns visits as (weight, entry_ms, exit_ms) sorted by entry.
    """
    plateaus = plateau_segments(samples)
    events = []  # (kind, transition_ms, shift)
    for a, b in zip(plateaus, plateaus[1:]):
        shift = b[0] - a[0]
        if shift > entrance_grams:
            events.append(("entry", a[2], shift))
        elif shift < -entrance_grams:
            events.append(("exit", a[2], shift))
        else:
            raise AssertionError(f"trace has an undetectable shift {shift}")
    entries = [(ts, shift) for kind, ts, shift in events if kind == "entry"]
    exits = [(ts, shift) for kind, ts, shift in events if kind == "exit"]
    assert len(entries) == len(exits)
    if not entries:
        return []

    best = None
    for perm in permutations(range(len(entries))):
        # perm maps exit index -> entrance index
        agreement = 0
        ok_order = True
        for x_i, e_i in enumerate(perm):
            if entries[e_i][0] >= exits[x_i][0]:
                ok_order = False
                break
            if abs(entries[e_i][1] + exits[x_i][1]) <= tolerance:
                agreement += 1
        if not ok_order:
            continue
        key = (-agreement, perm)  # max agreement, then FIFO-lexicographic
        if best is None or key < best[0]:
            best = (key, perm)
    assert best is not None, "no time-consistent pairing exists"
    visits = []
    for x_i, e_i in enumerate(best[1]):
        visits.append((entries[e_i][1], entries[e_i][0], exits[x_i][0]))
    visits.sort(key=lambda v: v[1])
    return visits


def bit_string(value: int, width: int) -> str:
    assert 0 <= value < (1 << width)
    return format(value, f"0{width}b")


def pack_bits(*fields) -> bytes:
    """(value, width) pairs to bytes, MSB first, zero padded."""
    s = "".join(bit_string(v, w) for v, w in fields)
    s += "0" * (-len(s) % 8)
    return bytes(int(s[i:i + 8], 2) for i in range(0, len(s), 8))


def fold_ledger(ops):
    """Naive trap-target fold: ops as (kind, tag) in application order."""
    present = set()
    for kind, tag in ops:
        if kind == "add":
            present.add(tag)
        else:
            present.discard(tag)
    return present
