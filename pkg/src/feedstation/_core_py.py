"""Pure-Python twin of the compiled core kernels.

Semantics here are the reference; the Cython build must match bit-for-bit
(same arithmetic on the same types). Keep both files in sync.
"""

BACKEND = "python"

# CRC-16, polynomial 0x1021 reflected (0x8408), init 0x0000, no final xor.
# Used by the tag-frame codec and the queue log records.
_CRC_TABLE = []
for _b in range(256):
    _c = _b
    for _ in range(8):
        _c = (_c >> 1) ^ 0x8408 if _c & 1 else _c >> 1
    _CRC_TABLE.append(_c)


def crc16_kermit(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


def stable_runs(grams, max_step: float, min_len: int):
    """Maximal runs of samples whose consecutive differences stay within
    ``max_step`` grams, kept only when at least ``min_len`` samples long.

    Returns inclusive ``(start, end)`` index pairs, ordered, disjoint.
    """
    n = len(grams)
    runs = []
    if n == 0:
        return runs
    start = 0
    prev = grams[0]
    for i in range(1, n):
        cur = grams[i]
        diff = cur - prev
        if diff > max_step or diff < -max_step:
            if i - start >= min_len:
                runs.append((start, i - 1))
            start = i
        prev = cur
    if n - start >= min_len:
        runs.append((start, n - 1))
    return runs
