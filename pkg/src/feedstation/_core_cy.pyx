# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled core kernels. Mirror of _core_py; keep semantics identical."""

BACKEND = "cython"

cdef unsigned short _CRC_TABLE[256]

cdef void _init_table() noexcept:
    cdef unsigned int b, c, k
    for b in range(256):
        c = b
        for k in range(8):
            if c & 1:
                c = (c >> 1) ^ 0x8408
            else:
                c = c >> 1
        _CRC_TABLE[b] = <unsigned short> c

_init_table()


def crc16_kermit(const unsigned char[:] data) -> int:
    cdef unsigned short crc = 0
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ data[i]) & 0xFF]
    return crc


def stable_runs(const double[:] grams, double max_step, Py_ssize_t min_len):
    cdef Py_ssize_t n = grams.shape[0]
    runs = []
    if n == 0:
        return runs
    cdef Py_ssize_t start = 0, i
    cdef double prev = grams[0], cur, diff
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
