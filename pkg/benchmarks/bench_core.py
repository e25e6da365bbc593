#!/usr/bin/env python3
"""Compare the compiled kernels with their pure-Python twins.

Same as ``feedstation bench``; kept as a standalone script so the numbers
are easy to regenerate after toolchain changes.
"""

from feedstation import bench

if __name__ == "__main__":
    bench.main()
