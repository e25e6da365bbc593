"""Hot-kernel dispatch: compiled extension when available, pure Python otherwise.

Set FEEDSTATION_PURE_PY=1 to force the fallback (used by the benchmark and
the twin-equivalence tests).
"""

import os

import numpy as np

from feedstation import _core_py

if os.environ.get("FEEDSTATION_PURE_PY"):
    _impl = _core_py
else:
    try:
        from feedstation import _core_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _core_py

BACKEND: str = _impl.BACKEND


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from feedstation import _core_cy  # noqa: F401
        out.append("cython")
    except ImportError:
        pass
    return out


def use_backend(name: str) -> None:
    """Switch kernels at runtime ("python" or "cython"); used by the
    benchmark and the twin-equivalence tests."""
    global _impl, BACKEND
    if name == "python":
        _impl = _core_py
    elif name == "cython":
        from feedstation import _core_cy
        _impl = _core_cy
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = _impl.BACKEND


def crc16_kermit(data: bytes) -> int:
    """CRC-16 poly 0x1021 reflected, init 0x0000 (aka KERMIT)."""
    return _impl.crc16_kermit(data)


def stable_runs(grams, max_step: float, min_len: int) -> list[tuple[int, int]]:
    """Maximal stable runs (inclusive index pairs) in a weight signal."""
    arr = np.asarray(grams, dtype=np.float64)
    return _impl.stable_runs(arr, float(max_step), int(min_len))
