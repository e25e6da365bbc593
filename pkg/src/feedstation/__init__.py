"""Smart feeding station stack: weighing engine, FDX-B identification,
selective trapping, bit-packed telemetry over a lossy link, ingestion
server and a Monte Carlo simulation harness."""

__version__ = "0.1.0"

from feedstation.core import BACKEND as KERNEL_BACKEND  # noqa: F401
