"""Benchmark: compiled kernels against the pure-Python twins, plus the
weighing engine end-to-end on each backend."""

from __future__ import annotations

import random
import time

import numpy as np

from feedstation import core


def _time(fn, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _synthetic_signal(n: int, seed: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    levels = np.repeat(rng.uniform(0, 100, size=max(n // 400, 1)), 400)[:n]
    return levels + rng.normal(0, 0.3, size=n)


def _engine_trace(n: int, seed: int = 4) -> list[tuple[int, float]]:
    from feedstation.simharness import AnimalScript, Scenario, VisitPlan, generate_trace
    visits = tuple(VisitPlan(4.0 + i * 30.0, 20.0) for i in range(max(n // 600, 1)))
    duration = visits[-1].entry_s + visits[-1].duration_s + 8.0
    scen = Scenario(seed=seed, duration_s=duration,
                    animals=(AnimalScript(None, 42.0, visits),))
    return generate_trace(scen, random.Random(seed)).samples[:n]


def run(sizes: tuple[int, int, int] = (1_000_000, 1_000_000, 100_000)) -> list[dict]:
    crc_n, runs_n, engine_n = sizes
    payload = random.Random(1).randbytes(crc_n)
    signal = _synthetic_signal(runs_n)
    trace = _engine_trace(engine_n)
    rows = []
    for backend in core.available_backends():
        core.use_backend(backend)
        row = {"backend": backend}
        row["crc16_s"] = _time(lambda: core.crc16_kermit(payload))
        row["stable_runs_s"] = _time(lambda: core.stable_runs(signal, 1.0, 20))

        def engine_pass():
            from feedstation.weighing import WeighingEngine
            engine = WeighingEngine()
            for t, g in trace:
                engine.ingest(t, g)

        row["engine_s"] = _time(engine_pass, repeats=1)
        rows.append(row)
    core.use_backend(core.available_backends()[-1])
    return rows


def format_table(rows: list[dict]) -> str:
    header = f"{'backend':<8} {'crc16 1MB':>12} {'stable_runs 1M':>16} {'engine 100k':>13}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(f"{row['backend']:<8} {row['crc16_s'] * 1e3:>10.1f}ms "
                     f"{row['stable_runs_s'] * 1e3:>14.1f}ms "
                     f"{row['engine_s'] * 1e3:>11.0f}ms")
    if len(rows) == 2:
        py, cy = rows[0], rows[1]
        lines.append(f"{'speedup':<8} {py['crc16_s'] / cy['crc16_s']:>11.1f}x "
                     f"{py['stable_runs_s'] / cy['stable_runs_s']:>15.1f}x "
                     f"{py['engine_s'] / cy['engine_s']:>12.2f}x")
    return "\n".join(lines)


def main() -> None:
    rows = run()
    print(format_table(rows))


if __name__ == "__main__":
    main()
