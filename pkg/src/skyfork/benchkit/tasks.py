"""Offloadable tasks of the benchmark kit.

Import this module (in either build mode) to define them; a serverless build
of ``skyfork.benchkit.tasks`` yields a worker serving all four.
"""

from __future__ import annotations

from ..codegen import task
from ..config import FunctionConfig
from ..wireformat import F64, I64, U8, U32, U64, Seq
from .kernels import count_solutions_from_prefix, pi_estimate

BENCH_CONFIG = FunctionConfig(memory=1024, timeout=60)


@task(config=BENCH_CONFIG)
def pi_task(samples: I64, seed: I64) -> F64:
    return pi_estimate(samples, seed)


@task(config=BENCH_CONFIG)
def queens_task(board_n: U8, prefix: Seq(U64)) -> U64:
    return count_solutions_from_prefix(board_n, prefix)


@task(config=FunctionConfig(memory=512, timeout=30))
def tile_task(index: U32) -> U32:
    # stand-in for an image tile; its cost comes from emulator delay injection
    return index


@task(config=FunctionConfig(memory=128, timeout=5))
def noop() -> U8:
    return 0
