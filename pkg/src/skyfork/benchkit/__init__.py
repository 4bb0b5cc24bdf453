from .kernels import (
    combine_estimates, count_solutions, count_solutions_from_prefix, enumerate_prefixes,
    pi_estimate, split_samples,
)
from .runner import (
    HOST_VCPU_RATE_PER_HOUR, BenchmarkError, BenchResult, PiJob, QueensJob, TaskRow, TileJob,
    run_benchmark, write_csv,
)

__all__ = [
    "combine_estimates", "count_solutions", "count_solutions_from_prefix", "enumerate_prefixes",
    "pi_estimate", "split_samples",
    "HOST_VCPU_RATE_PER_HOUR", "BenchmarkError", "BenchResult", "PiJob", "QueensJob", "TaskRow", "TileJob",
    "run_benchmark", "write_csv",
]
