import csv
import io
import json
import math
import urllib.request

import pytest

from oracles import queens_count, queens_prefixes
from skyfork.benchkit import (
    BenchmarkError, PiJob, QueensJob, combine_estimates, count_solutions, count_solutions_from_prefix,
    enumerate_prefixes, pi_estimate, run_benchmark, split_samples, write_csv,
)
from skyfork.benchkit.runner import CSV_HEADER, HOST_VCPU_RATE_PER_HOUR, host_cost
from skyfork.dispatcher import DispatcherConfig

# oracle totals, computed once up front by the independent backtracker
ORACLE = {n: queens_count(n) for n in range(1, 11)}


def columns(prefix):
    return tuple(bit.bit_length() - 1 for bit in prefix)


def test_oracle_sanity():
    assert ORACLE[8] == 92 and ORACLE[6] == 4 and ORACLE[1] == 1 and ORACLE[2] == ORACLE[3] == 0


@pytest.mark.parametrize("n,p", [(n, p) for n in range(1, 11) for p in (0, 1, 2) if p <= n])
def test_prefixes_partition_search_space(n, p):
    prefixes = enumerate_prefixes(n, p)
    assert sorted(columns(x) for x in prefixes) == sorted(queens_prefixes(n, p))
    assert len(set(prefixes)) == len(prefixes)
    counts = [count_solutions_from_prefix(n, x) for x in prefixes]
    assert sum(counts) == ORACLE[n]
    for x, c in zip(prefixes, counts):
        assert c == queens_count(n, columns(x))


@pytest.mark.parametrize("n", [11, 12])
def test_partition_large_boards(n):
    total = queens_count(n) if n == 11 else 14200
    for p in (1, 2):
        assert sum(count_solutions_from_prefix(n, x) for x in enumerate_prefixes(n, p)) == total


def test_prefix_examples():
    assert len(enumerate_prefixes(6, 2)) == 20
    assert enumerate_prefixes(5, 0) == [()]
    assert len(enumerate_prefixes(4, 1)) == 4
    full = enumerate_prefixes(6, 6)
    assert len(full) == 4 and all(count_solutions_from_prefix(6, x) == 1 for x in full)


def test_prefix_validation():
    with pytest.raises(ValueError):
        enumerate_prefixes(4, 5)
    with pytest.raises(ValueError):
        count_solutions_from_prefix(4, (1, 1))  # same column
    with pytest.raises(ValueError):
        count_solutions_from_prefix(4, (1, 2))  # diagonal
    with pytest.raises(ValueError):
        count_solutions_from_prefix(4, (3,))  # two queens in one row
    with pytest.raises(ValueError):
        count_solutions_from_prefix(4, (16,))  # off the board
    assert count_solutions(8) == 92


def test_pi_estimate():
    seed = next(s for s in range(100) if pi_estimate(1, s) == 4.0)
    assert pi_estimate(1, seed) == 4.0
    assert {pi_estimate(1, s) for s in range(50)} == {0.0, 4.0}
    assert pi_estimate(1000, 7) == pi_estimate(1000, 7)
    assert abs(pi_estimate(200_000, 3) - math.pi) < 0.02
    with pytest.raises(ValueError):
        pi_estimate(0, 1)


def test_split_and_combine():
    assert split_samples(10, 4) == [3, 3, 2, 2]
    assert sum(split_samples(10 ** 7, 512)) == 10 ** 7
    assert combine_estimates([4.0, 0.0], [3, 1]) == 3.0


def test_pi_job_rules():
    with pytest.raises(ValueError):
        PiJob(10, 3)
    with pytest.raises(ValueError):
        PiJob(10, 0)
    job = PiJob(1000, 4, seed=10)
    assert [b.values for b in job.tasks()] == [{"samples": 250, "seed": 10 + i} for i in range(4)]


def test_local_run_and_csv():
    result = run_benchmark(QueensJob(8, 2), "local", workers=2)
    assert result.value == 92
    buf = io.StringIO()
    write_csv(result, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + len(result.rows) + 5
    assert [r[0] for r in rows[-5:]] == ["wall_ms", "host_dispatch_ms", "total_cost_usd",
                                         "compute_cost_usd", "request_fees_usd"]


def test_host_cost():
    assert host_cost(3_600_000) == HOST_VCPU_RATE_PER_HOUR
    assert host_cost(3_600_000, 4) == 4 * HOST_VCPU_RATE_PER_HOUR


def test_local_and_serverless_agree(make_emulator):
    emu = make_emulator()
    job = PiJob(160_000, 16, seed=5)
    local = run_benchmark(job, "local", workers=2)
    remote = run_benchmark(job, "serverless", dispatcher_config=DispatcherConfig(emu.url, pool_size=4))
    assert remote.results == local.results
    assert remote.value == local.value


def test_serverless_queens_and_cost_attribution(make_emulator):
    emu = make_emulator()
    result = run_benchmark(QueensJob(8, 2), "serverless", dispatcher_config=DispatcherConfig(emu.url, pool_size=4))
    assert result.value == 92
    with urllib.request.urlopen(emu.url + "/billing/totals") as resp:
        totals = json.loads(resp.read())["total"]
    assert result.compute_cost_usd == totals["compute_cost"]
    assert result.request_fees_usd == totals["request_fees"]
    assert math.fsum(r.cost_usd for r in result.rows) == pytest.approx(totals["total_cost"], rel=1e-12)
    assert result.total_cost_usd == pytest.approx(
        totals["total_cost"] + host_cost(result.host_dispatch_ms), rel=1e-12)
    assert sum(1 for r in result.rows if r.cold) >= 1
    assert sorted(r.task_id for r in result.rows) == list(range(len(QueensJob(8, 2).prefixes)))


def test_serverless_failure_names_task(make_emulator):
    emu = make_emulator(deploy=False)
    with pytest.raises(BenchmarkError) as info:
        run_benchmark(QueensJob(5, 1), "serverless", dispatcher_config=DispatcherConfig(emu.url, pool_size=2))
    assert info.value.task_index is not None


def test_bench_cli(make_emulator, tmp_path):
    from skyfork.cli import main

    emu = make_emulator()
    out = tmp_path / "q.csv"
    assert main(["bench", "nqueens", "--n", "6", "--prefix", "1", "--mode", "serverless",
                 "--backend", emu.url, "--pool-size", "2", "--csv", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == list(CSV_HEADER) and len(rows) == 1 + 6 + 5
    assert main(["bench", "pi", "--samples", "1000", "--workers", "3"]) == 2
    assert main(["bench", "pi", "--samples", "4000", "--workers", "2", "--csv", str(tmp_path / "p.csv")]) == 0
    assert main(["bench", "pi", "--mode", "serverless"]) == 2


def test_wall_time_falls_as_workers_grow(make_emulator):
    from skyfork.benchkit import TileJob
    from skyfork.benchkit.tasks import tile_task
    from skyfork.emulator import DelaySchedule, PlatformConfig

    emu = make_emulator(PlatformConfig(exec_delays={tile_task.cloud_name: DelaySchedule.fixed(150)}))
    job = TileJob(16)
    run_benchmark(job, "serverless", dispatcher_config=DispatcherConfig(emu.url, pool_size=8))  # warm 8 instances
    walls = []
    for workers in (1, 2, 4, 8):
        result = run_benchmark(job, "serverless", dispatcher_config=DispatcherConfig(emu.url, pool_size=workers))
        assert result.value == 16
        walls.append(result.wall_ms)
    assert walls == sorted(walls, reverse=True), walls
    assert walls[0] >= 16 * 150


def test_tile_job_rules():
    from skyfork.benchkit import TileJob

    with pytest.raises(ValueError):
        TileJob(0)
    with pytest.raises(BenchmarkError):
        TileJob(3).combine([0, 2, 1])
