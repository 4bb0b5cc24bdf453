"""GB-second plus per-request billing."""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class BillingRates:
    gb_second_rate: float = 1.6667e-5  # $ per GB-second
    request_fee: float = 2.0e-7  # $ per invocation

    def __post_init__(self):
        if self.gb_second_rate < 0 or self.request_fee < 0:
            raise ValueError("billing rates must be non-negative")


DEFAULT_RATES = BillingRates()


def compute_charge(memory_mb: float, billed_ms: float, rates: BillingRates = DEFAULT_RATES) -> float:
    """Memory-time part of the bill, without the request fee."""
    if memory_mb < 0 or billed_ms < 0:
        raise ValueError("memory and billed time must be non-negative")
    return (memory_mb / 1024) * (billed_ms / 1000) * rates.gb_second_rate


def compute_cost(memory_mb: float, billed_ms: float, rates: BillingRates = DEFAULT_RATES) -> float:
    """Cost of one invocation in dollars: GB-seconds times rate, plus the flat fee."""
    return compute_charge(memory_mb, billed_ms, rates) + rates.request_fee


def round_up(ms: float, granularity_ms: float) -> float:
    """Billed time: round up to the billing granularity (0 disables rounding)."""
    if granularity_ms <= 0:
        return ms
    return math.ceil(ms / granularity_ms - 1e-9) * granularity_ms


@dataclass(frozen=True)
class BillingSample:
    cloud_name: str
    request_id: str
    duration_ms: float
    init_ms: float
    billed_ms: float
    memory: int
    cold: bool
    compute_cost: float
    request_fee: float
    cost: float

    @classmethod
    def charge(cls, cloud_name, request_id, duration_ms, init_ms, memory, cold,
               rates: BillingRates = DEFAULT_RATES) -> BillingSample:
        billed_ms = duration_ms + init_ms if cold else duration_ms
        compute = compute_charge(memory, billed_ms, rates)
        return cls(
            cloud_name=cloud_name, request_id=request_id, duration_ms=duration_ms,
            init_ms=init_ms if cold else 0.0, billed_ms=billed_ms, memory=memory, cold=cold,
            compute_cost=compute, request_fee=rates.request_fee, cost=compute + rates.request_fee,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> BillingSample:
        return cls(**data)


@dataclass(frozen=True)
class BillingTotals:
    invocations: int = 0
    cold_invocations: int = 0
    compute_cost: float = 0.0
    request_fees: float = 0.0
    total_cost: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(samples) -> BillingTotals:
    samples = list(samples)
    # fsum keeps n identical samples at exactly n times one sample
    return BillingTotals(
        invocations=len(samples),
        cold_invocations=sum(1 for s in samples if s.cold),
        compute_cost=math.fsum(s.compute_cost for s in samples),
        request_fees=math.fsum(s.request_fee for s in samples),
        total_cost=math.fsum(s.cost for s in samples),
    )


class BillingLedger:
    """Append-only, completion-ordered list of samples."""

    def __init__(self):
        self._lock = threading.Lock()
        self._samples: list[BillingSample] = []

    def append(self, sample: BillingSample) -> None:
        with self._lock:
            self._samples.append(sample)

    def samples(self) -> list[BillingSample]:
        with self._lock:
            return list(self._samples)

    def totals(self) -> tuple[BillingTotals, dict[str, BillingTotals]]:
        samples = self.samples()
        by_function: dict[str, list[BillingSample]] = {}
        for s in samples:
            by_function.setdefault(s.cloud_name, []).append(s)
        return summarize(samples), {k: summarize(v) for k, v in by_function.items()}
