from .billing import (
    DEFAULT_RATES, BillingLedger, BillingRates, BillingSample, BillingTotals,
    compute_charge, compute_cost, summarize,
)
from .platform import DelaySchedule, EmulatorError, Platform, PlatformConfig, parse_delay_option
from .server import Emulator

__all__ = [
    "DEFAULT_RATES", "BillingLedger", "BillingRates", "BillingSample", "BillingTotals",
    "compute_charge", "compute_cost", "summarize",
    "DelaySchedule", "EmulatorError", "Platform", "PlatformConfig", "parse_delay_option",
    "Emulator",
]
