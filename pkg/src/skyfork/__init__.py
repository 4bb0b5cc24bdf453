"""Fork-join offloading of Python tasks to a FaaS backend."""

from .codegen import RemoteError, Task, task
from .config import FunctionConfig
from .dispatcher import Dispatcher, DispatcherConfig, InvocationRecord, ResultSlot, Status, UsageError
from .wireformat import (
    F32, F64, I8, I16, I32, I64, U8, U16, U32, U64, Bool, Bytes, Opt, Record, Seq, Str,
)

__version__ = "0.1.0"

__all__ = [
    "RemoteError", "Task", "task", "FunctionConfig",
    "Dispatcher", "DispatcherConfig", "InvocationRecord", "ResultSlot", "Status", "UsageError",
    "F32", "F64", "I8", "I16", "I32", "I64", "U8", "U16", "U32", "U64",
    "Bool", "Bytes", "Opt", "Record", "Seq", "Str",
]
