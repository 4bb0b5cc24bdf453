"""Tasks used by the test suite; built into the test worker next to the bench kit."""

from skyfork import F64, I64, U32, Opt, Record, Seq, Str, task
from skyfork.config import FunctionConfig

Point = Record([("x", F64), ("y", F64), ("label", Opt(Str))])


@task
def echo(x: I64) -> I64:
    return x


@task(config=FunctionConfig(memory=256, timeout=5))
def explode(message: Str) -> Str:
    raise ValueError(message)


@task
def centroid(points: Seq(Point)) -> Point:
    n = len(points)
    return {
        "x": sum(p["x"] for p in points) / n,
        "y": sum(p["y"] for p in points) / n,
        "label": None,
    }


@task
def slow(index: U32) -> U32:
    return index


@task
def medium(index: U32) -> U32:
    return index


@task
def fast(index: U32) -> U32:
    return index


@task(config=FunctionConfig(memory=128, timeout=1))
def nap(ms: U32) -> U32:
    import time

    time.sleep(ms / 1000)
    return ms
