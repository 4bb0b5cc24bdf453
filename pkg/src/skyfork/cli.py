"""Command line front end: ``skyfork <command> ...`` (or ``python -m skyfork``)."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import deployer
from .codegen import HOST, MODE_ENV, MODES, SERVERLESS, CodegenError


def cmd_build(args) -> int:
    if args.mode:
        os.environ[MODE_ENV] = args.mode
    from .codegen import generate

    for path in args.path:
        sys.path.insert(0, os.path.abspath(path))
    try:
        result = generate(args.module, args.out)
    except (CodegenError, ImportError) as exc:
        print(f"build: {exc}", file=sys.stderr)
        return 2
    print(f"mode: {result.mode}")
    print(f"manifest: {result.manifest_path}")
    if result.worker_path:
        print(f"worker: {result.worker_path}")
    for entry in result.entries:
        print(f"  {entry.cloud_name}  {entry.original_function_name}  {entry.identifier}")
    return 0


def cmd_deploy(args) -> int:
    summary = deployer.deploy(args.manifest, args.package, args.backend)
    for name, outcome in summary.report:
        print(f"{name}: {outcome}")
    print(f"created={summary.created} updated={summary.updated} unchanged={summary.unchanged} "
          f"failed={len(summary.failed)}")
    return summary.exit_code


def cmd_list(args) -> int:
    for fn in deployer.list_functions(args.backend):
        print(json.dumps(fn, sort_keys=True))
    return 0


def cmd_package(args) -> int:
    out = deployer.package(args.input, args.out)
    print(out)
    return 0


def cmd_invoke(args) -> int:
    result = deployer.invoke_debug(args.backend, args.name, args.payload)
    deployer.print_invocation(result)
    return result.exit_code


def cmd_emulator(args) -> int:
    from .emulator import BillingRates, Emulator, PlatformConfig, parse_delay_option

    delays = {}
    for option in args.exec_delay_ms:
        try:
            name, schedule = parse_delay_option(option, args.seed)
        except ValueError as exc:
            print(f"emulator: {exc}", file=sys.stderr)
            return 2
        delays[name] = schedule
    config = PlatformConfig(
        max_concurrency=args.max_concurrency, cold_init_ms=args.cold_init_ms, exec_delays=delays,
        rates=BillingRates(args.gb_second_rate, args.request_fee), worker_niceness=args.worker_niceness,
    )
    emu = Emulator(config, host=args.host, port=args.port)
    print(f"emulator listening on {emu.url}", flush=True)
    try:
        emu.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_bench(args) -> int:
    from .benchkit import BenchmarkError, PiJob, QueensJob, run_benchmark, write_csv
    from .dispatcher import DispatcherConfig

    try:
        if args.kernel == "pi":
            job = PiJob(args.samples, args.workers, args.seed)
        else:
            job = QueensJob(args.n, args.prefix)
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    dispatcher_config = None
    if args.mode == SERVERLESS:
        if not args.backend:
            print("bench: serverless mode needs --backend", file=sys.stderr)
            return 2
        dispatcher_config = DispatcherConfig(args.backend, pool_size=args.pool_size)
    try:
        result = run_benchmark(job, args.mode, workers=args.local_workers or args.workers,
                               dispatcher_config=dispatcher_config, host_rate_per_hour=args.host_rate)
    except BenchmarkError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 1
    if args.csv and args.csv != "-":
        with open(args.csv, "w", newline="") as fh:
            write_csv(result, fh)
    else:
        write_csv(result, sys.stdout)
    print(f"result: {result.value}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skyfork", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="expand tasks and write the manifest (and worker)")
    p.add_argument("--module", action="append", required=True, help="module defining tasks (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=MODES, help=f"overrides {MODE_ENV} (default {HOST})")
    p.add_argument("--path", action="append", default=[], help="extra import path (repeatable)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("deploy", help="register every manifest entry with a backend")
    p.add_argument("--manifest", required=True)
    p.add_argument("--package", required=True, help="worker executable")
    p.add_argument("--backend", required=True)
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("list", help="list functions registered with a backend")
    p.add_argument("--backend", required=True)
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("package", help="write a deterministic zip of a worker")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("invoke", help="invoke one function synchronously")
    p.add_argument("--backend", required=True)
    p.add_argument("--name", required=True, help="cloud name")
    p.add_argument("--payload", required=True, help="file holding a carrier JSON")
    p.set_defaults(func=cmd_invoke)

    p = sub.add_parser("emulator", help="run the local FaaS emulator")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9000)
    p.add_argument("--max-concurrency", type=int, default=2000)
    p.add_argument("--cold-init-ms", type=float, default=11.0)
    p.add_argument("--gb-second-rate", type=float, default=1.6667e-5)
    p.add_argument("--request-fee", type=float, default=2.0e-7)
    p.add_argument("--exec-delay-ms", action="append", default=[], metavar="NAME=DIST",
                   help="injected delay per function: fixed:MS, uniform:LO:HI, list:A,B,.. (repeatable)")
    p.add_argument("--seed", type=int, default=0, help="seed for uniform delays")
    p.add_argument("--worker-niceness", type=int, default=10, help="scheduling niceness of worker processes")
    p.set_defaults(func=cmd_emulator)

    p = sub.add_parser("bench", help="run a benchmark kernel")
    kernels = p.add_subparsers(dest="kernel", required=True)
    for kernel in ("pi", "nqueens"):
        k = kernels.add_parser(kernel)
        if kernel == "pi":
            k.add_argument("--samples", type=int, default=10_000_000)
            k.add_argument("--workers", type=int, default=16, help="number of tasks")
            k.add_argument("--seed", type=int, default=0)
        else:
            k.add_argument("--n", type=int, default=8)
            k.add_argument("--prefix", type=int, default=2)
            k.add_argument("--workers", type=int, default=4, help="local pool size")
        k.add_argument("--mode", choices=("local", SERVERLESS), default="local")
        k.add_argument("--backend")
        k.add_argument("--pool-size", type=int, default=16, help="dispatcher connections")
        k.add_argument("--local-workers", type=int, help="local pool size (default: --workers)")
        k.add_argument("--host-rate", type=float, default=0.0575, help="host vCPU $/hour")
        k.add_argument("--csv", help="output file (default stdout)")
        k.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except deployer.DeployError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
