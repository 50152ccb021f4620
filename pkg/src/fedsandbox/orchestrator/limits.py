"""Exec shim: apply resource caps to the current process, then become the tool.

``python -m fedsandbox.orchestrator.limits --memory-mb N --cpus K -- argv...``

Running the caps in a fresh interpreter avoids ``preexec_fn``, which is
unsafe when the orchestrator forks from several threads at once.
"""

from __future__ import annotations

import argparse
import ctypes
import os
import signal
import sys


def apply_limits(memory_mb: int | None, cpus: int | None) -> None:
    if sys.platform.startswith("linux"):
        try:  # die with the orchestrator
            ctypes.CDLL("libc.so.6", use_errno=True).prctl(1, signal.SIGTERM)
        except OSError:
            pass
        if cpus:
            allowed = sorted(os.sched_getaffinity(0))
            os.sched_setaffinity(0, allowed[:cpus])
    if memory_mb:
        import resource

        limit = memory_mb * 1024 * 1024
        soft, hard = resource.getrlimit(resource.RLIMIT_AS)
        if hard != resource.RLIM_INFINITY:
            limit = min(limit, hard)
        resource.setrlimit(resource.RLIMIT_AS, (limit, hard))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="limits")
    parser.add_argument("--memory-mb", type=int)
    parser.add_argument("--cpus", type=int)
    parser.add_argument("command", nargs=argparse.REMAINDER)
    args = parser.parse_args(argv)
    command = args.command[1:] if args.command[:1] == ["--"] else args.command
    if not command:
        parser.error("missing command")
    apply_limits(args.memory_mb, args.cpus)
    try:
        os.execvp(command[0], command)
    except OSError as exc:
        print(f"cannot exec {command[0]}: {exc}", file=sys.stderr)
        return 127


if __name__ == "__main__":
    sys.exit(main())
