"""Starting and stopping submitted tools.

Two adapters: :class:`SubprocessLauncher` runs a local command per stage,
:class:`EndpointLauncher` points at a tool that is already running.
A container-runtime adapter would implement the same ``launch`` method.
"""

from __future__ import annotations

import os
import signal
import socket
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol
from urllib.parse import urlsplit

from .models import LauncherConfig, ToolRef

# A port nothing listens on; proxied traffic from an isolated tool dies here.
BLACKHOLE_PROXY = "http://127.0.0.1:9"
_PROXY_VARS = ("http_proxy", "https_proxy", "all_proxy", "no_proxy")


class LaunchError(RuntimeError):
    pass


@dataclass(frozen=True)
class LaunchContext:
    site_id: str
    data_node: str
    dataset_id: str


class ToolHandle(Protocol):
    endpoint: str

    def alive(self) -> bool: ...
    def logs(self) -> str: ...
    def stop(self) -> None: ...


class Launcher(Protocol):
    isolated: bool

    def launch(self, ref: ToolRef, ctx: LaunchContext) -> ToolHandle: ...


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def isolated_env(base: dict[str, str], data_node: str) -> dict[str, str]:
    """Environment that routes everything except loopback and the data node into a dead proxy.

    This is advisory: it binds well-behaved HTTP clients only. Hard
    isolation needs a network namespace, i.e. a container adapter.
    """
    env = {k: v for k, v in base.items() if k.lower() not in _PROXY_VARS}
    host = urlsplit(data_node).hostname or ""
    no_proxy = ",".join(dict.fromkeys(h for h in ("127.0.0.1", "localhost", host) if h))
    for name in ("HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY"):
        env[name] = env[name.lower()] = BLACKHOLE_PROXY
    env["NO_PROXY"] = env["no_proxy"] = no_proxy
    env["SANDBOX_NETWORK_ISOLATED"] = "1"
    return env


class SubprocessHandle:
    def __init__(self, proc: subprocess.Popen, endpoint: str, log_path: Path) -> None:
        self.proc = proc
        self.endpoint = endpoint
        self.log_path = log_path

    def alive(self) -> bool:
        return self.proc.poll() is None

    def logs(self) -> str:
        try:
            return self.log_path.read_text(encoding="utf-8", errors="replace")
        except OSError:
            return ""

    def stop(self) -> None:
        if self.proc.poll() is None:
            try:
                os.killpg(self.proc.pid, signal.SIGTERM)
            except (ProcessLookupError, PermissionError):
                self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                try:
                    os.killpg(self.proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                self.proc.wait(timeout=5)
        try:
            self.log_path.unlink()
        except OSError:
            pass


class SubprocessLauncher:
    """Run ``ref.command`` locally with placeholders filled in.

    Placeholders: ``{port}``, ``{python}``, ``{site_id}``, ``{data_node}``,
    ``{dataset_id}``. Memory and CPU caps use RLIMIT_AS and CPU affinity
    where the platform has them, applied by the :mod:`.limits` exec shim.
    """

    def __init__(self, config: LauncherConfig | None = None, host: str = "127.0.0.1") -> None:
        self.config = config or LauncherConfig()
        self.host = host

    @property
    def isolated(self) -> bool:
        return self.config.isolateNetwork

    def _wrap(self, argv: list[str]) -> list[str]:
        caps = []
        if self.config.memoryMB:
            caps += ["--memory-mb", str(self.config.memoryMB)]
        if self.config.cpus:
            caps += ["--cpus", str(self.config.cpus)]
        return [sys.executable, "-m", "fedsandbox.orchestrator.limits", *caps, "--", *argv]

    def launch(self, ref: ToolRef, ctx: LaunchContext) -> SubprocessHandle:
        if ref.kind != "command":
            raise LaunchError("subprocess launcher needs a command tool reference")
        port = free_port(self.host)
        fields = {
            "port": str(port),
            "python": sys.executable,
            "site_id": ctx.site_id,
            "data_node": ctx.data_node,
            "dataset_id": ctx.dataset_id,
        }
        try:
            argv = [part.format(**fields) for part in ref.command]
        except (KeyError, IndexError, ValueError) as exc:
            raise LaunchError(f"bad placeholder in tool command: {exc}") from None
        argv = self._wrap(argv)
        env = dict(os.environ)
        if self.config.isolateNetwork:
            env = isolated_env(env, ctx.data_node)
        fd, log_name = tempfile.mkstemp(prefix=f"tool-{ctx.site_id}-", suffix=".log")
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.DEVNULL,
                stdout=fd,
                stderr=subprocess.STDOUT,
                env=env,
                start_new_session=True,
            )
        except OSError as exc:
            os.unlink(log_name)
            raise LaunchError(f"cannot start tool: {exc}") from None
        finally:
            os.close(fd)
        return SubprocessHandle(proc, f"http://{self.host}:{port}", Path(log_name))


class EndpointHandle:
    def __init__(self, endpoint: str) -> None:
        self.endpoint = endpoint.rstrip("/")

    def alive(self) -> bool:
        return True

    def logs(self) -> str:
        return ""

    def stop(self) -> None:
        pass


class EndpointLauncher:
    """For tools started outside the orchestrator; nothing to launch or tear down."""

    isolated = False

    def launch(self, ref: ToolRef, ctx: LaunchContext) -> EndpointHandle:
        if ref.kind != "endpoint" or not ref.url:
            raise LaunchError("endpoint launcher needs an endpoint tool reference")
        return EndpointHandle(ref.url)
