"""In-process stand-in for a remote host: a local directory acts as its home.

Commands go through ``sh -c`` with ``HOME`` pointing at the sandbox, so
quoting and ``~`` expansion behave exactly as over SSH.
"""

from __future__ import annotations

import logging
import os
import subprocess
import threading
from pathlib import Path
from typing import Mapping

from .base import ByteChannel, ChannelFailure, Connection, ExecHandle

log = logging.getLogger(__name__)


class ProcessChannel(ByteChannel):
    def __init__(self, proc: subprocess.Popen) -> None:
        self.proc = proc
        self._stderr = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr.start()

    def _drain_stderr(self) -> None:
        for line in self.proc.stderr:
            log.debug("channel stderr: %s", line.decode(errors="replace").rstrip())

    def read(self, n: int) -> bytes:
        try:
            return self.proc.stdout.read1(n)
        except (OSError, ValueError):
            return b""

    def write(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise BrokenPipeError("channel closed by remote") from e

    def close_write(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass

    def wait(self) -> int:
        return self.proc.wait()

    def close(self) -> None:
        self.close_write()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self.proc.stdout.close()


class LoopbackConnection(Connection):
    """Run "remote" commands locally with ``home`` as the home directory."""

    topology = "loopback"

    def __init__(self, home: str | os.PathLike, env: Mapping[str, str] | None = None) -> None:
        self.home = Path(home).resolve()
        self.home.mkdir(parents=True, exist_ok=True)
        self.env = {**os.environ, **(env or {}), "HOME": str(self.home)}
        self._procs: list[subprocess.Popen] = []
        self._closed = False

    def _spawn(self, command: str, stdin) -> subprocess.Popen:
        if self._closed:
            raise ChannelFailure("connection is closed")
        proc = subprocess.Popen(
            ["sh", "-c", command],
            cwd=self.home,
            env=self.env,
            stdin=stdin,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
        self._procs.append(proc)
        return proc

    def exec_shell(self, command: str) -> ExecHandle:
        proc = self._spawn(command, subprocess.DEVNULL)
        return ExecHandle(proc.stdout, proc.stderr, proc.wait, close=proc.kill)

    def open_shell_channel(self, command: str) -> ByteChannel:
        return ProcessChannel(self._spawn(command, subprocess.PIPE))

    def close(self) -> None:
        self._closed = True
        for proc in self._procs:
            if proc.poll() is None:
                proc.kill()
                proc.wait()
