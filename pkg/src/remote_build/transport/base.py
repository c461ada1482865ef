from __future__ import annotations

import abc
import getpass
import shlex
import threading
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Sequence

from ..hostkeys import VerifyResult, describe

DEFAULT_FORWARD_PORT = 2222


class TransportError(Exception):
    """Base class for connection and channel problems."""


class ConnectFailure(TransportError):
    pass


class ProxyConnectFailure(ConnectFailure):
    pass


class AuthFailure(TransportError):
    def __init__(self, user: str, host: str, detail: str = "") -> None:
        msg = (
            f"key-based authentication as {user!r} on {host} failed; "
            "password authentication is not supported, so install a public key "
            "in the remote authorized_keys or load one into your SSH agent"
        )
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.user = user
        self.host = host


class HostKeyFailure(TransportError):
    def __init__(self, result: VerifyResult, host: str, port: int, stage: str = "direct") -> None:
        super().__init__(f"{stage} connection: " + describe(result, host, port))
        self.result = result
        self.host = host
        self.port = port
        self.stage = stage


class PortInUse(TransportError):
    def __init__(self, port: int) -> None:
        super().__init__(f"local forward port {port} is already in use")
        self.port = port


class ChannelFailure(TransportError):
    pass


def _check_port(port: int) -> None:
    if not 1 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int = 22
    user: str = field(default_factory=getpass.getuser)

    def __post_init__(self) -> None:
        if not self.host:
            raise ValueError("empty host name")
        _check_port(self.port)

    @classmethod
    def parse(cls, spec: str, port: int = 22) -> "Endpoint":
        """``[user@]host``"""
        user, sep, host = spec.rpartition("@")
        return cls(host, port, user) if sep else cls(host, port)

    def __str__(self) -> str:
        return f"{self.user}@{self.host}" + (f":{self.port}" if self.port != 22 else "")


@dataclass(frozen=True)
class ProxySpec:
    """Proxy jump host. ``forward_port`` is the local end of the tunnel to
    the target's SSH daemon; the proxy itself is reached on ``ssh_port``."""

    host: str
    forward_port: int = DEFAULT_FORWARD_PORT
    user: str | None = None
    ssh_port: int = 22

    def __post_init__(self) -> None:
        if not self.host:
            raise ValueError("empty proxy host name")
        _check_port(self.forward_port)
        _check_port(self.ssh_port)

    @classmethod
    def parse(cls, spec: str) -> "ProxySpec":
        """``[user@]HOST`` or ``[user@]HOST:PORT``."""
        user, sep, rest = spec.rpartition("@")
        host, colon, port = rest.partition(":")
        if colon:
            if not port.isdigit():
                raise ValueError(f"malformed proxy port in {spec!r}")
            return cls(host, int(port), user or None)
        return cls(host, user=user or None)

    def __str__(self) -> str:
        s = f"{self.user}@{self.host}" if self.user else self.host
        return s if self.forward_port == DEFAULT_FORWARD_PORT else f"{s}:{self.forward_port}"


@dataclass(frozen=True)
class RemoteFileStat:
    path: str
    size: int
    mtime: int


class ExecHandle:
    """A running remote command: byte streams plus an exit status."""

    def __init__(self, stdout: BinaryIO, stderr: BinaryIO, wait: Callable[[], int], close=None) -> None:
        self.stdout = stdout
        self.stderr = stderr
        self._wait = wait
        self._close = close
        self._status: int | None = None
        self._lock = threading.Lock()

    def wait(self) -> int:
        with self._lock:
            if self._status is None:
                self._status = self._wait()
            return self._status

    @property
    def exit_status(self) -> int | None:
        return self._status

    def close(self) -> None:
        if self._close:
            self._close()


class ByteChannel(abc.ABC):
    """Ordered, reliable byte stream to a remote process's stdin/stdout."""

    @abc.abstractmethod
    def read(self, n: int) -> bytes:
        """Up to ``n`` bytes; ``b""`` at end of stream."""

    @abc.abstractmethod
    def write(self, data: bytes) -> None: ...

    @abc.abstractmethod
    def close_write(self) -> None: ...

    @abc.abstractmethod
    def wait(self) -> int:
        """Exit status of the remote process."""

    @abc.abstractmethod
    def close(self) -> None: ...

    def __enter__(self) -> "ByteChannel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def quote_remote(arg: str) -> str:
    """Shell-quote ``arg`` but leave a leading ``~`` for the remote shell."""
    if arg == "~":
        return "~"
    if arg.startswith("~/"):
        rest = arg[2:]
        return "~/" + shlex.quote(rest) if rest else "~/"
    return shlex.quote(arg)


def remote_shell_join(argv: Sequence[str]) -> str:
    return " ".join(quote_remote(a) for a in argv)


LISTING = "cd {dir} 2>/dev/null || exit 0; exec find . -type f -printf '%s %T@ %P\\0'"


def parse_listing(raw: bytes) -> list[RemoteFileStat]:
    out = []
    for rec in raw.split(b"\0"):
        if not rec:
            continue
        size, mtime, path = rec.decode("utf-8", "surrogateescape").split(" ", 2)
        out.append(RemoteFileStat(path, int(size), int(mtime.split(".", 1)[0])))
    out.sort(key=lambda s: s.path)
    return out


class Connection(abc.ABC):
    """A session on the remote machine."""

    topology: str = "direct"
    proxy: ProxySpec | None = None

    @abc.abstractmethod
    def exec_shell(self, command: str) -> ExecHandle:
        """Run a raw command line through the remote shell."""

    @abc.abstractmethod
    def open_shell_channel(self, command: str) -> ByteChannel: ...

    def exec(self, argv: Sequence[str]) -> ExecHandle:
        return self.exec_shell(remote_shell_join(argv))

    def open_channel(self, argv: Sequence[str]) -> ByteChannel:
        return self.open_shell_channel(remote_shell_join(argv))

    def stat_tree(self, dir: str) -> list[RemoteFileStat]:
        """Regular files below ``dir`` (paths relative to it); missing dir -> []."""
        h = self.exec_shell(LISTING.format(dir=quote_remote(dir)))
        raw = h.stdout.read()
        err = h.stderr.read()
        status = h.wait()
        if status != 0:
            raise ChannelFailure(f"remote listing of {dir} failed ({status}): {err.decode(errors='replace').strip()}")
        return parse_listing(raw)

    def close(self) -> None:
        pass

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
