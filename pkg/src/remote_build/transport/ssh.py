"""SSH transport on top of paramiko.

Only public-key authentication is attempted (agent keys first, then the
default key files), and host keys are checked against known_hosts with the
RSA-only policy from :mod:`remote_build.hostkeys`.
"""

from __future__ import annotations

import errno
import logging
import select
import socket
import socketserver
import threading
from pathlib import Path
from typing import Iterable, Sequence

import paramiko

from .. import hostkeys
from ..hostkeys import KeyType, KnownHostsEntry
from .base import (
    AuthFailure,
    ByteChannel,
    ChannelFailure,
    ConnectFailure,
    Connection,
    Endpoint,
    ExecHandle,
    HostKeyFailure,
    PortInUse,
    ProxyConnectFailure,
    ProxySpec,
)

log = logging.getLogger(__name__)

DEFAULT_IDENTITIES = ("~/.ssh/id_rsa", "~/.ssh/id_ecdsa", "~/.ssh/id_ed25519")
RSA_HOST_KEY_TYPES = ("rsa-sha2-512", "rsa-sha2-256", "ssh-rsa")


class SSHChannel(ByteChannel):
    def __init__(self, chan: paramiko.Channel) -> None:
        self.chan = chan

    def read(self, n: int) -> bytes:
        try:
            return self.chan.recv(n)
        except (EOFError, OSError, paramiko.SSHException):
            return b""

    def write(self, data: bytes) -> None:
        try:
            self.chan.sendall(data)
        except (OSError, paramiko.SSHException) as e:
            raise BrokenPipeError(f"channel closed by remote: {e}") from e

    def close_write(self) -> None:
        try:
            self.chan.shutdown_write()
        except (OSError, EOFError):
            pass

    def wait(self) -> int:
        status = self.chan.recv_exit_status()
        if status < 0:
            raise ChannelFailure("channel closed without an exit status")
        return status

    def close(self) -> None:
        self.chan.close()


def _exit_status(chan: paramiko.Channel) -> int:
    status = chan.recv_exit_status()
    if status < 0:
        raise ChannelFailure("connection lost before the remote command finished")
    return status


class SSHConnection(Connection):
    def __init__(self, transport: paramiko.Transport, closers: Sequence = (), proxy: ProxySpec | None = None) -> None:
        self.transport = transport
        self._closers = list(closers)
        self.proxy = proxy
        self.topology = "tunneled" if proxy else "direct"

    def _session(self, command: str) -> paramiko.Channel:
        try:
            chan = self.transport.open_session()
            chan.exec_command(command)
        except (paramiko.SSHException, EOFError, OSError) as e:
            raise ChannelFailure(f"cannot open channel: {e}") from e
        return chan

    def exec_shell(self, command: str) -> ExecHandle:
        chan = self._session(command)
        chan.shutdown_write()
        return ExecHandle(chan.makefile("rb"), chan.makefile_stderr("rb"), lambda: _exit_status(chan), close=chan.close)

    def open_shell_channel(self, command: str) -> ByteChannel:
        return SSHChannel(self._session(command))

    def close(self) -> None:
        self.transport.close()
        for c in self._closers:
            c.close()


def _presented_key_check(
    t: paramiko.Transport, known_hosts: list[KnownHostsEntry], host: str, port: int, stage: str
) -> None:
    key = t.get_remote_server_key()
    stored = hostkeys.lookup(known_hosts, host, port)
    result = hostkeys.verify(stored, KeyType.from_name(key.get_name()), key.asbytes())
    if not result.ok:
        raise HostKeyFailure(result, host, port, stage)


def _keys(identity_files: Iterable[str] | None, use_agent: bool):
    if use_agent:
        try:
            agent = paramiko.Agent()
            yield from agent.get_keys()
        except paramiko.SSHException as e:
            log.debug("ssh agent unavailable: %s", e)
    paths = DEFAULT_IDENTITIES if identity_files is None else identity_files
    for p in paths:
        path = Path(p).expanduser()
        if not path.is_file():
            continue
        try:
            yield paramiko.PKey.from_path(path)
        except (paramiko.SSHException, ValueError, OSError) as e:
            log.debug("skipping key %s: %s", path, e)


def _authenticate(t: paramiko.Transport, user: str, host: str, identity_files, use_agent: bool) -> None:
    last = "no usable private key found"
    for key in _keys(identity_files, use_agent):
        try:
            t.auth_publickey(user, key)
        except paramiko.AuthenticationException as e:
            last = str(e) or "key rejected"
            continue
        except paramiko.SSHException as e:
            last = str(e)
            continue
        if t.is_authenticated():
            return
    raise AuthFailure(user, host, last)


def _start(
    sock: socket.socket,
    host: str,
    port: int,
    user: str,
    known_hosts: list[KnownHostsEntry],
    stage: str,
    identity_files,
    use_agent: bool,
    timeout: float,
) -> paramiko.Transport:
    t = paramiko.Transport(sock)
    opts = t.get_security_options()
    # offer RSA first so servers holding several key types present RSA
    rsa = tuple(k for k in opts.key_types if k in RSA_HOST_KEY_TYPES)
    opts.key_types = rsa + tuple(k for k in opts.key_types if k not in rsa)
    try:
        t.start_client(timeout=timeout)
    except (paramiko.SSHException, EOFError, OSError) as e:
        t.close()
        raise ConnectFailure(f"{stage} connection: SSH handshake with {host}:{port} failed: {e}") from e
    try:
        _presented_key_check(t, known_hosts, host, port, stage)
        _authenticate(t, user, host, identity_files, use_agent)
    except BaseException:
        t.close()
        raise
    return t


def _dial(host: str, port: int, timeout: float, stage: str, exc=ConnectFailure) -> socket.socket:
    try:
        return socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise exc(f"{stage} connection: cannot reach {host}:{port}: {e}") from e


def connect(
    endpoint: Endpoint,
    known_hosts: list[KnownHostsEntry],
    *,
    identity_files: Iterable[str] | None = None,
    use_agent: bool = True,
    timeout: float = 15.0,
) -> SSHConnection:
    sock = _dial(endpoint.host, endpoint.port, timeout, "direct")
    t = _start(sock, endpoint.host, endpoint.port, endpoint.user, known_hosts, "direct", identity_files, use_agent, timeout)
    return SSHConnection(t)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        srv: Forwarder = self.server  # type: ignore[assignment]
        try:
            chan = srv.transport.open_channel(
                "direct-tcpip", (srv.remote_host, srv.remote_port), self.request.getpeername()
            )
        except (paramiko.SSHException, EOFError, OSError) as e:
            log.error("proxy refused forward to %s:%d: %s", srv.remote_host, srv.remote_port, e)
            return
        try:
            while True:
                r, _, _ = select.select([self.request, chan], [], [])
                if self.request in r:
                    data = self.request.recv(32768)
                    if not data:
                        break
                    chan.sendall(data)
                if chan in r:
                    data = chan.recv(32768)
                    if not data:
                        break
                    self.request.sendall(data)
        except OSError:
            pass
        finally:
            chan.close()


class Forwarder(socketserver.ThreadingTCPServer):
    """Local port forward, the equivalent of ``ssh -L port:host:hostport``."""

    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, local_port: int, remote_host: str, remote_port: int, transport: paramiko.Transport | None = None):
        self.remote_host = remote_host
        self.remote_port = remote_port
        self.transport = transport
        try:
            super().__init__(("127.0.0.1", local_port), _Handler)
        except OSError as e:
            if e.errno == errno.EADDRINUSE:
                raise PortInUse(local_port) from e
            raise
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        if self._thread:
            self.shutdown()
            self._thread.join()
        self.server_close()


def connect_via_proxy(
    proxy: ProxySpec,
    target: Endpoint,
    known_hosts: list[KnownHostsEntry],
    *,
    identity_files: Iterable[str] | None = None,
    use_agent: bool = True,
    timeout: float = 15.0,
) -> SSHConnection:
    """Reach ``target`` through ``proxy``.

    Stage 1 logs into the proxy and forwards 127.0.0.1:forward_port to the
    target's SSH port. Stage 2 logs into localhost:forward_port, so its host
    key is looked up under ``[localhost]:forward_port`` but must be the
    target's key.
    """
    fwd = Forwarder(proxy.forward_port, target.host, target.port)
    try:
        sock = _dial(proxy.host, proxy.ssh_port, timeout, "proxy", ProxyConnectFailure)
        try:
            t1 = _start(
                sock, proxy.host, proxy.ssh_port, proxy.user or target.user, known_hosts,
                "proxy", identity_files, use_agent, timeout,
            )
        except ConnectFailure as e:
            raise ProxyConnectFailure(str(e)) from e
        fwd.transport = t1
        fwd.start()
        try:
            sock2 = _dial("127.0.0.1", proxy.forward_port, timeout, "target")
            t2 = _start(
                sock2, "localhost", proxy.forward_port, target.user, known_hosts,
                "target", identity_files, use_agent, timeout,
            )
        except BaseException:
            t1.close()
            raise
    except BaseException:
        fwd.close()
        raise
    return SSHConnection(t2, closers=[fwd, t1], proxy=proxy)
