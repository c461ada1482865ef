"""Remote sessions: command execution, file listings and byte channels."""

from .base import (
    DEFAULT_FORWARD_PORT,
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
    RemoteFileStat,
    TransportError,
    quote_remote,
    remote_shell_join,
)
from .loopback import LoopbackConnection


def connect(endpoint, known_hosts, **kwargs):
    from .ssh import connect as _connect

    return _connect(endpoint, known_hosts, **kwargs)


def connect_via_proxy(proxy, target, known_hosts, **kwargs):
    from .ssh import connect_via_proxy as _connect_via_proxy

    return _connect_via_proxy(proxy, target, known_hosts, **kwargs)


__all__ = [
    "DEFAULT_FORWARD_PORT",
    "AuthFailure",
    "ByteChannel",
    "ChannelFailure",
    "ConnectFailure",
    "Connection",
    "Endpoint",
    "ExecHandle",
    "HostKeyFailure",
    "LoopbackConnection",
    "PortInUse",
    "ProxyConnectFailure",
    "ProxySpec",
    "RemoteFileStat",
    "TransportError",
    "connect",
    "connect_via_proxy",
    "quote_remote",
    "remote_shell_join",
]
