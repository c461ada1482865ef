"""A tiny paramiko SSH server for hermetic tests.

Runs ``sh -c`` for exec requests with HOME pointing at a sandbox directory,
accepts only listed public keys, and optionally serves ``direct-tcpip``
forwards so it can play the proxy host.
"""

from __future__ import annotations

import os
import select
import socket
import subprocess
import threading
from pathlib import Path

import paramiko


class _Interface(paramiko.ServerInterface):
    def __init__(self, server: "MiniSSHD") -> None:
        self.server = server
        self.forwards: dict[int, tuple[str, int]] = {}

    def get_allowed_auths(self, username: str) -> str:
        return "publickey"

    def check_auth_password(self, username, password):
        return paramiko.AUTH_FAILED

    def check_auth_publickey(self, username, key):
        if any(key.asbytes() == k.asbytes() for k in self.server.authorized):
            self.server.logins.append(username)
            return paramiko.AUTH_SUCCESSFUL
        return paramiko.AUTH_FAILED

    def check_channel_request(self, kind, chanid):
        if kind == "session":
            return paramiko.OPEN_SUCCEEDED
        return paramiko.OPEN_FAILED_ADMINISTRATIVELY_PROHIBITED

    def check_channel_direct_tcpip_request(self, chanid, origin, destination):
        if not self.server.allow_forwarding:
            return paramiko.OPEN_FAILED_ADMINISTRATIVELY_PROHIBITED
        self.server.forward_requests.append(destination)
        self.forwards[chanid] = destination
        return paramiko.OPEN_SUCCEEDED

    def check_channel_exec_request(self, channel, command):
        self.server.commands.append(command.decode())
        threading.Thread(target=self.server._run, args=(channel, command.decode()), daemon=True).start()
        return True


class MiniSSHD:
    def __init__(self, home: Path, host_keys, authorized, allow_forwarding: bool = False) -> None:
        self.home = Path(home)
        self.home.mkdir(parents=True, exist_ok=True)
        self.host_keys = list(host_keys)
        self.authorized = list(authorized)
        self.allow_forwarding = allow_forwarding
        self.commands: list[str] = []
        self.forward_requests: list[tuple[str, int]] = []
        self.logins: list[str] = []
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(16)
        self.port = self.sock.getsockname()[1]
        self._transports: list[paramiko.Transport] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        while not self._stop.is_set():
            r, _, _ = select.select([self.sock], [], [], 0.1)
            if not r:
                continue
            try:
                client, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._session, args=(client,), daemon=True).start()

    def _session(self, client: socket.socket) -> None:
        t = paramiko.Transport(client)
        self._transports.append(t)
        for k in self.host_keys:
            t.add_server_key(k)
        iface = _Interface(self)
        try:
            t.start_server(server=iface)
        except (paramiko.SSHException, EOFError, OSError):
            return
        while t.is_active() and not self._stop.is_set():
            chan = t.accept(0.2)
            if chan is None:
                continue
            dest = iface.forwards.pop(chan.get_id(), None)
            if dest is not None:
                threading.Thread(target=self._forward, args=(chan, dest), daemon=True).start()

    def _forward(self, chan, dest) -> None:
        try:
            sock = socket.create_connection(dest, timeout=5)
        except OSError:
            chan.close()
            return
        try:
            while True:
                r, _, _ = select.select([sock, chan], [], [])
                if sock in r:
                    data = sock.recv(32768)
                    if not data:
                        break
                    chan.sendall(data)
                if chan in r:
                    data = chan.recv(32768)
                    if not data:
                        break
                    sock.sendall(data)
        except OSError:
            pass
        finally:
            chan.close()
            sock.close()

    def _run(self, chan, command: str) -> None:
        env = {**os.environ, "HOME": str(self.home)}
        proc = subprocess.Popen(
            ["sh", "-c", command], cwd=self.home, env=env,
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )

        def pump_in():
            try:
                while True:
                    data = chan.recv(32768)
                    if not data:
                        break
                    proc.stdin.write(data)
                    proc.stdin.flush()
            except (OSError, ValueError):
                pass
            finally:
                try:
                    proc.stdin.close()
                except OSError:
                    pass

        def pump_out(stream, send):
            try:
                while True:
                    data = stream.read1(32768)
                    if not data:
                        break
                    send(data)
            except OSError:
                pass

        threads = [
            threading.Thread(target=pump_in, daemon=True),
            threading.Thread(target=pump_out, args=(proc.stdout, chan.sendall), daemon=True),
            threading.Thread(target=pump_out, args=(proc.stderr, chan.sendall_stderr), daemon=True),
        ]
        for th in threads:
            th.start()
        rc = proc.wait()
        threads[1].join()
        threads[2].join()
        try:
            chan.send_exit_status(rc)
            chan.shutdown_write()
            chan.close()
        except OSError:
            pass

    def close(self) -> None:
        self._stop.set()
        self.sock.close()
        for t in self._transports:
            t.close()
        self._thread.join(timeout=2)


def known_hosts_line(pattern: str, key: paramiko.PKey) -> str:
    return f"{pattern} {key.get_name()} {key.get_base64()}"
