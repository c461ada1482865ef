from __future__ import annotations

import json
import os
import socket
import stat
import sys
import threading
from pathlib import Path

import pytest

from remote_build.delta_sync import serve_agent
from remote_build.orchestrator import RunConfig
from remote_build.transport import LoopbackConnection

sys.path.insert(0, str(Path(__file__).parent))

AGENT = (sys.executable, "-m", "remote_build", "agent")

FAKE_BUILDER = '''\
#!{python}
"""Stand-in for `isabelle build`: replays ~/scenario.json."""
import json, os, random, sys, time

home = os.path.expanduser("~")
heaps = os.path.join(home, "heaps")
os.makedirs(heaps, exist_ok=True)
with open(os.path.join(home, "builder_argv.json"), "w") as f:
    json.dump(sys.argv[1:], f)
with open(os.path.join(home, "scenario.json")) as f:
    steps = json.load(f)
code = 0
for step in steps:
    op = step["op"]
    if op == "write":
        rnd = random.Random(step.get("seed", 0))
        data = rnd.randbytes(step["size"])
        path = os.path.join(heaps, step["name"])
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb") as f:
            f.write(data)
        if "mtime" in step:
            os.utime(path, (step["mtime"], step["mtime"]))
        print("Finished", step["name"], flush=True)
    elif op == "sleep":
        time.sleep(step["seconds"])
    elif op == "exit":
        code = step["code"]
with open(os.path.join(home, "builder_exit"), "w") as f:
    f.write(repr(time.time()))
sys.exit(code)
'''


def install_builder(home: Path, steps: list[dict]) -> None:
    bin_dir = home / "bin"
    bin_dir.mkdir(parents=True, exist_ok=True)
    script = bin_dir / "isabelle"
    script.write_text(FAKE_BUILDER.format(python=sys.executable))
    script.chmod(script.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    (home / "scenario.json").write_text(json.dumps(steps))


def write_heap(home: Path, name: str, data: bytes, mtime: int | None = None) -> Path:
    p = home / "heaps" / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    if mtime is not None:
        os.utime(p, (mtime, mtime))
    return p


@pytest.fixture
def remote_home(tmp_path: Path) -> Path:
    home = tmp_path / "remote"
    home.mkdir()
    return home


@pytest.fixture
def local_root(tmp_path: Path) -> Path:
    root = tmp_path / "local" / "heaps"
    root.mkdir(parents=True)
    return root


@pytest.fixture
def loopback(remote_home: Path):
    conn = LoopbackConnection(remote_home)
    yield conn
    conn.close()


@pytest.fixture
def run_config(local_root: Path) -> RunConfig:
    return RunConfig(local_root=local_root, poll_interval=0.2, agent_command=AGENT, progress=open(os.devnull, "w"))


def loopback_connector(home: Path):
    return lambda req, config: LoopbackConnection(home)


class SocketChannel:
    """ByteChannel over one end of a socketpair."""

    def __init__(self, sock) -> None:
        self.sock = sock

    def read(self, n: int) -> bytes:
        try:
            return self.sock.recv(n)
        except OSError:
            return b""

    def write(self, data: bytes) -> None:
        self.sock.sendall(data)

    def close_write(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def close(self) -> None:
        self.sock.close()


@pytest.fixture
def agent_channel(remote_home: Path):
    """Client end of a channel whose far end runs serve_agent on ~/heaps."""
    a, b = socket.socketpair()
    root = remote_home / "heaps"
    root.mkdir(exist_ok=True)
    server = SocketChannel(b)
    t = threading.Thread(target=lambda: (serve_agent(server, root), server.close()), daemon=True)
    t.start()
    client = SocketChannel(a)
    yield client
    client.close()
    t.join(timeout=5)


def pytest_terminal_summary(terminalreporter) -> None:
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
