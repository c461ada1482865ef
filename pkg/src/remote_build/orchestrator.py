"""Run a build remotely and pull heap images back while it is running.

Novelty is judged against a snapshot of the remote heap directory taken
before the build starts; a new file is synced once two consecutive polls
agree on its size and mtime.
"""

from __future__ import annotations

import logging
import queue
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

from . import hostkeys
from .delta_sync import DEFAULT_BLOCK_SIZE, AgentSession, AgentUnavailable, SyncStats, receive_whole_file
from .delta_sync.wire import RemoteError
from .session_graph import SessionCatalog, sync_set
from .transport import Connection, Endpoint, ProxySpec, RemoteFileStat

log = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL = 2.0
DEFAULT_AGENT_COMMAND = ("remote_build", "agent")


@dataclass
class BuildRequest:
    sessions: list[str]
    remote: Endpoint
    session_dirs: list[str] = field(default_factory=list)
    remote_base: str = "~"
    remote_opts: list[str] = field(default_factory=list)
    incremental: bool = False
    proxy: ProxySpec | None = None
    verbose: bool = False

    def __post_init__(self) -> None:
        if not self.sessions:
            raise ValueError("no sessions to build")


@dataclass
class RunConfig:
    local_root: Path = Path("~/.isabelle/heaps")
    poll_interval: float = DEFAULT_POLL_INTERVAL
    block_size: int = DEFAULT_BLOCK_SIZE
    heap_dir: str = "heaps"
    known_hosts: str | None = None
    identity_files: Sequence[str] | None = None
    agent_command: Sequence[str] = DEFAULT_AGENT_COMMAND
    sync_concurrency: int = 1
    settle_polls: int = 20
    progress: TextIO | None = None


@dataclass
class HeapSnapshot:
    taken_at: float
    files: dict[str, tuple[int, int]]


@dataclass(frozen=True)
class HeapArtifact:
    session: str
    remote_path: str
    size: int
    mtime: int
    stable: bool


@dataclass
class SessionResult:
    synced: bool = False
    stats: SyncStats | None = None
    error: str | None = None
    synced_at: float | None = None
    companions: list[str] = field(default_factory=list)


@dataclass
class BuildReport:
    exit_status: int
    per_session: dict[str, SessionResult]
    total_wire_bytes: int = 0
    build_duration: float = 0.0
    sync_duration: float = 0.0
    build_finished_at: float | None = None

    @property
    def sync_failures(self) -> dict[str, str]:
        return {s: r.error for s, r in self.per_session.items() if r.error}

    @property
    def synced(self) -> list[str]:
        return [s for s, r in self.per_session.items() if r.synced]


def build_command(req: BuildRequest) -> list[str]:
    base = req.remote_base.rstrip("/") or "/"
    isabelle = f"{base}/bin/isabelle" if base != "/" else "/bin/isabelle"
    return [isabelle, "build", "-b", *req.remote_opts, *req.sessions]


def remote_heap_root(req: BuildRequest, config: RunConfig) -> str:
    return f"{req.remote_base.rstrip('/')}/{config.heap_dir}"


def snapshot_heaps(conn: Connection, artifact_root: str) -> HeapSnapshot:
    files = {s.path: (s.size, s.mtime) for s in conn.stat_tree(artifact_root)}
    return HeapSnapshot(time.time(), files)


def is_heap(path: str) -> bool:
    return "/" not in path


def detect_new_heaps(
    snapshot: HeapSnapshot,
    prev_poll: Iterable[RemoteFileStat] | None,
    cur_poll: Iterable[RemoteFileStat],
) -> list[HeapArtifact]:
    """Heaps that are new relative to ``snapshot``, flagged stable when the
    two polls agree on size and mtime."""
    prev = {s.path: (s.size, s.mtime) for s in prev_poll or ()}
    out = []
    for s in cur_poll:
        if not is_heap(s.path):
            continue
        if snapshot.files.get(s.path) == (s.size, s.mtime):
            continue
        stable = prev.get(s.path) == (s.size, s.mtime)
        out.append(HeapArtifact(s.path, s.path, s.size, s.mtime, stable))
    return out


def companions(session: str, poll: Iterable[RemoteFileStat]) -> list[RemoteFileStat]:
    """Build logs kept next to a heap: ``log/<session>`` and ``log/<session>.*``."""
    out = []
    for s in poll:
        head, _, name = s.path.partition("/")
        if head == "log" and (name == session or name.startswith(session + ".")):
            out.append(s)
    return out


class _Syncer:
    """Fetch remote heap files, via the sync agent when one answers."""

    def __init__(self, conn: Connection, remote_root: str, local_root: Path, config: RunConfig) -> None:
        self.conn = conn
        self.remote_root = remote_root
        self.local_root = local_root
        self.config = config
        self.idle: queue.SimpleQueue[AgentSession] = queue.SimpleQueue()
        self.all: list[AgentSession] = []
        self.fallback = False
        self.lock = threading.Lock()

    def _session(self) -> AgentSession | None:
        if self.fallback:
            return None
        try:
            return self.idle.get_nowait()
        except queue.Empty:
            pass
        chan = self.conn.open_channel([*self.config.agent_command, self.remote_root])
        try:
            s = AgentSession(chan)
        except AgentUnavailable as e:
            chan.close()
            with self.lock:
                if not self.fallback:
                    log.warning("%s; falling back to whole-file transfers", e)
                self.fallback = True
            return None
        with self.lock:
            self.all.append(s)
        return s

    def warm(self) -> None:
        """Start one agent up front so the first heap does not pay for it."""
        s = self._session()
        if s is not None:
            self.idle.put(s)

    def fetch(self, stat: RemoteFileStat) -> SyncStats:
        local = self.local_root / stat.path
        s = self._session()
        if s is None:
            chan = self.conn.open_channel(["cat", f"{self.remote_root}/{stat.path}"])
            try:
                return receive_whole_file(chan, local, stat.mtime, stat.size)
            finally:
                chan.close()
        try:
            stats = s.sync_file(stat.path, local, self.config.block_size)
        except RemoteError as e:
            if e.reason.startswith("no such file"):
                self.idle.put(s)
            else:
                s.abort()
            raise
        except BaseException:
            # a half-read reply leaves the session out of step; drop it
            s.abort()
            raise
        self.idle.put(s)
        return stats

    def close(self) -> None:
        for s in self.all:
            s.close()
            s.abort()


def _say(config: RunConfig, msg: str) -> None:
    out = config.progress if config.progress is not None else sys.stderr
    print(msg, file=out, flush=True)


def default_connector(req: BuildRequest, config: RunConfig) -> Connection:
    from .transport import connect, connect_via_proxy

    known = hostkeys.load_known_hosts(config.known_hosts)
    kw = {"identity_files": config.identity_files}
    if req.proxy is not None:
        return connect_via_proxy(req.proxy, req.remote, known, **kw)
    return connect(req.remote, known, **kw)


def run(
    req: BuildRequest,
    catalog: SessionCatalog,
    config: RunConfig | None = None,
    connector: Callable[[BuildRequest, RunConfig], Connection] | None = None,
) -> BuildReport:
    config = config or RunConfig()
    local_root = Path(config.local_root).expanduser()
    wanted = [] if req.incremental else sync_set(catalog, req.sessions, False)

    conn = (connector or default_connector)(req, config)
    try:
        return _run(conn, req, catalog, config, local_root, wanted)
    finally:
        conn.close()


def _run(
    conn: Connection,
    req: BuildRequest,
    catalog: SessionCatalog,
    config: RunConfig,
    local_root: Path,
    wanted: list[str],
) -> BuildReport:
    remote_root = remote_heap_root(req, config)
    snapshot = snapshot_heaps(conn, remote_root)
    if req.verbose:
        _say(config, f"{len(snapshot.files)} file(s) under {remote_root} before the build")

    syncer = _Syncer(conn, remote_root, local_root, config)
    syncer.warm()

    argv = build_command(req)
    _say(config, f"Running {' '.join(argv)} on {req.remote.host}")
    build_start = time.monotonic()
    handle = conn.exec(argv)
    done = threading.Event()
    status: list[int] = []
    finished_at: list[float] = []

    def forward(stream, prefix: str) -> None:
        for line in iter(stream.readline, b""):
            _say(config, prefix + line.decode(errors="replace").rstrip("\n"))

    def consume() -> None:
        pumps = [
            threading.Thread(target=forward, args=(handle.stdout, ""), daemon=True),
            threading.Thread(target=forward, args=(handle.stderr, ""), daemon=True),
        ]
        for p in pumps:
            p.start()
        try:
            status.append(handle.wait())
        except Exception as e:
            log.error("lost the remote build: %s", e)
            status.append(255)
        finished_at.append(time.time())
        for p in pumps:
            p.join(timeout=5)
        done.set()

    consumer = threading.Thread(target=consume, daemon=True)
    consumer.start()

    results: dict[str, SessionResult] = {}
    pool = ThreadPoolExecutor(max_workers=max(1, config.sync_concurrency))
    sync_time = 0.0

    def sync_one(stat: RemoteFileStat, poll: list[RemoteFileStat]) -> tuple[str, SessionResult]:
        session = stat.path
        res = SessionResult()
        try:
            res.stats = syncer.fetch(stat)
            res.synced = True
            res.synced_at = time.time()
            for c in companions(session, poll):
                try:
                    syncer.fetch(c)
                    res.companions.append(c.path)
                except Exception as e:
                    log.warning("could not sync %s: %s", c.path, e)
        except Exception as e:
            res.error = f"{type(e).__name__}: {e}"
        return session, res

    def sync_batch(stats: list[RemoteFileStat], poll: list[RemoteFileStat]) -> None:
        nonlocal sync_time
        if not stats:
            return
        t0 = time.monotonic()
        for s in stats:
            if s.path not in catalog:
                log.warning("heap %s does not belong to a session in the local catalog", s.path)
            _say(config, f"Synchronizing heap {s.path} ...")
        for session, res in pool.map(lambda s: sync_one(s, poll), stats):
            results[session] = res
            if res.error:
                _say(config, f"Failed to synchronize {session}: {res.error}")
            elif req.verbose and res.stats:
                _say(config, f"  {session}: {res.stats}")
        sync_time += time.monotonic() - t0

    def handle_poll(prev, cur) -> list[HeapArtifact]:
        arts = detect_new_heaps(snapshot, prev, cur)
        by_path = {s.path: s for s in cur}
        ready = [by_path[a.remote_path] for a in arts if a.stable and a.session not in results]
        sync_batch(ready, cur)
        return [a for a in arts if not a.stable and a.session not in results]

    prev: list[RemoteFileStat] | None = None
    cur: list[RemoteFileStat] = []
    try:
        while not done.wait(config.poll_interval):
            cur = conn.stat_tree(remote_root)
            handle_poll(prev, cur)
            prev = cur
        build_duration = time.monotonic() - build_start
        exit_status = status[0]
        if exit_status:
            _say(config, f"Remote build failed with exit status {exit_status}")

        for _ in range(config.settle_polls):
            cur = conn.stat_tree(remote_root)
            pending = handle_poll(prev, cur)
            if prev is not None and not pending:
                break
            prev = cur
            time.sleep(config.poll_interval)

        if wanted:
            by_path = {s.path: s for s in cur}
            missing = [n for n in wanted if n not in results and n not in by_path]
            for n in missing:
                results[n] = SessionResult(error="no heap image on the remote host")
            sync_batch([by_path[n] for n in wanted if n not in results and n in by_path], cur)
    finally:
        pool.shutdown(wait=True)
        syncer.close()
        if not done.is_set():
            handle.close()
        consumer.join(timeout=5)

    total_wire = sum(r.stats.wire_bytes for r in results.values() if r.stats)
    return BuildReport(
        exit_status=exit_status,
        per_session=results,
        total_wire_bytes=total_wire,
        build_duration=build_duration,
        sync_duration=sync_time,
        build_finished_at=finished_at[0] if finished_at else None,
    )
