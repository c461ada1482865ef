"""Local half of the sync protocol: fetch remote files into place atomically."""

from __future__ import annotations

import io
import logging
import os
import tempfile
import time
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

from . import wire
from .agent import readonly_view
from .delta import DEFAULT_BLOCK_SIZE, DeltaWriter, SignatureSet, block_signatures

log = logging.getLogger(__name__)

TEMP_SUFFIX = ".rbtmp"


class AgentUnavailable(Exception):
    """Nothing on the far end of the channel speaks the sync protocol."""


@dataclass
class SyncStats:
    literal_bytes: int = 0
    copied_bytes: int = 0
    wire_bytes: int = 0
    elapsed: float = 0.0
    source_len: int = 0
    mtime: int = 0

    def __str__(self) -> str:
        return (
            f"{self.source_len} bytes: {self.literal_bytes} literal, {self.copied_bytes} copied, "
            f"{self.wire_bytes} on the wire, {self.elapsed:.2f}s"
        )


class _Counting:
    def __init__(self, channel) -> None:
        self.channel = channel
        self.nread = 0
        self.nwritten = 0

    def read(self, n: int) -> bytes:
        data = self.channel.read(n)
        self.nread += len(data)
        return data

    def write(self, data: bytes) -> None:
        self.channel.write(data)
        self.nwritten += len(data)

    @property
    def total(self) -> int:
        return self.nread + self.nwritten


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


@contextmanager
def atomic_output(path: Path, mtime: int | None = None) -> Iterator[BinaryIO]:
    """Write to a temp sibling of ``path`` and rename it over ``path``.

    If the body raises, the temp file is removed and ``path`` is untouched.
    The mtime is applied before the rename so the file never appears with
    a fresh timestamp.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=TEMP_SUFFIX)
    try:
        with os.fdopen(fd, "wb") as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.chmod(tmp, 0o666 & ~_umask())
        if mtime is not None:
            os.utime(tmp, (mtime, mtime))
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class AgentSession:
    """A handshaken protocol session over one channel; one file at a time."""

    def __init__(self, channel) -> None:
        self.channel = _Counting(channel)
        try:
            wire.send_magic(self.channel)
            wire.recv_magic(self.channel)
        except (wire.ChannelClosed, BrokenPipeError, ConnectionResetError) as e:
            raise AgentUnavailable("no sync agent on the remote side") from e
        except wire.ProtocolError as e:
            raise AgentUnavailable(f"remote side does not speak the sync protocol: {e}") from e

    def _send_request(self, remote_path: str, sigs: SignatureSet) -> None:
        parts = [
            wire.encode_frame(wire.FILE_REQUEST, wire.file_request(remote_path, sigs.block_size)),
            wire.encode_frame(wire.SIG_HEADER, wire.sig_header(sigs.basis_len, len(sigs))),
        ]
        parts.extend(wire.encode_frame(wire.SIG, wire.sig(w, s)) for w, s in zip(sigs.weak, sigs.strong))
        self.channel.write(b"".join(parts))

    def sync_file(self, remote_path: str, local_path, block_size: int = DEFAULT_BLOCK_SIZE) -> SyncStats:
        """Bring ``local_path`` up to date with ``remote_path`` on the agent."""
        start = time.monotonic()
        wire_before = self.channel.total
        local = Path(local_path)
        with ExitStack() as stack:
            basis: BinaryIO = io.BytesIO(b"")
            if local.is_file():
                basis = stack.enter_context(open(local, "rb"))
                sigs = block_signatures(stack.enter_context(readonly_view(local)), block_size)
            else:
                sigs = SignatureSet(block_size, 0)
            self._send_request(remote_path, sigs)
            first = wire.recv_frame(self.channel)
            wire.expect(first, wire.COPY, wire.LITERAL, wire.FILE_END)
            frames = _chain(first, self.channel)
            mtime = 0
            with atomic_output(local) as out:
                writer = DeltaWriter(basis, out, block_size, sigs.basis_len)
                for tag, payload in frames:
                    if tag == wire.COPY:
                        writer.copy(wire.parse_copy(payload))
                    elif tag == wire.LITERAL:
                        writer.literal(payload)
                    elif tag == wire.FILE_END:
                        source_len, mtime, digest = wire.parse_file_end(payload)
                        writer.finish(source_len, digest)
                        # mtime arrives last; stamp the temp file before the rename
                        out.flush()
                        os.utime(out.fileno(), (mtime, mtime))
                        break
                    else:
                        wire.expect((tag, payload), wire.COPY, wire.LITERAL, wire.FILE_END)
        stats = SyncStats(
            literal_bytes=writer.literal_bytes,
            copied_bytes=writer.copied_bytes,
            wire_bytes=self.channel.total - wire_before,
            elapsed=time.monotonic() - start,
            source_len=writer.written,
            mtime=mtime,
        )
        return stats

    def close(self) -> None:
        """Say goodbye; the channel itself stays open."""
        try:
            wire.send_frame(self.channel, wire.QUIT)
        except OSError:
            pass

    def abort(self) -> None:
        close = getattr(self.channel.channel, "close", None)
        if close:
            close()


def _chain(first: tuple[int, bytes], stream) -> Iterator[tuple[int, bytes]]:
    yield first
    while True:
        yield wire.recv_frame(stream)


def sync_file(channel, remote_path: str, local_path, block_size: int = DEFAULT_BLOCK_SIZE) -> SyncStats:
    """Sync one file over ``channel``, which may already be an AgentSession."""
    session = channel if isinstance(channel, AgentSession) else AgentSession(channel)
    return session.sync_file(remote_path, local_path, block_size)


def receive_whole_file(channel, local_path, mtime: int, expected_size: int | None = None) -> SyncStats:
    """Fallback when no agent runs remotely: ``channel`` streams the raw file."""
    start = time.monotonic()
    local = Path(local_path)
    n = 0
    with atomic_output(local, mtime) as out:
        while True:
            chunk = channel.read(64 * 1024)
            if not chunk:
                break
            out.write(chunk)
            n += len(chunk)
        status = channel.wait() if hasattr(channel, "wait") else 0
        if status:
            raise OSError(f"remote file stream failed with status {status}")
        if expected_size is not None and n != expected_size:
            raise wire.ChannelClosed(f"received {n} of {expected_size} bytes")
    return SyncStats(literal_bytes=n, wire_bytes=n, elapsed=time.monotonic() - start, source_len=n, mtime=mtime)
