"""Remote half of the sync protocol: answers file requests with deltas."""

from __future__ import annotations

import logging
import mmap
import os
from contextlib import contextmanager
from pathlib import Path, PurePosixPath

from . import wire
from .delta import MIN_BLOCK_SIZE, Copy, SignatureSet, compute_delta

log = logging.getLogger(__name__)

FLUSH_AT = 256 * 1024


class _Batched:
    """Coalesce small frames into larger writes."""

    def __init__(self, stream) -> None:
        self.stream = stream
        self.buf = bytearray()

    def frame(self, tag: int, payload: bytes = b"") -> None:
        self.buf += wire.encode_frame(tag, payload)
        if len(self.buf) >= FLUSH_AT:
            self.flush()

    def flush(self) -> None:
        if self.buf:
            self.stream.write(bytes(self.buf))
            self.buf.clear()


@contextmanager
def readonly_view(path: Path):
    """Memory-map ``path`` read-only; empty files map to ``b""``."""
    with open(path, "rb") as f:
        size = os.fstat(f.fileno()).st_size
        if size == 0:
            yield b""
            return
        with mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) as m:
            yield m


def resolve(root: Path, rel: str) -> Path | None:
    p = PurePosixPath(rel)
    if p.is_absolute() or ".." in p.parts or not p.parts:
        return None
    return root.joinpath(*p.parts)


def _read_request(stream) -> tuple[str, SignatureSet] | None:
    """Read one request; ``None`` means the peer said Quit or hung up."""
    try:
        frame = wire.recv_frame(stream)
    except wire.ChannelClosed:
        return None
    if frame[0] == wire.QUIT:
        return None
    path, block_size = wire.parse_file_request(wire.expect(frame, wire.FILE_REQUEST))
    basis_len, count = wire.parse_sig_header(wire.expect(wire.recv_frame(stream), wire.SIG_HEADER))
    if block_size < MIN_BLOCK_SIZE:
        raise wire.ProtocolError(f"block size {block_size} below minimum {MIN_BLOCK_SIZE}")
    if count != -(-basis_len // block_size):
        raise wire.ProtocolError(f"{count} signatures cannot describe {basis_len} bytes")
    weak, strong = [], []
    for _ in range(count):
        w, s = wire.parse_sig(wire.expect(wire.recv_frame(stream), wire.SIG))
        weak.append(w)
        strong.append(s)
    return path, SignatureSet(block_size, basis_len, weak, strong)


def _delta_for(path: Path, sigs: SignatureSet):
    try:
        with readonly_view(path) as view:
            mtime = int(os.stat(path).st_mtime)
            return compute_delta(view, sigs), mtime
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError):
        return None


def serve_agent(channel, root_dir: str | os.PathLike) -> None:
    """Serve file requests for files below ``root_dir`` until Quit or EOF."""
    root = Path(root_dir)
    out = _Batched(channel)
    try:
        wire.send_magic(channel)
        wire.recv_magic(channel)
        while True:
            req = _read_request(channel)
            if req is None:
                return
            rel, sigs = req
            path = resolve(root, rel)
            if path is None:
                raise wire.ProtocolError(f"path escapes root: {rel!r}")
            found = _delta_for(path, sigs)
            if found is None:
                wire.send_frame(channel, wire.ERROR, f"no such file: {rel}".encode())
                continue
            delta, mtime = found
            for op in delta.ops:
                if isinstance(op, Copy):
                    out.frame(wire.COPY, wire.copy(op.index))
                else:
                    out.frame(wire.LITERAL, op.data)
            out.frame(wire.FILE_END, wire.file_end(delta.source_len, mtime, delta.source_digest))
            out.flush()
            log.debug("served %s: %d literal, %d copied", rel, delta.literal_bytes, delta.copied_bytes)
    except wire.ProtocolError as e:
        log.error("protocol error: %s", e)
        try:
            out.buf.clear()
            wire.send_frame(channel, wire.ERROR, str(e).encode("utf-8", "replace"))
        except OSError:
            pass
    except (BrokenPipeError, ConnectionResetError):
        log.debug("peer went away")
