"""Framing for the sync protocol.

Each side first sends the 4-byte magic ``RBS1``. After that everything is a
frame: ``u32 payload_len | u8 tag | payload`` (big-endian, ``payload_len``
excludes the tag byte).
"""

from __future__ import annotations

import struct
from typing import Protocol

MAGIC = b"RBS1"
MAX_PAYLOAD = 1 << 24

FILE_REQUEST = 0x01
SIG_HEADER = 0x02
SIG = 0x03
COPY = 0x10
LITERAL = 0x11
FILE_END = 0x12
ERROR = 0x7E
QUIT = 0x7F

TAG_NAMES = {
    FILE_REQUEST: "FileRequest",
    SIG_HEADER: "SigHeader",
    SIG: "Sig",
    COPY: "Copy",
    LITERAL: "Literal",
    FILE_END: "FileEnd",
    ERROR: "Error",
    QUIT: "Quit",
}

_HEADER = struct.Struct(">IB")
_U64 = struct.Struct(">Q")
_SIG_HEADER = struct.Struct(">QQ")
_SIG = struct.Struct(">I32s")
_FILE_END = struct.Struct(">QQ32s")


class ProtocolError(Exception):
    """The peer sent something that is not valid protocol."""


class ChannelClosed(ProtocolError):
    """End of stream in the middle of a frame or where one was required."""


class RemoteError(Exception):
    """The peer reported an error with an Error frame."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class Stream(Protocol):
    def read(self, n: int) -> bytes: ...

    def write(self, data: bytes) -> None: ...


def read_exact(stream: Stream, n: int) -> bytes:
    chunks = []
    left = n
    while left:
        chunk = stream.read(left)
        if not chunk:
            raise ChannelClosed(f"stream ended with {left} of {n} byte(s) outstanding")
        chunks.append(chunk)
        left -= len(chunk)
    return b"".join(chunks)


def send_magic(stream: Stream) -> None:
    stream.write(MAGIC)


def recv_magic(stream: Stream) -> None:
    got = read_exact(stream, len(MAGIC))
    if got != MAGIC:
        raise ProtocolError(f"bad magic {got!r}")


def encode_frame(tag: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(len(payload), tag) + payload


def send_frame(stream: Stream, tag: int, payload: bytes = b"") -> None:
    stream.write(encode_frame(tag, payload))


def recv_frame(stream: Stream) -> tuple[int, bytes]:
    length, tag = _HEADER.unpack(read_exact(stream, _HEADER.size))
    if tag not in TAG_NAMES:
        raise ProtocolError(f"unknown frame tag 0x{tag:02x}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    return tag, read_exact(stream, length)


def expect(frame: tuple[int, bytes], *tags: int) -> bytes:
    tag, payload = frame
    if tag == ERROR and ERROR not in tags:
        raise RemoteError(payload.decode("utf-8", "replace"))
    if tag not in tags:
        want = "/".join(TAG_NAMES[t] for t in tags)
        raise ProtocolError(f"expected {want}, got {TAG_NAMES[tag]}")
    return payload


# payload codecs

def file_request(path: str, block_size: int) -> bytes:
    raw = path.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw + struct.pack(">I", block_size)


def parse_file_request(payload: bytes) -> tuple[str, int]:
    if len(payload) < 6:
        raise ProtocolError("short FileRequest")
    (n,) = struct.unpack_from(">H", payload)
    if len(payload) != 2 + n + 4:
        raise ProtocolError("FileRequest length mismatch")
    try:
        path = payload[2:2 + n].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError("FileRequest path is not UTF-8") from e
    (block_size,) = struct.unpack_from(">I", payload, 2 + n)
    return path, block_size


def sig_header(basis_len: int, count: int) -> bytes:
    return _SIG_HEADER.pack(basis_len, count)


def parse_sig_header(payload: bytes) -> tuple[int, int]:
    if len(payload) != _SIG_HEADER.size:
        raise ProtocolError("bad SigHeader")
    return _SIG_HEADER.unpack(payload)


def sig(weak: int, strong: bytes) -> bytes:
    return _SIG.pack(weak, strong)


def parse_sig(payload: bytes) -> tuple[int, bytes]:
    if len(payload) != _SIG.size:
        raise ProtocolError("bad Sig")
    return _SIG.unpack(payload)


def copy(index: int) -> bytes:
    return _U64.pack(index)


def parse_copy(payload: bytes) -> int:
    if len(payload) != _U64.size:
        raise ProtocolError("bad Copy")
    return _U64.unpack(payload)[0]


def file_end(source_len: int, mtime: int, digest: bytes) -> bytes:
    return _FILE_END.pack(source_len, mtime, digest)


def parse_file_end(payload: bytes) -> tuple[int, int, bytes]:
    if len(payload) != _FILE_END.size:
        raise ProtocolError("bad FileEnd")
    return _FILE_END.unpack(payload)
