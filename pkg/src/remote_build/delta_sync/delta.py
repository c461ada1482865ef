"""Block signatures, delta computation and delta application."""

from __future__ import annotations

import hashlib
import io
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, NamedTuple, Union

import numpy as np

from .checksum import block_checksums, rolling_checksums

DEFAULT_BLOCK_SIZE = 2048
MIN_BLOCK_SIZE = 64
LITERAL_CHUNK = 64 * 1024
DIGEST_SIZE = 32

Buffer = Union[bytes, bytearray, memoryview]


class DeltaError(Exception):
    pass


class CopyOutOfRange(DeltaError):
    def __init__(self, index: int, count: int) -> None:
        super().__init__(f"copy of block {index} but basis has {count} block(s)")
        self.index = index


class DigestMismatch(DeltaError):
    def __init__(self, expected: bytes, actual: bytes) -> None:
        super().__init__(f"whole-file digest mismatch: expected {expected.hex()[:16]}…, got {actual.hex()[:16]}…")
        self.expected = expected
        self.actual = actual


def strong_digest(data: Buffer) -> bytes:
    return hashlib.sha256(data).digest()


class BlockSignature(NamedTuple):
    index: int
    weak: int
    strong: bytes


@dataclass
class SignatureSet:
    block_size: int
    basis_len: int
    weak: list[int] = field(default_factory=list)
    strong: list[bytes] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.block_size < MIN_BLOCK_SIZE:
            raise ValueError(f"block size must be at least {MIN_BLOCK_SIZE}, got {self.block_size}")
        if len(self.weak) != len(self.strong):
            raise ValueError("weak and strong signature counts differ")

    def __len__(self) -> int:
        return len(self.weak)

    @property
    def signatures(self) -> list[BlockSignature]:
        return [BlockSignature(i, w, s) for i, (w, s) in enumerate(zip(self.weak, self.strong))]

    def block_len(self, index: int) -> int:
        return min(self.block_size, self.basis_len - index * self.block_size)


class Copy(NamedTuple):
    index: int


class Literal(NamedTuple):
    data: bytes


Op = Union[Copy, Literal]


@dataclass
class Delta:
    ops: list[Op]
    source_len: int
    source_digest: bytes
    block_size: int = DEFAULT_BLOCK_SIZE
    basis_len: int = 0

    @property
    def literal_bytes(self) -> int:
        return sum(len(op.data) for op in self.ops if isinstance(op, Literal))

    @property
    def copied_bytes(self) -> int:
        bs, n = self.block_size, self.basis_len
        return sum(min(bs, n - op.index * bs) for op in self.ops if isinstance(op, Copy))


def _as_buffer(data) -> memoryview:
    if hasattr(data, "read"):
        data = data.read()
    return memoryview(data).cast("B")


def block_signatures(basis, block_size: int = DEFAULT_BLOCK_SIZE) -> SignatureSet:
    """Signatures of consecutive ``block_size`` blocks of ``basis``.

    ``basis`` is any bytes-like object or a binary file.
    """
    if block_size < MIN_BLOCK_SIZE:
        raise ValueError(f"block size must be at least {MIN_BLOCK_SIZE}, got {block_size}")
    buf = _as_buffer(basis)
    n = len(buf)
    weak = block_checksums(buf, block_size).tolist()
    strong = [strong_digest(buf[i:i + block_size]) for i in range(0, n, block_size)]
    return SignatureSet(block_size, n, weak, strong)


def _literals(buf: memoryview, start: int, end: int) -> Iterable[Literal]:
    for i in range(start, end, LITERAL_CHUNK):
        yield Literal(bytes(buf[i:min(end, i + LITERAL_CHUNK)]))


def compute_delta(source, sigs: SignatureSet) -> Delta:
    """Greedy rsync-style matching of ``source`` against ``sigs``.

    Every window offset gets a weak checksum; only offsets whose weak value
    occurs among the basis blocks are confirmed with the strong digest.
    """
    buf = _as_buffer(source)
    n = len(buf)
    L = sigs.block_size
    full = sigs.basis_len // L
    ops: list[Op] = []
    p = 0

    if full and n >= L:
        by_digest: dict[bytes, int] = {}
        for i in range(full):
            by_digest.setdefault(sigs.strong[i], i)
        table = np.unique(np.asarray(sigs.weak[:full], dtype=np.uint32))
        windows = rolling_checksums(np.frombuffer(buf, dtype=np.uint8), L)
        cands = np.flatnonzero(np.isin(windows, table, assume_unique=False)).tolist()
        i = 0
        while i < len(cands):
            c = cands[i]
            idx = by_digest.get(strong_digest(buf[c:c + L]))
            if idx is None:
                i += 1
                continue
            ops.extend(_literals(buf, p, c))
            ops.append(Copy(idx))
            p = c + L
            i = bisect_left(cands, p, i + 1)

    tail = sigs.basis_len - full * L
    if tail and n - p >= tail and strong_digest(buf[n - tail:]) == sigs.strong[full]:
        ops.extend(_literals(buf, p, n - tail))
        ops.append(Copy(full))
        p = n
    ops.extend(_literals(buf, p, n))
    return Delta(ops, n, strong_digest(buf), L, sigs.basis_len)


class DeltaWriter:
    """Rebuild a file from a basis and a stream of ops, hashing as it goes."""

    def __init__(self, basis: BinaryIO, out: BinaryIO, block_size: int, basis_len: int) -> None:
        self.basis = basis
        self.out = out
        self.block_size = block_size
        self.basis_len = basis_len
        self.count = -(-basis_len // block_size)
        self.hash = hashlib.sha256()
        self.written = 0
        self.literal_bytes = 0
        self.copied_bytes = 0

    def _emit(self, data: bytes) -> None:
        self.out.write(data)
        self.hash.update(data)
        self.written += len(data)

    def copy(self, index: int) -> None:
        if not 0 <= index < self.count:
            raise CopyOutOfRange(index, self.count)
        length = min(self.block_size, self.basis_len - index * self.block_size)
        self.basis.seek(index * self.block_size)
        data = self.basis.read(length)
        if len(data) != length:
            raise DeltaError(f"basis changed underneath: short read of block {index}")
        self._emit(data)
        self.copied_bytes += length

    def literal(self, data: bytes) -> None:
        self._emit(data)
        self.literal_bytes += len(data)

    def apply(self, op: Op) -> None:
        if isinstance(op, Copy):
            self.copy(op.index)
        else:
            self.literal(op.data)

    def finish(self, source_len: int, digest: bytes) -> None:
        actual = self.hash.digest()
        if self.written != source_len or actual != digest:
            raise DigestMismatch(digest, actual)


def apply_delta(basis, delta: Delta) -> bytes:
    """Reconstruct the source of ``delta``; raises on a digest mismatch."""
    if not hasattr(basis, "seek"):
        basis = io.BytesIO(bytes(basis))
    basis_len = delta.basis_len
    if not basis_len:
        basis.seek(0, io.SEEK_END)
        basis_len = basis.tell()
    out = io.BytesIO()
    writer = DeltaWriter(basis, out, delta.block_size, basis_len)
    for op in delta.ops:
        writer.apply(op)
    writer.finish(delta.source_len, delta.source_digest)
    return out.getvalue()
