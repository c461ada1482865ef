"""Block-signature delta transfer and its wire protocol."""

from .agent import serve_agent
from .checksum import roll, rolling_checksums, weak_checksum
from .client import AgentSession, AgentUnavailable, SyncStats, atomic_output, receive_whole_file, sync_file
from .delta import (
    DEFAULT_BLOCK_SIZE,
    BlockSignature,
    Copy,
    CopyOutOfRange,
    Delta,
    DeltaError,
    DigestMismatch,
    Literal,
    SignatureSet,
    apply_delta,
    block_signatures,
    compute_delta,
)
from .wire import ProtocolError, RemoteError

__all__ = [
    "DEFAULT_BLOCK_SIZE",
    "AgentSession",
    "AgentUnavailable",
    "BlockSignature",
    "Copy",
    "CopyOutOfRange",
    "Delta",
    "DeltaError",
    "DigestMismatch",
    "Literal",
    "ProtocolError",
    "RemoteError",
    "SignatureSet",
    "SyncStats",
    "apply_delta",
    "atomic_output",
    "block_signatures",
    "compute_delta",
    "receive_whole_file",
    "roll",
    "rolling_checksums",
    "serve_agent",
    "sync_file",
    "weak_checksum",
]
