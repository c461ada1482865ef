"""known_hosts parsing and the RSA-only host key policy."""

from __future__ import annotations

import base64
import binascii
import enum
import logging
import os
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_KNOWN_HOSTS = Path("~/.ssh/known_hosts")


class KeyType(enum.Enum):
    RSA = "ssh-rsa"
    ECDSA = "ecdsa"
    ED25519 = "ssh-ed25519"
    OTHER = "other"

    @classmethod
    def from_name(cls, name: str) -> "KeyType":
        if name in ("ssh-rsa", "rsa-sha2-256", "rsa-sha2-512"):
            return cls.RSA
        if name.startswith("ecdsa-sha2-"):
            return cls.ECDSA
        if name == "ssh-ed25519":
            return cls.ED25519
        return cls.OTHER


@dataclass(frozen=True)
class KnownHostsEntry:
    host_pattern: str
    key_type: KeyType
    key_blob: str
    key_type_name: str = ""
    comment: str = ""

    @property
    def key_bytes(self) -> bytes:
        return base64.b64decode(self.key_blob)

    def to_line(self) -> str:
        name = self.key_type_name or self.key_type.value
        line = f"{self.host_pattern} {name} {self.key_blob}"
        return f"{line} {self.comment}" if self.comment else line


class VerifyResult(enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    UNKNOWN_HOST = "UnknownHost"
    UNSUPPORTED_KEY_TYPE = "UnsupportedKeyType"

    @property
    def ok(self) -> bool:
        return self is VerifyResult.ACCEPTED


def rsa_remedy(host: str, port: int = 22) -> str:
    target = host if port == 22 else f"[{host}]:{port}"
    scan = f"ssh-keyscan -t rsa {host}" if port == 22 else f"ssh-keyscan -t rsa -p {port} {host}"
    return (
        f"only RSA host keys are supported; install an RSA key for {target} "
        f"in ~/.ssh/known_hosts, e.g. `{scan} >> ~/.ssh/known_hosts`"
    )


def describe(result: VerifyResult, host: str, port: int = 22) -> str:
    target = host if port == 22 else f"[{host}]:{port}"
    if result is VerifyResult.UNKNOWN_HOST:
        return f"no known_hosts entry for {target}; " + rsa_remedy(host, port)
    if result is VerifyResult.UNSUPPORTED_KEY_TYPE:
        return f"{target} presented a non-RSA host key; " + rsa_remedy(host, port)
    if result is VerifyResult.REJECTED:
        return (
            f"host key for {target} does not match known_hosts "
            "(if the remote host changed, its known_hosts entry has to change too)"
        )
    return f"host key for {target} accepted"


def parse_known_hosts(text: str) -> list[KnownHostsEntry]:
    """Parse known_hosts text leniently; bad lines are logged and skipped."""
    entries = []
    bad = 0
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(None, 3)
        if len(fields) < 3 or fields[0].startswith("@"):
            bad += 1
            continue
        patterns, type_name, blob = fields[:3]
        comment = fields[3] if len(fields) > 3 else ""
        try:
            base64.b64decode(blob, validate=True)
        except binascii.Error:
            bad += 1
            continue
        for pattern in patterns.split(","):
            if pattern:
                entries.append(
                    KnownHostsEntry(pattern, KeyType.from_name(type_name), blob, type_name, comment)
                )
    if bad:
        log.warning("skipped %d malformed known_hosts line(s)", bad)
    return entries


def load_known_hosts(path: str | os.PathLike | None = None) -> list[KnownHostsEntry]:
    p = Path(path if path is not None else DEFAULT_KNOWN_HOSTS).expanduser()
    try:
        return parse_known_hosts(p.read_text(encoding="utf-8", errors="replace"))
    except FileNotFoundError:
        return []


def host_key_pattern(host: str, port: int) -> str:
    return host if port == 22 else f"[{host}]:{port}"


def lookup(entries: list[KnownHostsEntry], host: str, port: int = 22) -> list[KnownHostsEntry]:
    """Entries stored for ``host`` on ``port``; hashed patterns never match."""
    if not 1 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    want = host_key_pattern(host, port).lower()
    return [e for e in entries if not e.host_pattern.startswith("|") and e.host_pattern.lower() == want]


def verify(stored: list[KnownHostsEntry], presented_type: KeyType, presented_blob: bytes) -> VerifyResult:
    if not stored:
        return VerifyResult.UNKNOWN_HOST
    if presented_type is not KeyType.RSA:
        return VerifyResult.UNSUPPORTED_KEY_TYPE
    for e in stored:
        if e.key_type is KeyType.RSA and e.key_bytes == presented_blob:
            return VerifyResult.ACCEPTED
    return VerifyResult.REJECTED
