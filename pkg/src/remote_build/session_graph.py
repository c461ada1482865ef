"""Session catalogs and the sets of sessions whose heaps need syncing.

A catalog directory holds a ``CATALOG`` file with one declaration per line::

    # comment
    session Pure
    session HOL = Pure

Every session has at most one parent, so ancestry is a chain and the
catalog as a whole is a forest.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

CATALOG_FILE = "CATALOG"
NAME_RE = re.compile(r"[A-Za-z0-9_.-]+\Z")


class CatalogError(Exception):
    """Base class for catalog problems."""


class MissingCatalog(CatalogError):
    def __init__(self, dir: Path) -> None:
        super().__init__(f"no {CATALOG_FILE} file in session directory {dir}")
        self.dir = dir


class DuplicateSession(CatalogError):
    def __init__(self, name: str) -> None:
        super().__init__(f"duplicate session {name!r}")
        self.name = name


class UnknownParent(CatalogError):
    def __init__(self, child: str, parent: str) -> None:
        super().__init__(f"session {child!r} has unknown parent {parent!r}")
        self.child = child
        self.parent = parent


class CycleDetected(CatalogError):
    def __init__(self, names: list[str]) -> None:
        super().__init__("cyclic session ancestry: " + " -> ".join(names))
        self.names = names


class CatalogSyntaxError(CatalogError):
    def __init__(self, file: Path, line: int, text: str) -> None:
        super().__init__(f"{file}:{line}: cannot parse {text!r}")
        self.file = file
        self.line = line


class UnknownSession(CatalogError, KeyError):
    def __init__(self, name: str) -> None:
        CatalogError.__init__(self, f"unknown session {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Session:
    name: str
    parent: str | None
    dir: Path


@dataclass(frozen=True)
class SessionCatalog:
    sessions: Mapping[str, Session]
    root_dirs: tuple[Path, ...] = ()

    def __contains__(self, name: object) -> bool:
        return name in self.sessions

    def __len__(self) -> int:
        return len(self.sessions)

    def __getitem__(self, name: str) -> Session:
        try:
            return self.sessions[name]
        except KeyError:
            raise UnknownSession(name) from None

    @classmethod
    def from_edges(cls, edges: Mapping[str, str | None], dir: Path = Path(".")) -> "SessionCatalog":
        """Build a catalog in memory; checks the same invariants as parsing."""
        sessions = {n: Session(n, p, dir) for n, p in edges.items()}
        _check_graph(sessions)
        return cls(sessions, (dir,))


def _parse_file(path: Path) -> list[tuple[str, str | None, int]]:
    decls = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        if tokens[0] != "session":
            raise CatalogSyntaxError(path, lineno, raw)
        if len(tokens) == 2:
            name, parent = tokens[1], None
        elif len(tokens) == 4 and tokens[2] == "=":
            name, parent = tokens[1], tokens[3]
        else:
            raise CatalogSyntaxError(path, lineno, raw)
        if not NAME_RE.match(name) or (parent is not None and not NAME_RE.match(parent)):
            raise CatalogSyntaxError(path, lineno, raw)
        decls.append((name, parent, lineno))
    return decls


def _check_graph(sessions: Mapping[str, Session]) -> None:
    for s in sessions.values():
        if s.parent is not None and s.parent not in sessions:
            raise UnknownParent(s.name, s.parent)
    # out-degree <= 1, so a cycle is found by walking parent pointers
    done: set[str] = set()
    for start in sorted(sessions):
        path: list[str] = []
        on_path: set[str] = set()
        cur: str | None = start
        while cur is not None and cur not in done:
            if cur in on_path:
                cycle = path[path.index(cur):]
                raise CycleDetected(sorted(cycle))
            path.append(cur)
            on_path.add(cur)
            cur = sessions[cur].parent
        done.update(path)


def parse_catalog(root_dirs: Iterable[str | Path]) -> SessionCatalog:
    """Load and merge the catalogs of all session directories."""
    dirs = tuple(Path(d) for d in root_dirs)
    sessions: dict[str, Session] = {}
    for d in dirs:
        catalog = d / CATALOG_FILE
        if not catalog.is_file():
            raise MissingCatalog(d)
        for name, parent, _ in _parse_file(catalog):
            if name in sessions:
                raise DuplicateSession(name)
            sessions[name] = Session(name, parent, d)
    _check_graph(sessions)
    return SessionCatalog(sessions, dirs)


def ancestors(catalog: SessionCatalog, name: str) -> list[str]:
    """Return the chain from the root session down to ``name`` inclusive."""
    chain = []
    cur: str | None = name
    while cur is not None:
        chain.append(cur)
        cur = catalog[cur].parent
    chain.reverse()
    return chain


def _depth(catalog: SessionCatalog, name: str) -> int:
    return len(ancestors(catalog, name)) if name in catalog else 0


def topological(catalog: SessionCatalog, names: Iterable[str]) -> list[str]:
    """Order ``names`` parents-first; ties and unknown names sort by name.

    Ordering by depth is a valid topological order for a forest.
    """
    return sorted(set(names), key=lambda n: (_depth(catalog, n), n))


def sync_set(
    catalog: SessionCatalog,
    targets: Iterable[str],
    incremental: bool,
    newly_built: Iterable[str] = (),
) -> list[str]:
    """Sessions to synchronize, parents before children.

    In incremental mode this is just ``newly_built``. Names the catalog does
    not know are kept (the remote may know more sessions than we do) but
    logged.
    """
    targets = list(targets)
    for t in targets:
        if t not in catalog:
            raise UnknownSession(t)
    if incremental:
        new = set(newly_built)
        for n in sorted(new - set(catalog.sessions)):
            log.warning("newly built session %s is not in the local catalog", n)
        return topological(catalog, new)
    wanted: set[str] = set()
    for t in targets:
        wanted.update(ancestors(catalog, t))
    return topological(catalog, wanted)
