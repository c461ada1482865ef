"""Command line: ``remote_build [OPTIONS] SESSIONS ...`` and ``remote_build agent DIR``."""

from __future__ import annotations

import getopt
import logging
import os
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import orchestrator
from .delta_sync import serve_agent
from .delta_sync.delta import MIN_BLOCK_SIZE
from .hostkeys import VerifyResult
from .orchestrator import BuildRequest, RunConfig
from .session_graph import CatalogError, SessionCatalog, parse_catalog
from .transport import Endpoint, HostKeyFailure, ProxySpec, TransportError

EXIT_OK = 0
EXIT_BUILD_FAILED = 1
EXIT_USAGE = 2
EXIT_CONNECT = 3
EXIT_SYNC = 4

ENV_HOST = "REMOTE_BUILD_REMOTE_HOST"
ENV_BASE = "REMOTE_BUILD_REMOTE_BASE"

USAGE = """\
Usage: remote_build [OPTIONS] SESSIONS ...

  Options are:
    -B DIR       base directory for remote Isabelle installations (default:
                 $REMOTE_BUILD_REMOTE_BASE, or if former not set ~)
    -d DIR       include session directory
    -r HOST      remote host name (default: $REMOTE_BUILD_REMOTE_HOST)
    -o OPTION    add option for remote isabelle call, e.g., -o -d -o '$ISAFOR'
    -i           incremental: only synchronize heap images that are newly
                 built on the remote host (default: synchronize all session
                 heaps together with their ancestors)
    -P PROXY     connect to remote host via proxy jump; PROXY may either be a
                 HOST or a specification HOST:PORT (default PORT: 2222)
    -v           be verbose

  Build and copy heap images, observing implicit settings:

  REMOTE_BUILD_REMOTE_HOST="..."
  REMOTE_BUILD_REMOTE_BASE="..."
"""

LONG_HELP = """\
  Additional options:
    --poll-interval SECONDS   remote heap polling period (default: 2)
    --block-size BYTES        delta block size (default: 2048)
    --local-root DIR          local heap directory
                              (default: $ISABELLE_HOME_USER/heaps)
    --heap-dir DIR            heap directory below the remote base (default: heaps)
    --known-hosts FILE        known_hosts file (default: ~/.ssh/known_hosts)
    --identity FILE           private key file (repeatable)
    --agent-command CMD       remote sync agent command (default: remote_build agent)
    --sync-concurrency N      parallel heap transfers (default: 1)
    --settings FILE           settings file with KEY="value" lines
"""

SHORT_OPTS = "B:d:r:o:iP:v"
LONG_OPTS = [
    "poll-interval=",
    "block-size=",
    "local-root=",
    "heap-dir=",
    "known-hosts=",
    "identity=",
    "agent-command=",
    "sync-concurrency=",
    "settings=",
    "help",
]


class UsageError(Exception):
    pass


@dataclass
class ParsedInvocation:
    mode: str  # "build", "agent" or "usage"
    request: BuildRequest | None = None
    config: RunConfig = field(default_factory=RunConfig)
    agent_root: str | None = None
    warnings: list[str] = field(default_factory=list)
    message: str = ""


def usage() -> str:
    return USAGE


def _positive(value: str, name: str, kind=float):
    try:
        v = kind(value)
    except ValueError:
        raise UsageError(f"bad value for {name}: {value!r}") from None
    if v <= 0:
        raise UsageError(f"{name} must be positive")
    return v


def parse_proxy(spec: str) -> ProxySpec:
    try:
        return ProxySpec.parse(spec)
    except ValueError as e:
        raise UsageError(f"bad proxy specification {spec!r}: {e}") from None


def read_settings(path: str | os.PathLike) -> dict[str, str]:
    """``KEY="value"`` assignments from a shell-style settings file."""
    out = {}
    try:
        text = Path(path).expanduser().read_text(encoding="utf-8")
    except OSError:
        return out
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = key.strip().removeprefix("export ").strip()
        try:
            words = shlex.split(value)
        except ValueError:
            continue
        out[key] = words[0] if words else ""
    return out


def parse_args(argv: Sequence[str], env: Mapping[str, str]) -> ParsedInvocation:
    """Turn argv and environment into a build request, an agent call, or usage."""
    argv = list(argv)
    try:
        return _parse(argv, env)
    except UsageError as e:
        return ParsedInvocation("usage", message=str(e))


def _parse(argv: list[str], env: Mapping[str, str]) -> ParsedInvocation:
    if argv[:1] == ["agent"]:
        if len(argv) != 2:
            raise UsageError("agent mode takes exactly one directory")
        return ParsedInvocation("agent", agent_root=argv[1])
    try:
        opts, sessions = getopt.getopt(argv, SHORT_OPTS, LONG_OPTS)
    except getopt.GetoptError as e:
        raise UsageError(str(e)) from None

    base = host = None
    dirs: list[str] = []
    remote_opts: list[str] = []
    incremental = verbose = False
    proxy = None
    config = RunConfig()
    identities: list[str] = []
    settings: dict[str, str] = {}
    local_root = None

    for opt, val in opts:
        if opt == "-B":
            base = val
        elif opt == "-d":
            dirs.append(val)
        elif opt == "-r":
            host = val
        elif opt == "-o":
            remote_opts.append(val)
        elif opt == "-i":
            incremental = True
        elif opt == "-P":
            proxy = parse_proxy(val)
        elif opt == "-v":
            verbose = True
        elif opt == "--help":
            return ParsedInvocation("usage")
        elif opt == "--poll-interval":
            config.poll_interval = _positive(val, opt)
        elif opt == "--block-size":
            config.block_size = _positive(val, opt, int)
            if config.block_size < MIN_BLOCK_SIZE:
                raise UsageError(f"--block-size must be at least {MIN_BLOCK_SIZE}")
        elif opt == "--local-root":
            local_root = val
        elif opt == "--heap-dir":
            config.heap_dir = val
        elif opt == "--known-hosts":
            config.known_hosts = val
        elif opt == "--identity":
            identities.append(val)
        elif opt == "--agent-command":
            config.agent_command = tuple(shlex.split(val))
        elif opt == "--sync-concurrency":
            config.sync_concurrency = _positive(val, opt, int)
        elif opt == "--settings":
            settings = read_settings(val)

    if identities:
        config.identity_files = identities
    if local_root is None:
        home_user = env.get("ISABELLE_HOME_USER") or settings.get("ISABELLE_HOME_USER") or "~/.isabelle"
        local_root = str(Path(home_user) / "heaps")
    config.local_root = Path(local_root).expanduser()

    # flag, then environment, then settings file
    host = host or env.get(ENV_HOST) or settings.get(ENV_HOST)
    base = base or env.get(ENV_BASE) or settings.get(ENV_BASE) or "~"
    if not sessions:
        raise UsageError("no sessions given")
    if not host:
        raise UsageError(f"no remote host: use -r HOST or set {ENV_HOST}")
    try:
        remote = Endpoint.parse(host)
    except ValueError as e:
        raise UsageError(str(e)) from None
    req = BuildRequest(
        sessions=list(sessions),
        remote=remote,
        session_dirs=dirs,
        remote_base=base,
        remote_opts=remote_opts,
        incremental=incremental,
        proxy=proxy,
        verbose=verbose,
    )
    return ParsedInvocation("build", request=req, config=config)


def to_argv(req: BuildRequest) -> list[str]:
    """Render a request back to the short-flag command line."""
    argv = ["-B", req.remote_base, "-r", str(req.remote.user) + "@" + req.remote.host]
    for d in req.session_dirs:
        argv += ["-d", d]
    for o in req.remote_opts:
        argv += ["-o", o]
    if req.incremental:
        argv.append("-i")
    if req.proxy is not None:
        argv += ["-P", str(req.proxy)]
    if req.verbose:
        argv.append("-v")
    return argv + list(req.sessions)


def _load_catalog(req: BuildRequest) -> SessionCatalog:
    if not req.session_dirs:
        return SessionCatalog({})
    return parse_catalog(os.path.expandvars(os.path.expanduser(d)) for d in req.session_dirs)


def main(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None, connector=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    env = os.environ if env is None else env
    inv = parse_args(argv, env)
    if inv.mode == "usage":
        if inv.message:
            print(f"remote_build: {inv.message}\n", file=sys.stderr)
            print(usage(), file=sys.stderr)
            return EXIT_USAGE
        print(usage() + "\n" + LONG_HELP)
        return EXIT_OK
    if inv.mode == "agent":
        return run_agent(inv.agent_root)

    req = inv.request
    logging.basicConfig(level=logging.INFO if req.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        catalog = _load_catalog(req)
        if not req.session_dirs:
            # no catalog to take ancestry from: the targets stand alone
            catalog = SessionCatalog.from_edges({s: None for s in req.sessions})
        elif not req.incremental:
            for s in req.sessions:
                catalog[s]
    except (CatalogError, OSError) as e:
        print(f"remote_build: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        report = orchestrator.run(req, catalog, inv.config, connector)
    except HostKeyFailure as e:
        print(f"remote_build: {e}", file=sys.stderr)
        if e.result is VerifyResult.UNSUPPORTED_KEY_TYPE:
            print("remote_build: UnsupportedKeyType", file=sys.stderr)
        return EXIT_CONNECT
    except TransportError as e:
        print(f"remote_build: {e}", file=sys.stderr)
        return EXIT_CONNECT
    except KeyboardInterrupt:
        print("remote_build: interrupted", file=sys.stderr)
        return EXIT_BUILD_FAILED
    except Exception as e:  # never an unhandled abort
        print(f"remote_build: unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SYNC

    if report.exit_status != 0:
        return EXIT_BUILD_FAILED
    if report.sync_failures:
        for s, err in report.sync_failures.items():
            print(f"remote_build: {s}: {err}", file=sys.stderr)
        return EXIT_SYNC
    return EXIT_OK


class _StdioChannel:
    def __init__(self) -> None:
        self.inp = sys.stdin.buffer
        self.out = sys.stdout.buffer

    def read(self, n: int) -> bytes:
        return self.inp.read1(n)

    def write(self, data: bytes) -> None:
        self.out.write(data)
        self.out.flush()


def run_agent(root: str) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    serve_agent(_StdioChannel(), os.path.expanduser(root))
    return EXIT_OK


def entry() -> None:
    sys.exit(main())
