"""Build Isabelle-style sessions on a remote host and pull heap images back
incrementally with a block-signature delta transfer."""

from .orchestrator import BuildReport, BuildRequest, RunConfig, build_command, run
from .session_graph import SessionCatalog, ancestors, parse_catalog, sync_set

__version__ = "0.1.0"

__all__ = [
    "BuildReport",
    "BuildRequest",
    "RunConfig",
    "SessionCatalog",
    "ancestors",
    "build_command",
    "parse_catalog",
    "run",
    "sync_set",
]
